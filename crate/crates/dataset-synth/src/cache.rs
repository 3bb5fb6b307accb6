//! Precomputed flow-map cache: one RCNF file per (sample, resolution)
//! plus a JSON index keyed by content hashes, so reruns skip
//! up-to-date entries and regenerate exactly what is missing or stale.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flow_extraction::{
    assemble_flow_map, estimate_flow, read_flow_map, write_flow_map, FlowMap, FlowSolverConfig,
};

use crate::error::{DataError, Result};
use crate::manifest::{Manifest, SampleRecord};

pub const CACHE_INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub path: String,
    pub input_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub version: u32,
    /// sample_id -> resolution (decimal string) -> entry
    pub entries: BTreeMap<String, BTreeMap<String, CacheEntry>>,
}

impl Default for CacheIndex {
    fn default() -> Self {
        CacheIndex {
            version: CACHE_INDEX_VERSION,
            entries: BTreeMap::new(),
        }
    }
}

/// Handle to a cache directory with its loaded index.
#[derive(Debug, Clone)]
pub struct FlowCache {
    pub dir: PathBuf,
    pub index: CacheIndex,
}

impl FlowCache {
    pub fn load(dir: &Path) -> Result<FlowCache> {
        let index_path = dir.join("index.json");
        let index = if index_path.exists() {
            let parsed: CacheIndex = serde_json::from_reader(File::open(&index_path)?)?;
            if parsed.version != CACHE_INDEX_VERSION {
                return Err(DataError::Cache(format!(
                    "unsupported cache index version {}",
                    parsed.version
                )));
            }
            parsed
        } else {
            CacheIndex::default()
        };
        Ok(FlowCache {
            dir: dir.to_path_buf(),
            index,
        })
    }

    fn save_index(&self) -> Result<()> {
        let tmp = self.dir.join("index.json.tmp");
        serde_json::to_writer_pretty(File::create(&tmp)?, &self.index)?;
        std::fs::rename(&tmp, self.dir.join("index.json"))?;
        Ok(())
    }

    pub fn get(&self, sample_id: &str, resolution: usize) -> Result<FlowMap> {
        let entry = self
            .index
            .entries
            .get(sample_id)
            .and_then(|m| m.get(&resolution.to_string()))
            .ok_or_else(|| {
                DataError::Cache(format!(
                    "no cached flow for sample {sample_id:?} at resolution {resolution}"
                ))
            })?;
        Ok(read_flow_map(&self.dir.join(&entry.path))?)
    }
}

fn sanitized_name(sample_id: &str) -> String {
    sample_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn file_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Hash of everything that determines one cached flow map: source
/// frame bytes, the solver configuration, and the target resolution.
fn input_hash(
    manifest: &Manifest,
    record: &SampleRecord,
    cfg: &FlowSolverConfig,
    resolution: usize,
) -> Result<String> {
    let mut hasher = Sha256::new();
    if let (Some(onset), Some(apex)) = (&record.onset_path, &record.apex_path) {
        hasher.update(file_bytes(&manifest.base_dir.join(onset))?);
        hasher.update(file_bytes(&manifest.base_dir.join(apex))?);
    } else if let Some(dir) = &record.sequence_dir {
        let dir = manifest.base_dir.join(dir);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
            .collect();
        paths.sort();
        for p in paths {
            hasher.update(file_bytes(&p)?);
        }
        hasher.update(record.onset_index.unwrap_or(0).to_le_bytes());
        if let Some(a) = record.apex_index {
            hasher.update(a.to_le_bytes());
        }
    }
    hasher.update(
        format!(
            "levels={};scale={};warps={};irls={};sigma={};lambda={};median={};sweeps={};r={resolution}",
            cfg.pyramid_levels,
            cfg.pyramid_scale,
            cfg.outer_warps,
            cfg.irls_iters,
            cfg.lorentzian_sigma,
            cfg.smoothness_lambda,
            cfg.median_filter_radius,
            cfg.jacobi_sweeps
        )
        .as_bytes(),
    );
    Ok(format!("{:x}", hasher.finalize()))
}

/// Ensure the cache holds a flow map for every (sample, resolution)
/// pair. The flow field is solved once per sample at native resolution
/// and resized per target; entries whose hash and file are intact are
/// skipped, so reruns are idempotent.
pub fn precompute_flows(
    manifest: &Manifest,
    solver_cfg: &FlowSolverConfig,
    resolutions: &[usize],
    out_dir: &Path,
) -> Result<FlowCache> {
    if resolutions.is_empty() {
        return Err(DataError::Cache("no target resolutions".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut cache = FlowCache::load(out_dir)?;

    // Reject sample ids that collide after filename sanitization.
    let mut seen: BTreeMap<String, &str> = BTreeMap::new();
    for r in &manifest.records {
        let name = sanitized_name(&r.sample_id);
        if let Some(other) = seen.insert(name.clone(), &r.sample_id) {
            return Err(DataError::Cache(format!(
                "sample ids {:?} and {:?} collide as file name {name:?}",
                other, r.sample_id
            )));
        }
    }

    for record in &manifest.records {
        let with_context = |e: DataError| DataError::for_sample(&record.sample_id, e);
        let mut needed: Vec<(usize, String)> = Vec::new();
        for &res in resolutions {
            let hash = input_hash(manifest, record, solver_cfg, res).map_err(&with_context)?;
            let fresh = cache
                .index
                .entries
                .get(&record.sample_id)
                .and_then(|m| m.get(&res.to_string()))
                .map(|e| e.input_hash == hash && out_dir.join(&e.path).exists())
                .unwrap_or(false);
            if !fresh {
                needed.push((res, hash));
            }
        }
        if needed.is_empty() {
            continue;
        }
        let (onset, apex) = manifest.load_frames(record)?;
        let flow = estimate_flow(&onset, &apex, solver_cfg).map_err(|e| with_context(e.into()))?;
        for (res, hash) in needed {
            let map = assemble_flow_map(&flow, res).map_err(|e| with_context(e.into()))?;
            let rel = format!("{}_r{res}.rcnf", sanitized_name(&record.sample_id));
            write_flow_map(&out_dir.join(&rel), &map).map_err(|e| with_context(e.into()))?;
            cache
                .index
                .entries
                .entry(record.sample_id.clone())
                .or_default()
                .insert(res.to_string(), CacheEntry {
                    path: rel,
                    input_hash: hash,
                });
        }
    }
    cache.save_index()?;
    Ok(cache)
}
