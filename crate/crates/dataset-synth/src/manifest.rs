use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flow_extraction::{locate_apex, read_frame, Frame};

use crate::error::{DataError, Result};

/// The three composite emotion classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
    Surprise,
}

pub const NUM_CLASSES: usize = 3;

impl Label {
    pub const ALL: [Label; 3] = [Label::Negative, Label::Positive, Label::Surprise];

    pub fn index(&self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
            Label::Surprise => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
            Label::Surprise => "surprise",
        }
    }
}

/// Ground-truth motion disk in normalized coordinates (synthetic data
/// only; used for CAM scoring).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionRegion {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl MotionRegion {
    pub fn contains(&self, x_norm: f64, y_norm: f64) -> bool {
        let dx = x_norm - self.cx;
        let dy = y_norm - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// One labeled micro-expression sample. Either an onset/apex path pair
/// or a frame-sequence directory (with optional explicit indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub subject: String,
    pub domain: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apex_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apex_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_region: Option<MotionRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub version: u32,
    pub seed: u64,
    pub generator: String,
    #[serde(default)]
    pub domains: BTreeMap<String, serde_json::Value>,
}

/// A full dataset description plus the directory its paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub meta: Option<ManifestMeta>,
    pub records: Vec<SampleRecord>,
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ManifestLine {
    Meta(ManifestMeta),
    Sample(SampleRecord),
}

impl Manifest {
    pub fn new(meta: Option<ManifestMeta>, records: Vec<SampleRecord>, base_dir: PathBuf) -> Result<Self> {
        let m = Manifest {
            meta,
            records,
            base_dir,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(DataError::Manifest("no sample records".into()));
        }
        let mut ids = BTreeSet::new();
        let mut subject_domain: BTreeMap<&str, &str> = BTreeMap::new();
        for r in &self.records {
            if !ids.insert(r.sample_id.as_str()) {
                return Err(DataError::Manifest(format!(
                    "duplicate sample_id {:?}",
                    r.sample_id
                )));
            }
            match subject_domain.get(r.subject.as_str()) {
                Some(&d) if d != r.domain => {
                    return Err(DataError::Manifest(format!(
                        "subject {:?} appears in domains {:?} and {:?}",
                        r.subject, d, r.domain
                    )));
                }
                _ => {
                    subject_domain.insert(&r.subject, &r.domain);
                }
            }
            let has_pair = r.onset_path.is_some() && r.apex_path.is_some();
            let has_seq = r.sequence_dir.is_some();
            if !has_pair && !has_seq {
                return Err(DataError::Manifest(format!(
                    "sample {:?} needs onset/apex paths or a sequence_dir",
                    r.sample_id
                )));
            }
        }
        Ok(())
    }

    /// Distinct subjects in sorted order (the LOSO fold order).
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.subject.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn domains(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.domain.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Resolve a record to its onset/apex frame pair. Sequence records
    /// without an explicit apex index fall back to the apex-spotting
    /// surrogate.
    pub fn load_frames(&self, record: &SampleRecord) -> Result<(Frame, Frame)> {
        let with_context = |e: DataError| DataError::for_sample(&record.sample_id, e);
        if let (Some(onset), Some(apex)) = (&record.onset_path, &record.apex_path) {
            let onset = read_frame(&self.base_dir.join(onset)).map_err(|e| with_context(e.into()))?;
            let apex = read_frame(&self.base_dir.join(apex)).map_err(|e| with_context(e.into()))?;
            return Ok((onset, apex));
        }
        let dir = self.base_dir.join(record.sequence_dir.as_ref().unwrap());
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| with_context(e.into()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
            .collect();
        paths.sort();
        if paths.len() < 2 {
            return Err(with_context(DataError::Manifest(format!(
                "sequence dir {dir:?} holds {} frames, need at least 2",
                paths.len()
            ))));
        }
        let frames: Vec<Frame> = paths
            .iter()
            .map(|p| read_frame(p))
            .collect::<flow_extraction::Result<_>>()
            .map_err(|e| with_context(e.into()))?;
        let onset_index = record.onset_index.unwrap_or(0);
        if onset_index >= frames.len() {
            return Err(with_context(DataError::Manifest(format!(
                "onset index {onset_index} out of range for {} frames",
                frames.len()
            ))));
        }
        let apex_index = match record.apex_index {
            Some(i) if i < frames.len() => i,
            Some(i) => {
                return Err(with_context(DataError::Manifest(format!(
                    "apex index {i} out of range for {} frames",
                    frames.len()
                ))))
            }
            None => locate_apex(&frames, onset_index).map_err(|e| with_context(e.into()))?,
        };
        Ok((frames[onset_index].clone(), frames[apex_index].clone()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        if let Some(meta) = &self.meta {
            serde_json::to_writer(&mut w, &ManifestLine::Meta(meta.clone()))?;
            w.write_all(b"\n")?;
        }
        for r in &self.records {
            serde_json::to_writer(&mut w, &ManifestLine::Sample(r.clone()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Load and validate a JSON-lines manifest. Paths inside resolve
/// relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let reader = BufReader::new(File::open(path)?);
    let mut meta = None;
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| {
            DataError::Manifest(format!("line {}: {e}", lineno + 1))
        })?;
        match parsed {
            ManifestLine::Meta(m) => {
                if meta.is_some() {
                    return Err(DataError::Manifest("duplicate meta line".into()));
                }
                meta = Some(m);
            }
            ManifestLine::Sample(r) => records.push(r),
        }
    }
    Manifest::new(meta, records, base_dir)
}
