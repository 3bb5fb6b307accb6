//! RCNF flow-map files: magic `RCNF`, little-endian u32 version,
//! height, width, channels (always 3), then `H*W*3` little-endian
//! IEEE-754 binary32 values, row-major, channel-interleaved `[Vx,Vy,Vz]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FlowError, Result};
use crate::flowmap::FlowMap;

pub const RCNF_MAGIC: &[u8; 4] = b"RCNF";
pub const RCNF_VERSION: u32 = 1;

pub fn write_flow_map(path: &Path, map: &FlowMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RCNF_MAGIC)?;
    for v in [
        RCNF_VERSION,
        map.resolution as u32,
        map.resolution as u32,
        3u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in map.interleaved() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flow_map(path: &Path) -> Result<FlowMap> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| FlowError::Corrupt("truncated RCNF header".into()))?;
    if &magic != RCNF_MAGIC {
        return Err(FlowError::Corrupt(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32buf)
            .map_err(|_| FlowError::Corrupt("truncated RCNF header".into()))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r)?;
    if version != RCNF_VERSION {
        return Err(FlowError::Corrupt(format!("unsupported version {version}")));
    }
    let height = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let channels = read_u32(&mut r)? as usize;
    if channels != 3 {
        return Err(FlowError::Corrupt(format!("expected 3 channels, got {channels}")));
    }
    if height != width {
        return Err(FlowError::Corrupt(format!(
            "flow maps are square; file is {height}x{width}"
        )));
    }
    if height == 0 || height > 1 << 14 {
        return Err(FlowError::Corrupt(format!("implausible resolution {height}")));
    }
    let count = height * width * 3;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(|_| {
        FlowError::Corrupt(format!("raster truncated: expected {count} f32 values"))
    })?;
    let mut values = Vec::with_capacity(count);
    for chunk in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(FlowError::Corrupt("non-finite flow value".into()));
        }
        values.push(v);
    }
    FlowMap::from_interleaved(height, &values)
}
