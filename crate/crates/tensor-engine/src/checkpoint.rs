use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};

pub const RCNM_MAGIC: &[u8; 4] = b"RCNM";
pub const RCNM_VERSION: u32 = 1;

/// One named tensor in a checkpoint (parameter or buffer).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Model checkpoint: architecture descriptor string, per-channel input
/// normalization statistics, and named 32-bit parameter tensors.
///
/// Layout (all integers little-endian u32, all floats little-endian
/// IEEE-754 binary32): magic `RCNM`, version, descriptor length +
/// UTF-8 bytes, 3 mean + 3 std values, entry count, then per entry
/// name length + UTF-8 name, rank, extents, values.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
    pub entries: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub fn write_rcnm(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RCNM_MAGIC)?;
    w.write_all(&RCNM_VERSION.to_le_bytes())?;
    let desc = ckpt.descriptor.as_bytes();
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(desc)?;
    for v in ckpt.norm_mean.iter().chain(ckpt.norm_std.iter()) {
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "write_rcnm" });
        }
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(ckpt.entries.len() as u32).to_le_bytes())?;
    for e in &ckpt.entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        let mut numel = 1usize;
        for &d in &e.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
            numel *= d;
        }
        if numel != e.values.len() {
            return Err(TensorError::shape(
                "write_rcnm",
                format!("entry {} shape {:?} vs {} values", e.name, e.shape, e.values.len()),
            ));
        }
        for v in &e.values {
            if !v.is_finite() {
                return Err(TensorError::NonFinite { op: "write_rcnm" });
            }
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R: Read> {
    r: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r
            .read_exact(&mut buf)
            .map_err(|_| TensorError::Corrupt("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.bytes(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(TensorError::Corrupt(format!("string length {len} implausible")));
        }
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| TensorError::Corrupt("invalid UTF-8".into()))
    }
}

pub fn read_rcnm(path: &Path) -> Result<Checkpoint> {
    let mut c = Cursor {
        r: BufReader::new(File::open(path)?),
    };
    let magic = c.bytes(4)?;
    if magic != RCNM_MAGIC {
        return Err(TensorError::Corrupt(format!("bad magic {magic:?}")));
    }
    let version = c.u32()?;
    if version != RCNM_VERSION {
        return Err(TensorError::Corrupt(format!("unsupported version {version}")));
    }
    let descriptor = c.string()?;
    let mut norm_mean = [0f32; 3];
    let mut norm_std = [0f32; 3];
    for v in norm_mean.iter_mut() {
        *v = c.f32()?;
    }
    for v in norm_std.iter_mut() {
        *v = c.f32()?;
    }
    let count = c.u32()? as usize;
    if count > 1 << 16 {
        return Err(TensorError::Corrupt(format!("entry count {count} implausible")));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        if rank > 8 {
            return Err(TensorError::Corrupt(format!("rank {rank} implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = c.u32()? as usize;
            numel = numel.saturating_mul(d);
            shape.push(d);
        }
        if numel > 1 << 28 {
            return Err(TensorError::Corrupt(format!("tensor {name} implausibly large")));
        }
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = c.f32()?;
            if !v.is_finite() {
                return Err(TensorError::Corrupt(format!("non-finite value in {name}")));
            }
            values.push(v);
        }
        entries.push(TensorEntry { name, shape, values });
    }
    for v in norm_mean.iter().chain(norm_std.iter()) {
        if !v.is_finite() {
            return Err(TensorError::Corrupt("non-finite normalization stats".into()));
        }
    }
    Ok(Checkpoint {
        descriptor,
        norm_mean,
        norm_std,
        entries,
    })
}
