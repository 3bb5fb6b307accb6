//! Binary portable graymap (P5) input frames.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FlowError, Result};
use crate::frame::Frame;

/// Next whitespace-separated header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(FlowError::Corrupt("truncated P5 header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let magic = next_token(&bytes, &mut pos)?;
    if magic != "P5" {
        return Err(FlowError::Corrupt(format!("bad magic {magic:?}, expected P5")));
    }
    let width: usize = next_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| FlowError::Corrupt("invalid width".into()))?;
    let height: usize = next_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| FlowError::Corrupt("invalid height".into()))?;
    let maxval: usize = next_token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| FlowError::Corrupt("invalid maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(FlowError::Corrupt(format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from raster data.
    pos += 1;
    let expected = width * height;
    if bytes.len() < pos + expected {
        return Err(FlowError::Corrupt(format!(
            "raster truncated: expected {expected} bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let scale = 1.0 / maxval as f64;
    let pixels: Vec<f64> = bytes[pos..pos + expected]
        .iter()
        .map(|&b| (b as f64 * scale).min(1.0))
        .collect();
    Frame::new(width, height, pixels)
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", frame.width(), frame.height())?;
    let raster: Vec<u8> = frame
        .pixels()
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&raster)?;
    w.flush()?;
    Ok(())
}

/// Write an arbitrary `[0,1]` scalar field as an 8-bit P5 image
/// (heat-map export; no minimum-size constraint).
pub fn write_gray_image(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(FlowError::DimensionMismatch(format!(
            "{width}x{height} image with {} values",
            values.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let raster: Vec<u8> = values
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&raster)?;
    w.flush()?;
    Ok(())
}
