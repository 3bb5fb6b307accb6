use crate::error::{FlowError, Result};
use crate::grid::Grid;

/// Minimum frame side length the pipeline accepts.
pub const MIN_FRAME_DIM: usize = 16;

/// Grayscale frame with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width < MIN_FRAME_DIM || height < MIN_FRAME_DIM {
            return Err(FlowError::Invalid(format!(
                "frame {width}x{height} below minimum {MIN_FRAME_DIM}"
            )));
        }
        if pixels.len() != width * height {
            return Err(FlowError::DimensionMismatch(format!(
                "{width}x{height} frame with {} pixels",
                pixels.len()
            )));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(FlowError::Invalid(
                "frame intensities must be finite and in [0,1]".into(),
            ));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn to_grid(&self) -> Grid {
        Grid::from_vec(self.height, self.width, self.pixels.clone())
    }
}
