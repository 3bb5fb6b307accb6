use crate::error::{FlowError, Result};
use crate::frame::Frame;

/// Surrogate apex spotting: the frame after `onset_index` with the
/// largest L2 distance to the onset frame, both 3x3 box-smoothed.
/// Ties resolve to the first maximizer. Manifest-supplied apex indices
/// take precedence over this surrogate at the dataset layer.
pub fn locate_apex(frames: &[Frame], onset_index: usize) -> Result<usize> {
    if frames.len() < 2 {
        return Err(FlowError::Invalid(format!(
            "apex search needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    if onset_index + 1 >= frames.len() {
        return Err(FlowError::Invalid(format!(
            "onset index {onset_index} leaves no candidate frames"
        )));
    }
    let onset = &frames[onset_index];
    let smoothed_onset = onset.to_grid().box3();
    let mut best = onset_index + 1;
    let mut best_dist = f64::NEG_INFINITY;
    for (t, frame) in frames.iter().enumerate().skip(onset_index + 1) {
        if frame.width() != onset.width() || frame.height() != onset.height() {
            return Err(FlowError::DimensionMismatch(format!(
                "frame {t} is {}x{}, onset is {}x{}",
                frame.width(),
                frame.height(),
                onset.width(),
                onset.height()
            )));
        }
        let smoothed = frame.to_grid().box3();
        let dist: f64 = smoothed
            .data
            .iter()
            .zip(&smoothed_onset.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist > best_dist {
            best_dist = dist;
            best = t;
        }
    }
    Ok(best)
}
