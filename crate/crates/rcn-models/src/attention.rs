//! Parameter-free attention unit and class-activation maps.
//!
//! Both are built from the classifier's own weights: the feature map
//! is pooled to the classifier's spatial grid, multiplied element-wise
//! with the reshaped weight rows, and summed over classes and channels.
//! No learnable parameters are introduced, and no gradient flows into
//! the classifier weights through this path.

use tensor_engine::{
    adaptive_avgpool2d, bilinear_upsample2d, mul_channel_broadcast, mul_const_sum_channels,
    normalize_spatial_max, relu, Real, Tensor,
};

use crate::error::{ModelError, Result};

/// Classifier weights viewed as per-class `[M, K, K]` stacks.
pub struct AttentionSource<T: Real> {
    pub classifier_weight: Tensor<T>,
    pub pool_size: usize,
}

impl<T: Real> AttentionSource<T> {
    /// Collapse classifier rows into constant per-channel spatial
    /// weights: `w[j,k1,k2] = sum_i W[i, j*K*K + k1*K + k2]` over the
    /// selected classes (all of them when `class` is `None`).
    fn collapsed_weights(&self, channels: usize, class: Option<usize>) -> Result<Vec<T>> {
        let shape = self.classifier_weight.shape();
        let kk = self.pool_size * self.pool_size;
        if shape.len() != 2 || shape[1] != channels * kk {
            return Err(ModelError::Mismatch(format!(
                "classifier weight {:?} incompatible with {channels} channels and pool {}",
                shape, self.pool_size
            )));
        }
        let classes = shape[0];
        let data = self.classifier_weight.data();
        let mut out = vec![T::zero(); channels * kk];
        let rows: Vec<usize> = match class {
            Some(c) if c < classes => vec![c],
            Some(c) => {
                return Err(ModelError::Mismatch(format!(
                    "class {c} out of range for {classes} classes"
                )))
            }
            None => (0..classes).collect(),
        };
        for i in rows {
            let row = &data[i * channels * kk..(i + 1) * channels * kk];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
        Ok(out)
    }
}

/// Estimate the spatial attention map for `x`: pool to the classifier
/// grid, weight by the (detached) classifier rows summed over classes
/// and channels, rectify, normalize by the spatial maximum (an
/// all-ones map when the maximum is at or below 1e-8), and upsample
/// back to the feature resolution.
pub fn attention_map<T: Real>(x: &Tensor<T>, source: &AttentionSource<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    let (channels, h, w) = (shape[1], shape[2], shape[3]);
    let weights = source.collapsed_weights(channels, None)?;
    let pooled = adaptive_avgpool2d(x, source.pool_size)?;
    let raw = mul_const_sum_channels(&pooled, &weights)?;
    let rectified = relu(&raw)?;
    let normalized = normalize_spatial_max(&rectified, T::from_f64(1e-8))?;
    Ok(bilinear_upsample2d(&normalized, h, w)?)
}

/// Multiply features by a `[N,1,H,W]` attention map, broadcast over
/// channels.
pub fn apply_attention<T: Real>(x: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(mul_channel_broadcast(x, map)?)
}

/// Raw class-activation map: the weighted channel sum for one class
/// (or all classes), bilinearly upsampled to the requested size, with
/// no rectification or normalization. Min-max scaling is left to the
/// exporter.
pub fn cam_map<T: Real>(
    x: &Tensor<T>,
    source: &AttentionSource<T>,
    class: Option<usize>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let channels = x.shape()[1];
    let weights = source.collapsed_weights(channels, class)?;
    let pooled = adaptive_avgpool2d(x, source.pool_size)?;
    let raw = mul_const_sum_channels(&pooled, &weights)?;
    Ok(bilinear_upsample2d(&raw, out_h, out_w)?)
}
