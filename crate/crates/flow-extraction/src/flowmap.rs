use crate::error::{FlowError, Result};
use crate::solver::FlowField;
use crate::strain::optical_strain;

/// Minimum model resolution.
pub const MIN_FLOW_MAP_RESOLUTION: usize = 16;

/// Three-channel square model input: flow components in target-pixel
/// units plus the dimensionless strain channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    pub resolution: usize,
    /// Planar channels, each `resolution * resolution`, row-major.
    pub vx: Vec<f32>,
    pub vy: Vec<f32>,
    pub vz: Vec<f32>,
}

impl FlowMap {
    pub fn new(resolution: usize, vx: Vec<f32>, vy: Vec<f32>, vz: Vec<f32>) -> Result<Self> {
        let n = resolution * resolution;
        if vx.len() != n || vy.len() != n || vz.len() != n {
            return Err(FlowError::DimensionMismatch(format!(
                "flow map channels {}x{}x{} for resolution {resolution}",
                vx.len(),
                vy.len(),
                vz.len()
            )));
        }
        if !vx
            .iter()
            .chain(vy.iter())
            .chain(vz.iter())
            .all(|v| v.is_finite())
        {
            return Err(FlowError::NonFinite("flow map"));
        }
        Ok(FlowMap {
            resolution,
            vx,
            vy,
            vz,
        })
    }

    /// Channel-interleaved `[Vx, Vy, Vz]` pixels, row-major.
    pub fn interleaved(&self) -> Vec<f32> {
        let n = self.resolution * self.resolution;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            out.push(self.vx[i]);
            out.push(self.vy[i]);
            out.push(self.vz[i]);
        }
        out
    }

    pub fn from_interleaved(resolution: usize, values: &[f32]) -> Result<Self> {
        let n = resolution * resolution;
        if values.len() != 3 * n {
            return Err(FlowError::DimensionMismatch(format!(
                "{} interleaved values for resolution {resolution}",
                values.len()
            )));
        }
        let mut vx = Vec::with_capacity(n);
        let mut vy = Vec::with_capacity(n);
        let mut vz = Vec::with_capacity(n);
        for px in values.chunks_exact(3) {
            vx.push(px[0]);
            vy.push(px[1]);
            vz.push(px[2]);
        }
        FlowMap::new(resolution, vx, vy, vz)
    }
}

/// Resize a flow field to the model resolution and attach the strain
/// channel.
///
/// `Vx` is scaled by `R/W` and `Vy` by `R/H` so displacements stay in
/// target-pixel units; the strain channel is resized unscaled, being
/// invariant under a uniform rescaling of flow and coordinates.
pub fn assemble_flow_map(flow: &FlowField, target_resolution: usize) -> Result<FlowMap> {
    if target_resolution < MIN_FLOW_MAP_RESOLUTION {
        return Err(FlowError::Invalid(format!(
            "target resolution {target_resolution} below minimum {MIN_FLOW_MAP_RESOLUTION}"
        )));
    }
    let (h, w) = (flow.height(), flow.width());
    let r = target_resolution;
    let strain = optical_strain(flow);

    let sx = r as f64 / w as f64;
    let sy = r as f64 / h as f64;
    let mut vx = flow.vx.resize_bilinear(r, r);
    for v in &mut vx.data {
        *v *= sx;
    }
    let mut vy = flow.vy.resize_bilinear(r, r);
    for v in &mut vy.data {
        *v *= sy;
    }
    let vz = strain.resize_bilinear(r, r);

    FlowMap::new(
        r,
        vx.data.iter().map(|&v| v as f32).collect(),
        vy.data.iter().map(|&v| v as f32).collect(),
        vz.data.iter().map(|&v| v as f32).collect(),
    )
}
