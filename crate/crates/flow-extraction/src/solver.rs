//! Coarse-to-fine optical flow under a Lorentzian penalty.
//!
//! Minimizes, over the flow `V = [Vx Vy]`,
//!
//! ```text
//! E(V) = sum_p rho(Ix Vx + Iy Vy + It) + lambda * [rho(grad Vx) + rho(grad Vy)]
//! rho(z) = log(1 + z^2 / (2 sigma^2))
//! ```
//!
//! with the data term linearized per warp iteration and the smoothness
//! term taken over horizontal/vertical neighbour differences. Each
//! linearization is solved by iteratively reweighted least squares;
//! the weighted normal equations couple neighbours through a 5-point
//! stencil and are relaxed by fixed-count Jacobi sweeps. A median
//! filter stabilizes the flow after every warp.

use crate::error::{FlowError, Result};
use crate::frame::Frame;
use crate::grid::Grid;

#[derive(Debug, Clone)]
pub struct FlowSolverConfig {
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    pub outer_warps: usize,
    pub irls_iters: usize,
    pub lorentzian_sigma: f64,
    pub smoothness_lambda: f64,
    pub median_filter_radius: usize,
    pub jacobi_sweeps: usize,
}

impl Default for FlowSolverConfig {
    fn default() -> Self {
        FlowSolverConfig {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            outer_warps: 3,
            irls_iters: 10,
            lorentzian_sigma: 0.03,
            smoothness_lambda: 0.1,
            median_filter_radius: 2,
            jacobi_sweeps: 30,
        }
    }
}

impl FlowSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.pyramid_scale && self.pyramid_scale < 1.0) {
            return Err(FlowError::Invalid(format!(
                "pyramid_scale {} outside (0,1)",
                self.pyramid_scale
            )));
        }
        if self.pyramid_levels < 1
            || self.outer_warps < 1
            || self.irls_iters < 1
            || self.jacobi_sweeps < 1
        {
            return Err(FlowError::Invalid(
                "pyramid_levels, outer_warps, irls_iters and jacobi_sweeps must be >= 1".into(),
            ));
        }
        if self.lorentzian_sigma <= 0.0 || self.smoothness_lambda < 0.0 {
            return Err(FlowError::Invalid(
                "lorentzian_sigma must be positive, smoothness_lambda non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel displacement field in pixels of the source resolution.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub vx: Grid,
    pub vy: Grid,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            vx: Grid::zeros(height, width),
            vy: Grid::zeros(height, width),
        }
    }

    pub fn height(&self) -> usize {
        self.vx.height
    }

    pub fn width(&self) -> usize {
        self.vx.width
    }
}

/// Energy trace of the finest pyramid level, one inner vector per warp
/// iteration holding the Lorentzian objective before IRLS and after
/// each IRLS iteration.
#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    pub finest_energies: Vec<Vec<f64>>,
}

pub fn estimate_flow(onset: &Frame, apex: &Frame, cfg: &FlowSolverConfig) -> Result<FlowField> {
    Ok(estimate_flow_with_trace(onset, apex, cfg)?.0)
}

pub fn estimate_flow_with_trace(
    onset: &Frame,
    apex: &Frame,
    cfg: &FlowSolverConfig,
) -> Result<(FlowField, SolverTrace)> {
    cfg.validate()?;
    if onset.width() != apex.width() || onset.height() != apex.height() {
        return Err(FlowError::DimensionMismatch(format!(
            "onset {}x{} vs apex {}x{}",
            onset.width(),
            onset.height(),
            apex.width(),
            apex.height()
        )));
    }

    let pyr_onset = build_pyramid(&onset.to_grid(), cfg);
    let pyr_apex = build_pyramid(&apex.to_grid(), cfg);
    let levels = pyr_onset.len();

    let mut trace = SolverTrace::default();
    let coarsest = &pyr_onset[levels - 1];
    let mut flow = FlowField::zeros(coarsest.height, coarsest.width);

    for li in (0..levels).rev() {
        let i0 = &pyr_onset[li];
        let i1 = &pyr_apex[li];
        for _warp in 0..cfg.outer_warps {
            let energies = solve_one_warp(i0, i1, &mut flow, cfg, li == 0);
            if li == 0 {
                trace.finest_energies.push(energies);
            }
            flow.vx = flow.vx.median_filter(cfg.median_filter_radius);
            flow.vy = flow.vy.median_filter(cfg.median_filter_radius);
        }
        if li > 0 {
            let (nh, nw) = (pyr_onset[li - 1].height, pyr_onset[li - 1].width);
            let sx = nw as f64 / flow.width() as f64;
            let sy = nh as f64 / flow.height() as f64;
            let mut vx = flow.vx.resize_bilinear(nh, nw);
            let mut vy = flow.vy.resize_bilinear(nh, nw);
            for v in &mut vx.data {
                *v *= sx;
            }
            for v in &mut vy.data {
                *v *= sy;
            }
            flow = FlowField { vx, vy };
        }
    }

    if !flow.vx.data.iter().chain(flow.vy.data.iter()).all(|v| v.is_finite()) {
        return Err(FlowError::NonFinite("flow field"));
    }
    Ok((flow, trace))
}

/// Image pyramid, finest first. Levels stop early if a side would drop
/// below 8 pixels.
fn build_pyramid(img: &Grid, cfg: &FlowSolverConfig) -> Vec<Grid> {
    let mut pyr = vec![img.clone()];
    for _ in 1..cfg.pyramid_levels {
        let prev = pyr.last().unwrap();
        let nh = (prev.height as f64 * cfg.pyramid_scale).round() as usize;
        let nw = (prev.width as f64 * cfg.pyramid_scale).round() as usize;
        if nh < 8 || nw < 8 {
            break;
        }
        pyr.push(prev.box3().resize_bilinear(nh, nw));
    }
    pyr
}

/// One linearization: warp, derivatives, IRLS with Jacobi relaxation.
/// Returns the per-IRLS-iteration energy trace when requested.
fn solve_one_warp(
    i0: &Grid,
    i1: &Grid,
    flow: &mut FlowField,
    cfg: &FlowSolverConfig,
    want_trace: bool,
) -> Vec<f64> {
    let (h, w) = (i0.height, i0.width);
    let n = h * w;

    // Warp the apex toward the onset by the current flow estimate.
    let mut warped = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let sy = y as f64 + flow.vy.at(y, x);
            let sx = x as f64 + flow.vx.at(y, x);
            warped.set(y, x, i1.sample_bilinear(sy, sx));
        }
    }

    // Spatial gradients on the average of the pair; temporal difference.
    let mut avg = Grid::zeros(h, w);
    for i in 0..n {
        avg.data[i] = 0.5 * (i0.data[i] + warped.data[i]);
    }
    let ix = avg.dx_central();
    let iy = avg.dy_central();
    // Constant part of the linearized residual r = Ix*Vx + Iy*Vy + ct,
    // expressed in the full flow so IRLS updates V directly.
    let mut ct = vec![0.0f64; n];
    for i in 0..n {
        ct[i] = (warped.data[i] - i0.data[i]) - ix.data[i] * flow.vx.data[i]
            - iy.data[i] * flow.vy.data[i];
    }

    let two_sigma2 = 2.0 * cfg.lorentzian_sigma * cfg.lorentzian_sigma;
    let lambda = cfg.smoothness_lambda;
    let rho = |z: f64| (1.0 + z * z / two_sigma2).ln();

    let energy = |vx: &Grid, vy: &Grid| -> f64 {
        let mut e = 0.0;
        for i in 0..n {
            e += rho(ix.data[i] * vx.data[i] + iy.data[i] * vy.data[i] + ct[i]);
        }
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    e += lambda * rho(vx.at(y, x) - vx.at(y, x + 1));
                    e += lambda * rho(vy.at(y, x) - vy.at(y, x + 1));
                }
                if y + 1 < h {
                    e += lambda * rho(vx.at(y, x) - vx.at(y + 1, x));
                    e += lambda * rho(vy.at(y, x) - vy.at(y + 1, x));
                }
            }
        }
        e
    };

    let mut energies = Vec::new();
    if want_trace {
        energies.push(energy(&flow.vx, &flow.vy));
    }

    // IRLS weight for rho: rho'(z)/(2z) = 1/(2 sigma^2 + z^2).
    let irls_w = |z: f64| 1.0 / (two_sigma2 + z * z);

    let mut wd = vec![0.0f64; n];
    let mut wsx_r = vec![0.0f64; n];
    let mut wsx_d = vec![0.0f64; n];
    let mut wsy_r = vec![0.0f64; n];
    let mut wsy_d = vec![0.0f64; n];

    for _irls in 0..cfg.irls_iters {
        for i in 0..n {
            let r = ix.data[i] * flow.vx.data[i] + iy.data[i] * flow.vy.data[i] + ct[i];
            wd[i] = irls_w(r);
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    wsx_r[i] = irls_w(flow.vx.at(y, x) - flow.vx.at(y, x + 1));
                    wsy_r[i] = irls_w(flow.vy.at(y, x) - flow.vy.at(y, x + 1));
                }
                if y + 1 < h {
                    wsx_d[i] = irls_w(flow.vx.at(y, x) - flow.vx.at(y + 1, x));
                    wsy_d[i] = irls_w(flow.vy.at(y, x) - flow.vy.at(y + 1, x));
                }
            }
        }

        for _sweep in 0..cfg.jacobi_sweeps {
            let old_vx = flow.vx.clone();
            let old_vy = flow.vy.clone();
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    // Neighbour sums for the 5-point smoothness stencil.
                    let mut sx = 0.0;
                    let mut sy = 0.0;
                    let mut bx = 0.0;
                    let mut by = 0.0;
                    if x + 1 < w {
                        sx += wsx_r[i];
                        bx += wsx_r[i] * old_vx.at(y, x + 1);
                        sy += wsy_r[i];
                        by += wsy_r[i] * old_vy.at(y, x + 1);
                    }
                    if x > 0 {
                        let j = y * w + x - 1;
                        sx += wsx_r[j];
                        bx += wsx_r[j] * old_vx.at(y, x - 1);
                        sy += wsy_r[j];
                        by += wsy_r[j] * old_vy.at(y, x - 1);
                    }
                    if y + 1 < h {
                        sx += wsx_d[i];
                        bx += wsx_d[i] * old_vx.at(y + 1, x);
                        sy += wsy_d[i];
                        by += wsy_d[i] * old_vy.at(y + 1, x);
                    }
                    if y > 0 {
                        let j = (y - 1) * w + x;
                        sx += wsx_d[j];
                        bx += wsx_d[j] * old_vx.at(y - 1, x);
                        sy += wsy_d[j];
                        by += wsy_d[j] * old_vy.at(y - 1, x);
                    }
                    let (cx, cy) = (ix.data[i], iy.data[i]);
                    let a11 = wd[i] * cx * cx + lambda * sx;
                    let a12 = wd[i] * cx * cy;
                    let a22 = wd[i] * cy * cy + lambda * sy;
                    let b1 = -wd[i] * cx * ct[i] + lambda * bx;
                    let b2 = -wd[i] * cy * ct[i] + lambda * by;
                    let det = a11 * a22 - a12 * a12;
                    if det.abs() > 1e-12 {
                        flow.vx.data[i] = (b1 * a22 - b2 * a12) / det;
                        flow.vy.data[i] = (b2 * a11 - b1 * a12) / det;
                    }
                }
            }
        }

        if want_trace {
            energies.push(energy(&flow.vx, &flow.vy));
        }
    }
    energies
}
