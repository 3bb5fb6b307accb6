use rand::Rng;

use crate::error::{Result, TensorError};
use crate::init::kaiming_uniform;
use crate::ops::expect_nchw;
use crate::tensor::{Real, Tensor};

/// Square-kernel convolution parameters.
///
/// `dilation == 1` is the standard convolution; larger dilations sample
/// the input at stride-`d` taps with identical learnable parameters.
pub struct ConvParams<T: Real> {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out_channels, in_channels, kernel, kernel]`
    pub weight: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
}

impl<T: Real> ConvParams<T> {
    /// Seeded uniform initialization in `±sqrt(6/fan_in)`, zero bias.
    pub fn init<R: Rng>(
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = Tensor::parameter(
            &[out_channels, in_channels, kernel, kernel],
            kaiming_uniform(out_channels * fan_in, fan_in, rng),
        )?;
        let bias = Tensor::parameter(&[out_channels], vec![T::zero(); out_channels])?;
        Self::from_tensors(kernel, stride, padding, dilation, weight, bias)
    }

    pub fn from_tensors(
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        weight: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 || ws[2] != kernel || ws[3] != kernel {
            return Err(TensorError::shape(
                "conv_params",
                format!("weight {:?} incompatible with kernel {kernel}", ws),
            ));
        }
        if bias.shape() != vec![ws[0]] {
            return Err(TensorError::shape(
                "conv_params",
                format!("bias {:?} incompatible with {} output channels", bias.shape(), ws[0]),
            ));
        }
        if stride == 0 || dilation == 0 || kernel == 0 {
            return Err(TensorError::invalid(
                "conv_params",
                "kernel, stride and dilation must be positive",
            ));
        }
        Ok(ConvParams {
            kernel,
            stride,
            padding,
            dilation,
            in_channels: ws[1],
            out_channels: ws[0],
            weight,
            bias,
        })
    }
}

/// Spatial output extent `floor((n + 2p - d*(k-1) - 1)/s) + 1`, or
/// `None` when it would be non-positive.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Valid output range `[lo, hi]` along one axis for a fixed kernel tap,
/// so that the sampled input index stays inside `[0, len)`.
#[inline]
fn tap_range(out_len: usize, len: usize, stride: usize, off: isize) -> Option<(usize, usize)> {
    let lo = if off < 0 {
        ((-off) as usize).div_ceil(stride)
    } else {
        0
    };
    let max_i = len as isize - 1 - off;
    if max_i < 0 {
        return None;
    }
    let hi = (max_i as usize / stride).min(out_len - 1);
    if lo > hi {
        return None;
    }
    Some((lo, hi))
}

/// 2-d cross-correlation with zero padding (no kernel flip).
///
/// Per output pixel, tap contributions accumulate in `(ci, ky, kx)`
/// order, matching a naive nested-loop evaluation bit for bit.
pub fn conv2d<T: Real>(x: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let [n, cin, h, w] = expect_nchw("conv2d", x)?;
    if cin != params.in_channels {
        return Err(TensorError::shape(
            "conv2d",
            format!("input has {cin} channels, params expect {}", params.in_channels),
        ));
    }
    let (k, s, p, d) = (params.kernel, params.stride, params.padding, params.dilation);
    let oh = conv_output_extent(h, k, s, p, d).ok_or_else(|| {
        TensorError::invalid("conv2d", format!("non-positive output height for input {h}"))
    })?;
    let ow = conv_output_extent(w, k, s, p, d).ok_or_else(|| {
        TensorError::invalid("conv2d", format!("non-positive output width for input {w}"))
    })?;
    let cout = params.out_channels;
    let mut out = vec![T::zero(); n * cout * oh * ow];
    {
        let xd = x.data();
        let wd = params.weight.data();
        let bd = params.bias.data();
        for ni in 0..n {
            for co in 0..cout {
                let out_plane = &mut out[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                let b = bd[co];
                for v in out_plane.iter_mut() {
                    *v = b;
                }
                for ci in 0..cin {
                    let x_plane = &xd[(ni * cin + ci) * h * w..(ni * cin + ci + 1) * h * w];
                    for ky in 0..k {
                        let off_y = (ky * d) as isize - p as isize;
                        let Some((oy_lo, oy_hi)) = tap_range(oh, h, s, off_y) else {
                            continue;
                        };
                        for kx in 0..k {
                            let off_x = (kx * d) as isize - p as isize;
                            let Some((ox_lo, ox_hi)) = tap_range(ow, w, s, off_x) else {
                                continue;
                            };
                            let wv = wd[((co * cin + ci) * k + ky) * k + kx];
                            for oy in oy_lo..=oy_hi {
                                let iy = (oy as isize * s as isize + off_y) as usize;
                                let x_row = &x_plane[iy * w..(iy + 1) * w];
                                let out_row = &mut out_plane[oy * ow + ox_lo..=oy * ow + ox_hi];
                                if s == 1 {
                                    let ix0 = (ox_lo as isize + off_x) as usize;
                                    let xs = &x_row[ix0..ix0 + out_row.len()];
                                    for (o, &xv) in out_row.iter_mut().zip(xs) {
                                        *o += wv * xv;
                                    }
                                } else {
                                    let mut ix = (ox_lo as isize * s as isize + off_x) as usize;
                                    for o in out_row.iter_mut() {
                                        *o += wv * x_row[ix];
                                        ix += s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let px = x.clone();
    let pw = params.weight.clone();
    let pb = params.bias.clone();
    let parents = vec![x.clone(), params.weight.clone(), params.bias.clone()];
    Tensor::from_op(
        "conv2d",
        vec![n, cout, oh, ow],
        out,
        parents,
        Box::new(move |g| {
            conv2d_backward(g, &px, &pw, &pb, n, cin, cout, h, w, oh, ow, k, s, p, d)
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Real>(
    g: &[T],
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
    p: usize,
    d: usize,
) -> Result<()> {
    if bias.tracked() {
        let mut db = vec![T::zero(); cout];
        for ni in 0..n {
            for co in 0..cout {
                let g_plane = &g[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                let mut acc = T::zero();
                for &gv in g_plane {
                    acc += gv;
                }
                db[co] += acc;
            }
        }
        bias.accumulate_grad(&db);
    }

    if weight.tracked() {
        let dw = {
            let xd = x.data();
            let mut dw = vec![T::zero(); cout * cin * k * k];
            for ni in 0..n {
                for co in 0..cout {
                    let g_plane = &g[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                    for ci in 0..cin {
                        let x_plane = &xd[(ni * cin + ci) * h * w..(ni * cin + ci + 1) * h * w];
                        for ky in 0..k {
                            let off_y = (ky * d) as isize - p as isize;
                            let Some((oy_lo, oy_hi)) = tap_range(oh, h, s, off_y) else {
                                continue;
                            };
                            for kx in 0..k {
                                let off_x = (kx * d) as isize - p as isize;
                                let Some((ox_lo, ox_hi)) = tap_range(ow, w, s, off_x) else {
                                    continue;
                                };
                                let mut acc = T::zero();
                                for oy in oy_lo..=oy_hi {
                                    let iy = (oy as isize * s as isize + off_y) as usize;
                                    let x_row = &x_plane[iy * w..(iy + 1) * w];
                                    let g_row = &g_plane[oy * ow + ox_lo..=oy * ow + ox_hi];
                                    if s == 1 {
                                        let ix0 = (ox_lo as isize + off_x) as usize;
                                        let xs = &x_row[ix0..ix0 + g_row.len()];
                                        for (&gv, &xv) in g_row.iter().zip(xs) {
                                            acc += gv * xv;
                                        }
                                    } else {
                                        let mut ix = (ox_lo as isize * s as isize + off_x) as usize;
                                        for &gv in g_row {
                                            acc += gv * x_row[ix];
                                            ix += s;
                                        }
                                    }
                                }
                                dw[((co * cin + ci) * k + ky) * k + kx] += acc;
                            }
                        }
                    }
                }
            }
            dw
        };
        weight.accumulate_grad(&dw);
    }

    if x.tracked() {
        let dx = {
            let wd = weight.data();
            let mut dx = vec![T::zero(); n * cin * h * w];
            for ni in 0..n {
                for co in 0..cout {
                    let g_plane = &g[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                    for ci in 0..cin {
                        let dx_plane =
                            &mut dx[(ni * cin + ci) * h * w..(ni * cin + ci + 1) * h * w];
                        for ky in 0..k {
                            let off_y = (ky * d) as isize - p as isize;
                            let Some((oy_lo, oy_hi)) = tap_range(oh, h, s, off_y) else {
                                continue;
                            };
                            for kx in 0..k {
                                let off_x = (kx * d) as isize - p as isize;
                                let Some((ox_lo, ox_hi)) = tap_range(ow, w, s, off_x) else {
                                    continue;
                                };
                                let wv = wd[((co * cin + ci) * k + ky) * k + kx];
                                for oy in oy_lo..=oy_hi {
                                    let iy = (oy as isize * s as isize + off_y) as usize;
                                    let dx_row = &mut dx_plane[iy * w..(iy + 1) * w];
                                    let g_row =
                                        &g_plane[oy * ow + ox_lo..=oy * ow + ox_hi];
                                    if s == 1 {
                                        let ix0 = (ox_lo as isize + off_x) as usize;
                                        let dst = &mut dx_row[ix0..ix0 + g_row.len()];
                                        for (o, &gv) in dst.iter_mut().zip(g_row) {
                                            *o += wv * gv;
                                        }
                                    } else {
                                        let mut ix =
                                            (ox_lo as isize * s as isize + off_x) as usize;
                                        for &gv in g_row {
                                            dx_row[ix] += wv * gv;
                                            ix += s;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dx
        };
        x.accumulate_grad(&dx);
    }
    Ok(())
}
