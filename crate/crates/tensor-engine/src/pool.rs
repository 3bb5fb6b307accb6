use crate::error::{Result, TensorError};
use crate::ops::expect_nchw;
use crate::tensor::{Real, Tensor};

/// Max pooling with window `k` and stride `s`. Trailing rows/columns
/// that do not fill a window are dropped; inputs smaller than the
/// window reduce to a single clipped window so tiny feature maps stay
/// legal. Backward routes the gradient to the first maximal element.
pub fn maxpool2d<T: Real>(x: &Tensor<T>, k: usize, s: usize) -> Result<Tensor<T>> {
    if k == 0 || s == 0 {
        return Err(TensorError::invalid("maxpool2d", "k and s must be positive"));
    }
    let [n, c, h, w] = expect_nchw("maxpool2d", x)?;
    let oh = pooled_extent(h, k, s);
    let ow = pooled_extent(w, k, s);
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    {
        let xd = x.data();
        for nc in 0..n * c {
            let plane = &xd[nc * h * w..(nc + 1) * h * w];
            for oy in 0..oh {
                let y0 = oy * s;
                let y1 = (y0 + k).min(h);
                for ox in 0..ow {
                    let x0 = ox * s;
                    let x1 = (x0 + k).min(w);
                    let mut best = plane[y0 * w + x0];
                    let mut best_i = y0 * w + x0;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            let v = plane[yy * w + xx];
                            if v > best {
                                best = v;
                                best_i = yy * w + xx;
                            }
                        }
                    }
                    out[nc * oh * ow + oy * ow + ox] = best;
                    argmax[nc * oh * ow + oy * ow + ox] = nc * h * w + best_i;
                }
            }
        }
    }
    let px = x.clone();
    let in_numel = n * c * h * w;
    Tensor::from_op(
        "maxpool2d",
        vec![n, c, oh, ow],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); in_numel];
            for (gi, &src) in g.iter().zip(&argmax) {
                dx[src] += *gi;
            }
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

fn pooled_extent(len: usize, k: usize, s: usize) -> usize {
    if len >= k {
        (len - k) / s + 1
    } else {
        1
    }
}

/// Adaptive average pooling to a `K x K` output. Bin `i` covers
/// `[floor(i*H/K), ceil((i+1)*H/K))`, so any `K >= 1` is legal,
/// including `K` larger than the input extent.
pub fn adaptive_avgpool2d<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(TensorError::invalid("adaptive_avgpool2d", "K must be positive"));
    }
    let [n, c, h, w] = expect_nchw("adaptive_avgpool2d", x)?;
    let ybins = bins(h, k);
    let xbins = bins(w, k);
    let mut out = vec![T::zero(); n * c * k * k];
    {
        let xd = x.data();
        for nc in 0..n * c {
            let plane = &xd[nc * h * w..(nc + 1) * h * w];
            for (oy, &(y0, y1)) in ybins.iter().enumerate() {
                for (ox, &(x0, x1)) in xbins.iter().enumerate() {
                    let mut acc = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += plane[yy * w + xx];
                        }
                    }
                    let count = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    out[nc * k * k + oy * k + ox] = acc / count;
                }
            }
        }
    }
    let px = x.clone();
    let in_numel = n * c * h * w;
    let (yb, xb) = (ybins, xbins);
    Tensor::from_op(
        "adaptive_avgpool2d",
        vec![n, c, k, k],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); in_numel];
            for nc in 0..in_numel / (h * w) {
                let dplane = &mut dx[nc * h * w..(nc + 1) * h * w];
                for (oy, &(y0, y1)) in yb.iter().enumerate() {
                    for (ox, &(x0, x1)) in xb.iter().enumerate() {
                        let gi = g[nc * k * k + oy * k + ox];
                        let share = gi / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                dplane[yy * w + xx] += share;
                            }
                        }
                    }
                }
            }
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

fn bins(len: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .map(|i| {
            let start = i * len / k;
            let end = ((i + 1) * len).div_ceil(k);
            (start, end)
        })
        .collect()
}
