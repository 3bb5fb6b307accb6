use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub(crate) fn expect_nchw<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<[usize; 4]> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::shape(
            op,
            format!("expected 4-d [N,C,H,W] tensor, got {:?}", s),
        ));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Element-wise sum of two same-shape tensors.
pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        "add",
        a.shape(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(g);
            pb.accumulate_grad(g);
            Ok(())
        }),
    )
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x - y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        "sub",
        a.shape(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(g);
            let neg: Vec<T> = g.iter().map(|&v| -v).collect();
            pb.accumulate_grad(&neg);
            Ok(())
        }),
    )
}

/// Element-wise product.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x * y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        "mul",
        a.shape(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let da: Vec<T> = {
                let bd = pb.data();
                g.iter().zip(bd.iter()).map(|(&gi, &bi)| gi * bi).collect()
            };
            let db: Vec<T> = {
                let ad = pa.data();
                g.iter().zip(ad.iter()).map(|(&gi, &ai)| gi * ai).collect()
            };
            pa.accumulate_grad(&da);
            pb.accumulate_grad(&db);
            Ok(())
        }),
    )
}

pub fn scale<T: Real>(a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
    let data: Vec<T> = a.data().iter().map(|&x| x * c).collect();
    let pa = a.clone();
    Tensor::from_op(
        "scale",
        a.shape(),
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<T> = g.iter().map(|&gi| gi * c).collect();
            pa.accumulate_grad(&da);
            Ok(())
        }),
    )
}

pub fn neg<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    scale(a, -T::one())
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum_all<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let mut acc = T::zero();
    for &v in a.data().iter() {
        acc += v;
    }
    let pa = a.clone();
    let n = a.numel();
    Tensor::from_op(
        "sum_all",
        vec![1],
        vec![acc],
        vec![a.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(&vec![g[0]; n]);
            Ok(())
        }),
    )
}

pub fn mean_all<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let inv = T::one() / T::from_f64(a.numel() as f64);
    let s = sum_all(a)?;
    scale(&s, inv)
}

pub fn relu<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a
        .data()
        .iter()
        .map(|&x| if x > T::zero() { x } else { T::zero() })
        .collect();
    let pa = a.clone();
    Tensor::from_op(
        "relu",
        a.shape(),
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<T> = {
                let ad = pa.data();
                g.iter()
                    .zip(ad.iter())
                    .map(|(&gi, &ai)| if ai > T::zero() { gi } else { T::zero() })
                    .collect()
            };
            pa.accumulate_grad(&da);
            Ok(())
        }),
    )
}

/// Numerically stable softplus `ln(1 + e^x)`.
pub fn softplus<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a
        .data()
        .iter()
        .map(|&x| {
            let z = x.max(T::zero());
            z + (-x.abs()).exp().ln_1p()
        })
        .collect();
    let pa = a.clone();
    Tensor::from_op(
        "softplus",
        a.shape(),
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<T> = {
                let ad = pa.data();
                g.iter()
                    .zip(ad.iter())
                    .map(|(&gi, &ai)| gi * (T::one() / (T::one() + (-ai).exp())))
                    .collect()
            };
            pa.accumulate_grad(&da);
            Ok(())
        }),
    )
}

/// Clamp to `[lo, hi]`; gradient passes where the input lies inside.
pub fn clamp<T: Real>(a: &Tensor<T>, lo: T, hi: T) -> Result<Tensor<T>> {
    if lo > hi {
        return Err(TensorError::invalid("clamp", "lo > hi"));
    }
    let data: Vec<T> = a.data().iter().map(|&x| x.max(lo).min(hi)).collect();
    let pa = a.clone();
    Tensor::from_op(
        "clamp",
        a.shape(),
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<T> = {
                let ad = pa.data();
                g.iter()
                    .zip(ad.iter())
                    .map(|(&gi, &ai)| if ai >= lo && ai <= hi { gi } else { T::zero() })
                    .collect()
            };
            pa.accumulate_grad(&da);
            Ok(())
        }),
    )
}

/// Natural logarithm. Non-positive inputs surface as a non-finite error.
pub fn ln<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a.data().iter().map(|&x| x.ln()).collect();
    let pa = a.clone();
    Tensor::from_op(
        "ln",
        a.shape(),
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let da: Vec<T> = {
                let ad = pa.data();
                g.iter().zip(ad.iter()).map(|(&gi, &ai)| gi / ai).collect()
            };
            pa.accumulate_grad(&da);
            Ok(())
        }),
    )
}

pub fn reshape<T: Real>(a: &Tensor<T>, new_shape: &[usize]) -> Result<Tensor<T>> {
    let numel: usize = new_shape.iter().product();
    if numel != a.numel() {
        return Err(TensorError::shape(
            "reshape",
            format!("{:?} -> {:?}", a.shape(), new_shape),
        ));
    }
    let pa = a.clone();
    Tensor::from_op(
        "reshape",
        new_shape.to_vec(),
        a.to_vec(),
        vec![a.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(g);
            Ok(())
        }),
    )
}

/// Collapse all trailing dimensions: `[N, ...] -> [N, prod(...)]`.
pub fn flatten<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let s = a.shape();
    if s.is_empty() {
        return Err(TensorError::shape("flatten", "0-d tensor".to_string()));
    }
    let rest: usize = s[1..].iter().product();
    reshape(a, &[s[0], rest])
}

/// Concatenate `[N,Ci,H,W]` tensors along the channel dimension.
pub fn concat_channels<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(TensorError::invalid("concat_channels", "no inputs"));
    }
    let [n, _, h, w] = expect_nchw("concat_channels", &parts[0])?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = expect_nchw("concat_channels", p)?;
        if pn != n || ph != h || pw != w {
            return Err(TensorError::shape(
                "concat_channels",
                format!("{:?} vs {:?}", p.shape(), parts[0].shape()),
            ));
        }
        channels.push(pc);
    }
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = vec![T::zero(); n * c_total * plane];
    let mut offset_c = 0usize;
    for (p, &pc) in parts.iter().zip(&channels) {
        let pd = p.data();
        for ni in 0..n {
            let src = &pd[ni * pc * plane..(ni + 1) * pc * plane];
            let dst_start = ni * c_total * plane + offset_c * plane;
            data[dst_start..dst_start + pc * plane].copy_from_slice(src);
        }
        offset_c += pc;
    }
    let parents: Vec<Tensor<T>> = parts.to_vec();
    let handles: Vec<Tensor<T>> = parts.to_vec();
    Tensor::from_op(
        "concat_channels",
        vec![n, c_total, h, w],
        data,
        parents,
        Box::new(move |g| {
            let mut offset_c = 0usize;
            for (p, &pc) in handles.iter().zip(&channels) {
                let mut dp = vec![T::zero(); n * pc * plane];
                for ni in 0..n {
                    let src_start = ni * c_total * plane + offset_c * plane;
                    dp[ni * pc * plane..(ni + 1) * pc * plane]
                        .copy_from_slice(&g[src_start..src_start + pc * plane]);
                }
                p.accumulate_grad(&dp);
                offset_c += pc;
            }
            Ok(())
        }),
    )
}

/// Fully connected layer: `x[N,D] · w[C,D]^T + b[C]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let bs = b.shape();
    if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
        return Err(TensorError::shape(
            "linear",
            format!("x {:?}, w {:?}, b {:?}", xs, ws, bs),
        ));
    }
    let (n, d, c) = (xs[0], xs[1], ws[0]);
    let mut out = vec![T::zero(); n * c];
    {
        let xd = x.data();
        let wd = w.data();
        let bd = b.data();
        for ni in 0..n {
            let xrow = &xd[ni * d..(ni + 1) * d];
            for ci in 0..c {
                let wrow = &wd[ci * d..(ci + 1) * d];
                let mut acc = bd[ci];
                for di in 0..d {
                    acc += xrow[di] * wrow[di];
                }
                out[ni * c + ci] = acc;
            }
        }
    }
    let (px, pw, pb) = (x.clone(), w.clone(), b.clone());
    Tensor::from_op(
        "linear",
        vec![n, c],
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g| {
            let dx: Vec<T> = {
                let wd = pw.data();
                let mut dx = vec![T::zero(); n * d];
                for ni in 0..n {
                    for ci in 0..c {
                        let gi = g[ni * c + ci];
                        let wrow = &wd[ci * d..(ci + 1) * d];
                        let drow = &mut dx[ni * d..(ni + 1) * d];
                        for di in 0..d {
                            drow[di] += gi * wrow[di];
                        }
                    }
                }
                dx
            };
            let dw: Vec<T> = {
                let xd = px.data();
                let mut dw = vec![T::zero(); c * d];
                for ni in 0..n {
                    let xrow = &xd[ni * d..(ni + 1) * d];
                    for ci in 0..c {
                        let gi = g[ni * c + ci];
                        let wrow = &mut dw[ci * d..(ci + 1) * d];
                        for di in 0..d {
                            wrow[di] += gi * xrow[di];
                        }
                    }
                }
                dw
            };
            let mut db = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    db[ci] += g[ni * c + ci];
                }
            }
            px.accumulate_grad(&dx);
            pw.accumulate_grad(&dw);
            pb.accumulate_grad(&db);
            Ok(())
        }),
    )
}

/// Row-wise softmax over `[N,C]`, stabilized by max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(TensorError::shape("softmax", format!("{:?}", s)));
    }
    let (n, c) = (s[0], s[1]);
    let mut out = vec![T::zero(); n * c];
    {
        let xd = x.data();
        for ni in 0..n {
            let row = &xd[ni * c..(ni + 1) * c];
            let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (o, &v) in out[ni * c..(ni + 1) * c].iter_mut().zip(row) {
                let e = (v - m).exp();
                *o = e;
                denom += e;
            }
            for o in &mut out[ni * c..(ni + 1) * c] {
                *o = *o / denom;
            }
        }
    }
    let y = out.clone();
    let px = x.clone();
    Tensor::from_op(
        "softmax",
        vec![n, c],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * c];
            for ni in 0..n {
                let yr = &y[ni * c..(ni + 1) * c];
                let gr = &g[ni * c..(ni + 1) * c];
                let mut dot = T::zero();
                for (yi, gi) in yr.iter().zip(gr) {
                    dot += *yi * *gi;
                }
                for ((d, yi), gi) in dx[ni * c..(ni + 1) * c].iter_mut().zip(yr).zip(gr) {
                    *d = *yi * (*gi - dot);
                }
            }
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

/// Inverted dropout: survivors scaled by `1/(1-ratio)`; identity when
/// not training or `ratio == 0`. The mask is drawn element by element
/// from the caller's stream, so a fixed seed fixes the mask.
pub fn dropout<T: Real, R: Rng>(
    x: &Tensor<T>,
    ratio: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(TensorError::invalid(
            "dropout",
            format!("ratio {ratio} outside [0,1)"),
        ));
    }
    if !training || ratio == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = T::from_f64(1.0 / (1.0 - ratio));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| {
            let u: f64 = rng.gen();
            if u >= ratio {
                keep_scale
            } else {
                T::zero()
            }
        })
        .collect();
    let data: Vec<T> = x
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| v * m)
        .collect();
    let px = x.clone();
    Tensor::from_op(
        "dropout",
        x.shape(),
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let dx: Vec<T> = g.iter().zip(&mask).map(|(&gi, &m)| gi * m).collect();
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

/// Multiply `[N,C,H,W]` features by a `[N,1,H,W]` map, broadcast over
/// channels.
pub fn mul_channel_broadcast<T: Real>(x: &Tensor<T>, m: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("mul_channel_broadcast", x)?;
    let [mn, mc, mh, mw] = expect_nchw("mul_channel_broadcast", m)?;
    if mn != n || mc != 1 || mh != h || mw != w {
        return Err(TensorError::shape(
            "mul_channel_broadcast",
            format!("x {:?}, map {:?}", x.shape(), m.shape()),
        ));
    }
    let plane = h * w;
    let mut data = vec![T::zero(); n * c * plane];
    {
        let xd = x.data();
        let md = m.data();
        for ni in 0..n {
            let mrow = &md[ni * plane..(ni + 1) * plane];
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    data[base + i] = xd[base + i] * mrow[i];
                }
            }
        }
    }
    let (px, pm) = (x.clone(), m.clone());
    Tensor::from_op(
        "mul_channel_broadcast",
        vec![n, c, h, w],
        data,
        vec![x.clone(), m.clone()],
        Box::new(move |g| {
            let dx: Vec<T> = {
                let md = pm.data();
                let mut dx = vec![T::zero(); n * c * plane];
                for ni in 0..n {
                    let mrow = &md[ni * plane..(ni + 1) * plane];
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        for i in 0..plane {
                            dx[base + i] = g[base + i] * mrow[i];
                        }
                    }
                }
                dx
            };
            let dm: Vec<T> = {
                let xd = px.data();
                let mut dm = vec![T::zero(); n * plane];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        let mrow = &mut dm[ni * plane..(ni + 1) * plane];
                        for i in 0..plane {
                            mrow[i] += g[base + i] * xd[base + i];
                        }
                    }
                }
                dm
            };
            px.accumulate_grad(&dx);
            pm.accumulate_grad(&dm);
            Ok(())
        }),
    )
}

/// Weighted channel collapse with constant weights:
/// `out[n,0,h,w] = sum_c w[c,h,w] * x[n,c,h,w]`.
///
/// The weights are plain values, not graph nodes, so no gradient flows
/// into them (used for the classifier-weight side of the attention map).
pub fn mul_const_sum_channels<T: Real>(x: &Tensor<T>, weights: &[T]) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("mul_const_sum_channels", x)?;
    let plane = h * w;
    if weights.len() != c * plane {
        return Err(TensorError::shape(
            "mul_const_sum_channels",
            format!("weights len {} != C*H*W {}", weights.len(), c * plane),
        ));
    }
    let mut data = vec![T::zero(); n * plane];
    {
        let xd = x.data();
        for ni in 0..n {
            let orow = &mut data[ni * plane..(ni + 1) * plane];
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                let wrow = &weights[ci * plane..(ci + 1) * plane];
                for i in 0..plane {
                    orow[i] += wrow[i] * xd[base + i];
                }
            }
        }
    }
    let wsaved = weights.to_vec();
    let px = x.clone();
    Tensor::from_op(
        "mul_const_sum_channels",
        vec![n, 1, h, w],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * c * plane];
            for ni in 0..n {
                let grow = &g[ni * plane..(ni + 1) * plane];
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let wrow = &wsaved[ci * plane..(ci + 1) * plane];
                    for i in 0..plane {
                        dx[base + i] = grow[i] * wrow[i];
                    }
                }
            }
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

/// Multiply a tensor by a single-element tensor, broadcast everywhere.
/// Both factors receive gradients (used for architecture mixing).
pub fn mul_scalar_broadcast<T: Real>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    if s.numel() != 1 {
        return Err(TensorError::shape(
            "mul_scalar_broadcast",
            format!("scale has shape {:?}", s.shape()),
        ));
    }
    let sv = s.item();
    let data: Vec<T> = x.data().iter().map(|&v| v * sv).collect();
    let (px, ps) = (x.clone(), s.clone());
    Tensor::from_op(
        "mul_scalar_broadcast",
        x.shape(),
        data,
        vec![x.clone(), s.clone()],
        Box::new(move |g| {
            let dx: Vec<T> = g.iter().map(|&gi| gi * sv).collect();
            let ds: T = {
                let xd = px.data();
                let mut acc = T::zero();
                for (&gi, &xi) in g.iter().zip(xd.iter()) {
                    acc += gi * xi;
                }
                acc
            };
            px.accumulate_grad(&dx);
            ps.accumulate_grad(&[ds]);
            Ok(())
        }),
    )
}

/// Divide a tensor by a single-element tensor, broadcast everywhere.
pub fn div_scalar_broadcast<T: Real>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    if s.numel() != 1 {
        return Err(TensorError::shape(
            "div_scalar_broadcast",
            format!("divisor has shape {:?}", s.shape()),
        ));
    }
    let sv = s.item();
    let data: Vec<T> = x.data().iter().map(|&v| v / sv).collect();
    let (px, ps) = (x.clone(), s.clone());
    Tensor::from_op(
        "div_scalar_broadcast",
        x.shape(),
        data,
        vec![x.clone(), s.clone()],
        Box::new(move |g| {
            let dx: Vec<T> = g.iter().map(|&gi| gi / sv).collect();
            let ds: T = {
                let xd = px.data();
                let mut acc = T::zero();
                for (&gi, &xi) in g.iter().zip(xd.iter()) {
                    acc += gi * xi;
                }
                -acc / (sv * sv)
            };
            px.accumulate_grad(&dx);
            ps.accumulate_grad(&[ds]);
            Ok(())
        }),
    )
}

/// Extract one element as a `[1]` tensor; backward scatters into that
/// slot.
pub fn select_index<T: Real>(x: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
    if index >= x.numel() {
        return Err(TensorError::invalid(
            "select_index",
            format!("index {index} out of range for {} elements", x.numel()),
        ));
    }
    let v = x.data()[index];
    let px = x.clone();
    let n = x.numel();
    Tensor::from_op(
        "select_index",
        vec![1],
        vec![v],
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n];
            dx[index] = g[0];
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

/// Divide a `[N,1,H,W]` map by its spatial maximum per item. Items
/// whose maximum is at or below `floor` become all-ones maps and pass
/// no gradient. Backward routes the max's quotient term to the first
/// maximal element.
pub fn normalize_spatial_max<T: Real>(x: &Tensor<T>, floor: T) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("normalize_spatial_max", x)?;
    if c != 1 {
        return Err(TensorError::shape(
            "normalize_spatial_max",
            format!("expected single channel, got {c}"),
        ));
    }
    let plane = h * w;
    let mut maxes = vec![T::zero(); n];
    let mut argmax = vec![0usize; n];
    let mut degenerate = vec![false; n];
    let mut data = vec![T::zero(); n * plane];
    {
        let xd = x.data();
        for ni in 0..n {
            let row = &xd[ni * plane..(ni + 1) * plane];
            let mut m = row[0];
            let mut am = 0usize;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > m {
                    m = v;
                    am = i;
                }
            }
            maxes[ni] = m;
            argmax[ni] = am;
            let orow = &mut data[ni * plane..(ni + 1) * plane];
            if m <= floor {
                degenerate[ni] = true;
                for o in orow.iter_mut() {
                    *o = T::one();
                }
            } else {
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o = v / m;
                }
            }
        }
    }
    let px = x.clone();
    Tensor::from_op(
        "normalize_spatial_max",
        vec![n, 1, h, w],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let dx: Vec<T> = {
                let xd = px.data();
                let mut dx = vec![T::zero(); n * plane];
                for ni in 0..n {
                    if degenerate[ni] {
                        continue;
                    }
                    let m = maxes[ni];
                    let grow = &g[ni * plane..(ni + 1) * plane];
                    let xrow = &xd[ni * plane..(ni + 1) * plane];
                    let drow = &mut dx[ni * plane..(ni + 1) * plane];
                    let mut dot = T::zero();
                    for (gi, xi) in grow.iter().zip(xrow) {
                        dot += *gi * *xi;
                    }
                    for (d, gi) in drow.iter_mut().zip(grow) {
                        *d = *gi / m;
                    }
                    drow[argmax[ni]] += -dot / (m * m);
                }
                dx
            };
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

/// Bilinear upsampling (or downsampling) of `[N,C,h,w]` to
/// `[N,C,out_h,out_w]`, sampling at pixel centers with border clamping.
///
/// The interpolation is evaluated in lerp form so constant inputs map
/// to bit-identical constants.
pub fn bilinear_upsample2d<T: Real>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("bilinear_upsample2d", x)?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::invalid("bilinear_upsample2d", "zero output size"));
    }
    let ys = axis_samples::<T>(h, out_h);
    let xs = axis_samples::<T>(w, out_w);
    let mut data = vec![T::zero(); n * c * out_h * out_w];
    {
        let xd = x.data();
        for nc in 0..n * c {
            let src = &xd[nc * h * w..(nc + 1) * h * w];
            let dst = &mut data[nc * out_h * out_w..(nc + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let v00 = src[y0 * w + x0];
                    let v01 = src[y0 * w + x1];
                    let v10 = src[y1 * w + x0];
                    let v11 = src[y1 * w + x1];
                    let top = v00 + fx * (v01 - v00);
                    let bot = v10 + fx * (v11 - v10);
                    dst[oy * out_w + ox] = top + fy * (bot - top);
                }
            }
        }
    }
    let px = x.clone();
    let (ys_b, xs_b) = (ys, xs);
    Tensor::from_op(
        "bilinear_upsample2d",
        vec![n, c, out_h, out_w],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for nc in 0..n * c {
                let gd = &g[nc * out_h * out_w..(nc + 1) * out_h * out_w];
                let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ys_b.iter().enumerate() {
                    let wy1 = fy;
                    let wy0 = T::one() - fy;
                    for (ox, &(x0, x1, fx)) in xs_b.iter().enumerate() {
                        let gi = gd[oy * out_w + ox];
                        let wx1 = fx;
                        let wx0 = T::one() - fx;
                        dst[y0 * w + x0] += gi * wy0 * wx0;
                        dst[y0 * w + x1] += gi * wy0 * wx1;
                        dst[y1 * w + x0] += gi * wy1 * wx0;
                        dst[y1 * w + x1] += gi * wy1 * wx1;
                    }
                }
            }
            px.accumulate_grad(&dx);
            Ok(())
        }),
    )
}

/// For each output index along one axis: source neighbours and the
/// interpolation fraction, with pixel-center alignment and clamping.
fn axis_samples<T: Real>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, T::from_f64(src - i0 as f64))
        })
        .collect()
}
