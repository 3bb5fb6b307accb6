use crate::error::{Result, TensorError};
use crate::ops::expect_nchw;
use crate::tensor::{Real, Tensor};

/// Per-channel batch normalization state.
///
/// `gamma`/`beta` are learnable parameters; the running statistics are
/// plain buffers updated in training mode and used in eval mode.
pub struct BatchNormState<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: f64,
    channels: usize,
}

impl<T: Real> BatchNormState<T> {
    /// Fresh state: unit gamma, zero beta, zero mean, unit variance,
    /// eps 1e-5, running-stat momentum 0.1.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNormState {
            gamma: Tensor::parameter(&[channels], vec![T::one(); channels])?,
            beta: Tensor::parameter(&[channels], vec![T::zero(); channels])?,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64(1e-5),
            momentum: 0.1,
            channels,
        })
    }

    /// Assemble a state from existing tensors and buffers (checkpoint
    /// loading, shared-parameter setups).
    pub fn from_parts(
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        eps: T,
        momentum: f64,
    ) -> Result<Self> {
        let channels = gamma.numel();
        if gamma.shape() != vec![channels]
            || beta.shape() != vec![channels]
            || running_mean.len() != channels
            || running_var.len() != channels
        {
            return Err(TensorError::shape(
                "batchnorm_state",
                "gamma, beta and running stats must share one [C] shape".to_string(),
            ));
        }
        if running_var.iter().any(|v| *v <= T::zero() || !v.is_finite()) {
            return Err(TensorError::invalid(
                "batchnorm_state",
                "running variance must be strictly positive",
            ));
        }
        Ok(BatchNormState {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
            momentum,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Batch normalization over `[N,C,H,W]`.
///
/// Training mode normalizes with batch statistics and updates the
/// running statistics; eval mode is a deterministic affine map using
/// the running statistics. Differentiable w.r.t. input, gamma and beta
/// (including the statistics path in training mode).
pub fn batchnorm2d<T: Real>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
    training: bool,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = expect_nchw("batchnorm2d", x)?;
    if c != state.channels {
        return Err(TensorError::shape(
            "batchnorm2d",
            format!("input has {c} channels, state has {}", state.channels),
        ));
    }
    let plane = h * w;
    let m = n * plane;
    if m == 0 {
        return Err(TensorError::invalid("batchnorm2d", "empty batch"));
    }
    let m_t = T::from_f64(m as f64);

    let (mean, invstd) = if training {
        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ci in 0..c {
            let mut acc = T::zero();
            for ni in 0..n {
                let p = &xd[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                for &v in p {
                    acc += v;
                }
            }
            let mu = acc / m_t;
            let mut vacc = T::zero();
            for ni in 0..n {
                let p = &xd[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                for &v in p {
                    let d = v - mu;
                    vacc += d * d;
                }
            }
            mean[ci] = mu;
            var[ci] = vacc / m_t;
        }
        drop(xd);
        let mom = T::from_f64(state.momentum);
        let one_m = T::one() - mom;
        for ci in 0..c {
            state.running_mean[ci] = one_m * state.running_mean[ci] + mom * mean[ci];
            let unbiased = if m > 1 {
                var[ci] * m_t / T::from_f64((m - 1) as f64)
            } else {
                var[ci]
            };
            state.running_var[ci] = one_m * state.running_var[ci] + mom * unbiased;
        }
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
        (mean, invstd)
    } else {
        let invstd: Vec<T> = state
            .running_var
            .iter()
            .map(|&v| T::one() / (v + state.eps).sqrt())
            .collect();
        (state.running_mean.clone(), invstd)
    };

    let mut out = vec![T::zero(); n * c * plane];
    {
        let xd = x.data();
        let gd = state.gamma.data();
        let bd = state.beta.data();
        for ni in 0..n {
            for ci in 0..c {
                let src = &xd[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let dst = &mut out[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let (mu, is, ga, be) = (mean[ci], invstd[ci], gd[ci], bd[ci]);
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = ga * (v - mu) * is + be;
                }
            }
        }
    }

    let px = x.clone();
    let pg = state.gamma.clone();
    let pb = state.beta.clone();
    let parents = vec![x.clone(), state.gamma.clone(), state.beta.clone()];
    Tensor::from_op(
        "batchnorm2d",
        vec![n, c, h, w],
        out,
        parents,
        Box::new(move |g| {
            // dgamma = sum g*xhat, dbeta = sum g, and for training mode
            // dx = gamma*invstd*(g - mean(g) - xhat*mean(g*xhat)).
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            {
                let xd = px.data();
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        let (mu, is) = (mean[ci], invstd[ci]);
                        let mut sg = T::zero();
                        let mut sgx = T::zero();
                        for i in 0..plane {
                            let gi = g[base + i];
                            let xhat = (xd[base + i] - mu) * is;
                            sg += gi;
                            sgx += gi * xhat;
                        }
                        sum_g[ci] += sg;
                        sum_gx[ci] += sgx;
                    }
                }
            }
            for ci in 0..c {
                dgamma[ci] = sum_gx[ci];
                dbeta[ci] = sum_g[ci];
            }
            let dx: Vec<T> = {
                let xd = px.data();
                let gad = pg.data();
                let mut dx = vec![T::zero(); n * c * plane];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        let (mu, is, ga) = (mean[ci], invstd[ci], gad[ci]);
                        if training {
                            let mg = sum_g[ci] / m_t;
                            let mgx = sum_gx[ci] / m_t;
                            for i in 0..plane {
                                let xhat = (xd[base + i] - mu) * is;
                                dx[base + i] = ga * is * (g[base + i] - mg - xhat * mgx);
                            }
                        } else {
                            for i in 0..plane {
                                dx[base + i] = ga * is * g[base + i];
                            }
                        }
                    }
                }
                dx
            };
            px.accumulate_grad(&dx);
            pg.accumulate_grad(&dgamma);
            pb.accumulate_grad(&dbeta);
            Ok(())
        }),
    )
}
