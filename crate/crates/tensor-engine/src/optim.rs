use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

/// SGD with momentum and coupled weight decay.
///
/// Update rule per parameter: `v <- m*v + g + wd*w; w <- w - lr*v`,
/// with zero-initialized velocity buffers. Deterministic given the
/// gradients.
pub struct OptimizerState<T: Real> {
    pub learning_rate: T,
    pub momentum: T,
    pub weight_decay: T,
    params: Vec<Tensor<T>>,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: Vec<Tensor<T>>, learning_rate: T, momentum: T, weight_decay: T) -> Self {
        let velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            params,
            velocity,
        }
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Apply one update using the gradients accumulated by `backward`.
    /// Every registered parameter must carry a gradient; non-finite
    /// gradients are an error.
    pub fn step(&mut self) -> Result<()> {
        let lr = self.learning_rate;
        let m = self.momentum;
        let wd = self.weight_decay;
        for (index, (p, v)) in self.params.iter().zip(self.velocity.iter_mut()).enumerate() {
            let grad = p.grad().ok_or(TensorError::MissingGrad { index })?;
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(TensorError::NonFinite { op: "sgd_step" });
            }
            p.update_data(|w| {
                for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(&grad) {
                    *vi = m * *vi + *gi + wd * *wi;
                    *wi -= lr * *vi;
                }
            });
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
