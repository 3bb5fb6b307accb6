use crate::error::{Result, TensorError};
use crate::ops::{add, clamp, ln, mul, scale, sub, sum_all};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[EPS, 1-EPS]` before any logarithm.
pub const LOSS_PROB_EPS: f64 = 1e-7;

/// Which reading of the cross-entropy to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// Class-wise binary cross-entropy:
    /// `L_i = -sum_c [y_c ln p_c + (1-y_c) ln(1-p_c)]`.
    #[default]
    ClasswiseBinary,
    /// Plain softmax cross-entropy `L_i = -sum_c y_c ln p_c`,
    /// available for comparison.
    SoftmaxCe,
}

/// One-hot encode class indices into an untracked `[N,C]` tensor.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(TensorError::invalid(
                "one_hot",
                format!("label {l} out of range for {classes} classes"),
            ));
        }
        data[i * classes + l] = T::one();
    }
    Tensor::from_vec(&[labels.len(), classes], data)
}

fn check_rows_normalized<T: Real>(p: &Tensor<T>) -> Result<(usize, usize)> {
    let s = p.shape();
    if s.len() != 2 {
        return Err(TensorError::shape("loss", format!("{:?}", s)));
    }
    let (n, c) = (s[0], s[1]);
    let pd = p.data();
    for row in 0..n {
        let mut sum = 0.0f64;
        for ci in 0..c {
            sum += pd[row * c + ci].to_f64();
        }
        if (sum - 1.0).abs() > 1e-5 {
            return Err(TensorError::NotNormalized { row, sum });
        }
    }
    Ok((n, c))
}

/// Cross-entropy over probabilities with one-hot targets, applied
/// class-wise in the `p^y (1-p)^(1-y)` form and averaged over the
/// batch. Differentiable through the probabilities; the targets are
/// constants.
pub fn loss_eq9<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rows_normalized(p)?;
    if y.shape() != vec![n, c] {
        return Err(TensorError::shape(
            "loss_eq9",
            format!("targets {:?} vs probabilities {:?}", y.shape(), p.shape()),
        ));
    }
    let eps = T::from_f64(LOSS_PROB_EPS);
    let pc = clamp(p, eps, T::one() - eps)?;
    let ones = Tensor::full(&[n, c], T::one())?;
    let y_const = y.detach();
    let term_pos = mul(&y_const, &ln(&pc)?)?;
    let inv_y = sub(&ones, &y_const)?;
    let term_neg = mul(&inv_y, &ln(&sub(&ones, &pc)?)?)?;
    let total = sum_all(&add(&term_pos, &term_neg)?)?;
    scale(&total, -T::one() / T::from_f64(n as f64))
}

/// Plain softmax cross-entropy (mean over the batch), same clamping.
pub fn loss_softmax_ce<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rows_normalized(p)?;
    if y.shape() != vec![n, c] {
        return Err(TensorError::shape(
            "loss_softmax_ce",
            format!("targets {:?} vs probabilities {:?}", y.shape(), p.shape()),
        ));
    }
    let eps = T::from_f64(LOSS_PROB_EPS);
    let pc = clamp(p, eps, T::one() - eps)?;
    let total = sum_all(&mul(&y.detach(), &ln(&pc)?)?)?;
    scale(&total, -T::one() / T::from_f64(n as f64))
}
