use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

/// Default central-difference step for `f64` verification.
pub fn grad_check_default_step() -> f64 {
    1e-6
}

/// Compare the reverse-mode gradient of a scalar function against
/// central differences `(f(x+h) - f(x-h)) / 2h`, element by element.
///
/// Returns the maximum relative error, normalized per element by
/// `max(1, |analytic|, |numeric|)`. The probe tensor is restored to its
/// original values. Run in `f64` mode for tight tolerances.
pub fn grad_check<T, F>(f: &mut F, x: &Tensor<T>, h: T) -> Result<T>
where
    T: Real,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    if !x.tracked() {
        return Err(TensorError::invalid(
            "grad_check",
            "probe tensor must require gradients",
        ));
    }
    x.zero_grad();
    let out = f(x)?;
    if out.numel() != 1 {
        return Err(TensorError::invalid(
            "grad_check",
            "function under test must return a scalar",
        ));
    }
    out.backward()?;
    let analytic = x
        .grad()
        .ok_or_else(|| TensorError::invalid("grad_check", "no gradient reached the probe"))?;

    let original = x.to_vec();
    let two_h = h + h;
    let mut max_rel = T::zero();
    for i in 0..original.len() {
        let xi = original[i];
        x.set_element(i, xi + h);
        let f_plus = f(x)?.item();
        x.set_element(i, xi - h);
        let f_minus = f(x)?.item();
        x.set_element(i, xi);
        let numeric = (f_plus - f_minus) / two_h;
        let denom = T::one().max(analytic[i].abs()).max(numeric.abs());
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    x.zero_grad();
    Ok(max_rel)
}
