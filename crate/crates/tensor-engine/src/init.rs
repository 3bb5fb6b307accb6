use rand::Rng;

use crate::tensor::Real;

/// Uniform draw in `±bound`. Values are sampled as `f64` and converted,
/// so a given seed produces the same weights in both precision modes.
pub fn uniform_in<T: Real, R: Rng>(len: usize, bound: f64, rng: &mut R) -> Vec<T> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen();
            T::from_f64((2.0 * u - 1.0) * bound)
        })
        .collect()
}

/// ReLU-appropriate init: uniform in `±sqrt(6/fan_in)`.
pub fn kaiming_uniform<T: Real, R: Rng>(len: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    uniform_in(len, (6.0 / fan_in as f64).sqrt(), rng)
}
