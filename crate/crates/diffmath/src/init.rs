use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::DiffError;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform initialization of a `fan_in x fan_out` matrix.
pub fn xavier_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Tensor, DiffError> {
    if fan_in == 0 || fan_out == 0 {
        return Err(DiffError::Shape { op: "xavier_init", detail: format!("zero dim in {fan_in}x{fan_out}") });
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(fan_in, fan_out, data)
}

/// [`xavier_uniform`] from a fresh seeded stream.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor, DiffError> {
    xavier_uniform(fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_within_bound() {
        let t = xavier_init(10, 20, 3).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(xavier_init(4, 5, 11).unwrap(), xavier_init(4, 5, 11).unwrap());
        assert_ne!(xavier_init(4, 5, 11).unwrap(), xavier_init(4, 5, 12).unwrap());
    }

    #[test]
    fn sample_mean_near_zero() {
        let t = xavier_init(100, 100, 5).unwrap();
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(xavier_init(0, 3, 1).is_err());
    }
}
