use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::Real;
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Zero-mean normal samples with standard deviation `sqrt(2 / fan_in)`.
pub fn kaiming_init<S: Real>(shape: Shape, fan_in: usize, seed: u64) -> Result<Tensor<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kaiming_with_rng(shape, fan_in, &mut rng)
}

pub(crate) fn kaiming_with_rng<S: Real>(shape: Shape, fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<S>> {
    if fan_in == 0 {
        return Err(Error::Parameter("fan_in must be positive".into()));
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::Parameter(e.to_string()))?;
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| S::of(normal.sample(rng))).collect())
}
