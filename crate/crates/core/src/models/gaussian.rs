use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DensityModel, Sampler};
use crate::error::{Error, Result};

/// `N(mean, variance * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    mean: Array1<f64>,
    variance: f64,
}

pub fn gaussian_model(mean: Array1<f64>, variance: f64) -> Result<IsotropicGaussian> {
    if !(variance.is_finite() && variance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variance must be finite and positive, got {variance}"
        )));
    }
    if mean.is_empty() || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "mean must be a non-empty finite vector".into(),
        ));
    }
    Ok(IsotropicGaussian { mean, variance })
}

impl IsotropicGaussian {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl DensityModel for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_into(&self, z: ArrayView1<f64>, out: &mut [f64]) {
        for ((o, m), zi) in out.iter_mut().zip(&self.mean).zip(z) {
            *o = (m - zi) / self.variance;
        }
    }
}

impl Sampler for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = self.variance.sqrt();
        let d = self.mean.len();
        Ok(Array2::from_shape_fn((n, d), |(_, j)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            self.mean[j] + sd * e
        }))
    }
}
