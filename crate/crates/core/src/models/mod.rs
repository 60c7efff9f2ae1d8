//! Synthetic models: isotropic Gaussians, Gaussian mixtures (including the
//! Blobs grid and the 1-D two-mode mixture) and the Gaussian-Bernoulli RBM.
//!
//! Models expose their score `grad_z log q(z)` only. Normalising constants
//! are never needed and never computed.

mod gaussian;
mod mixture;
mod rbm;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{ensure_same_dim, Error, Result};

pub use gaussian::{gaussian_model, IsotropicGaussian};
pub use mixture::{blobs_model, mixture1d_model, BlobsVariant, GaussianMixture, MIXTURE1D_MEANS};
pub use rbm::{rbm_model, rbm_perturb, rbm_sample, GaussBernRbm, GibbsConfig, RbmParams};

/// A density known up to its normaliser, through its score function.
pub trait DensityModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `grad_z log q(z)` into `out` (length `dim`). Inputs are assumed
    /// to have the right length.
    fn score_into(&self, z: ArrayView1<f64>, out: &mut [f64]);

    fn score(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        ensure_same_dim("score evaluation", self.dim(), z.len())?;
        let mut out = vec![0.0; self.dim()];
        self.score_into(z, &mut out);
        if let Some((coordinate, &value)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteScore { coordinate, value });
        }
        Ok(Array1::from(out))
    }

    /// Scores of every row, `n x d`; fails on the first non-finite entry.
    fn score_matrix(&self, sample: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_same_dim("score evaluation", self.dim(), sample.ncols())?;
        let mut out = Array2::zeros((sample.nrows(), self.dim()));
        for (z, mut row) in sample.rows().into_iter().zip(out.rows_mut()) {
            let slot = row.as_slice_mut().expect("fresh array is contiguous");
            self.score_into(z, slot);
            if let Some((coordinate, &value)) =
                slot.iter().enumerate().find(|(_, v)| !v.is_finite())
            {
                return Err(Error::NonFiniteScore { coordinate, value });
            }
        }
        Ok(out)
    }
}

/// Something that can draw i.i.d. (or approximately i.i.d.) samples.
pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;

    /// `n x dim` sample; identical for identical seeds.
    fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>>;
}

impl<T: DensityModel + ?Sized> DensityModel for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score_into(&self, z: ArrayView1<f64>, out: &mut [f64]) {
        (**self).score_into(z, out)
    }
}

impl<T: DensityModel + ?Sized> DensityModel for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score_into(&self, z: ArrayView1<f64>, out: &mut [f64]) {
        (**self).score_into(z, out)
    }
}
