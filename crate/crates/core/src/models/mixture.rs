use std::f64::consts::PI;

use ndarray::{array, Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DensityModel, Sampler};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Component {
    mean: Array1<f64>,
    /// Lower Cholesky factor of the covariance.
    chol: Array2<f64>,
    precision: Array2<f64>,
    log_weight_norm: f64,
}

/// Finite mixture of full-covariance Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Array1<f64>>, covariances: Vec<Array2<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(Error::InvalidParameter(
                "mixture needs matching, non-empty weights, means and covariances".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let dim = means[0].len();
        let mut components = Vec::with_capacity(weights.len());
        for ((w, mean), cov) in weights.iter().zip(means).zip(covariances) {
            if mean.len() != dim || cov.dim() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    context: "mixture component",
                    expected: dim,
                    found: mean.len(),
                });
            }
            let chol = cholesky(&cov)?;
            let precision = inverse_from_cholesky(&chol);
            let log_det: f64 = 2.0 * chol.diag().iter().map(|v| v.ln()).sum::<f64>();
            components.push(Component {
                mean,
                chol,
                precision,
                log_weight_norm: w.ln() - 0.5 * log_det,
            });
        }
        Ok(Self {
            dim,
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> Vec<Array1<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    /// Component log-densities up to a shared constant.
    fn component_log_terms(&self, z: ArrayView1<f64>, diffs: &mut [Array1<f64>]) -> Vec<f64> {
        self.components
            .iter()
            .zip(diffs.iter_mut())
            .map(|(c, diff)| {
                diff.assign(&(&c.mean - &z));
                let maha = diff.dot(&c.precision.dot(diff));
                c.log_weight_norm - 0.5 * maha
            })
            .collect()
    }
}

impl DensityModel for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, z: ArrayView1<f64>, out: &mut [f64]) {
        let mut diffs = vec![Array1::zeros(self.dim); self.components.len()];
        let logs = self.component_log_terms(z, &mut diffs);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((c, diff), u) in self.components.iter().zip(&diffs).zip(&unnorm) {
            let resp = u / total;
            let s = c.precision.dot(diff);
            for (o, si) in out.iter_mut().zip(s.iter()) {
                *o += resp * si;
            }
        }
    }
}

impl Sampler for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((n, self.dim));
        let mut eps = Array1::zeros(self.dim);
        for mut row in out.rows_mut() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let c = &self.components[pick];
            eps.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
            row.assign(&(&c.mean + &c.chol.dot(&eps)));
        }
        Ok(out)
    }
}

fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut s = a[[j, j]];
        for k in 0..j {
            s -= l[[j, k]] * l[[j, k]];
        }
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(
                "covariance matrix is not positive definite".into(),
            ));
        }
        l[[j, j]] = s.sqrt();
        for i in (j + 1)..n {
            let mut t = a[[i, j]];
            for k in 0..j {
                t -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = t / l[[j, j]];
        }
    }
    Ok(l)
}

fn inverse_from_cholesky(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    // L^{-1} by forward substitution, then (L L')^{-1} = L^{-T} L^{-1}
    let mut linv = Array2::<f64>::zeros((n, n));
    for col in 0..n {
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[[i, k]] * linv[[k, col]];
            }
            linv[[i, col]] = s / l[[i, i]];
        }
    }
    linv.t().dot(&linv)
}

/// The three distributions of the Blobs problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobsVariant {
    P,
    Q,
    R,
}

/// Grid spacing of the four Blobs centres.
pub const BLOBS_SPACING: f64 = 5.0;
/// Long/short eigenvalue ratio of the component covariances of `q` and `p`.
pub const BLOBS_Q_RATIO: f64 = 2.0;
pub const BLOBS_P_RATIO: f64 = 4.0;

/// Four equal-weight Gaussians centred on `{0, 5}^2`.
///
/// `r` has isotropic unit components. `q` and `p` have components stretched
/// along the diagonal (rotation `pi/4`, unit determinant) with eigenvalue
/// ratios 2 and 4, so `q` is closer to `r` than `p` is and the difference
/// lives at the scale of a single blob.
pub fn blobs_model(variant: BlobsVariant) -> GaussianMixture {
    let ratio = match variant {
        BlobsVariant::R => 1.0,
        BlobsVariant::Q => BLOBS_Q_RATIO,
        BlobsVariant::P => BLOBS_P_RATIO,
    };
    let cov = rotated_covariance(ratio.sqrt(), ratio.sqrt().recip(), PI / 4.0);
    let mut means = Vec::with_capacity(4);
    for a in [0.0, BLOBS_SPACING] {
        for b in [0.0, BLOBS_SPACING] {
            means.push(array![a, b]);
        }
    }
    GaussianMixture::new(vec![0.25; 4], means, vec![cov; 4]).expect("valid preset")
}

fn rotated_covariance(long: f64, short: f64, angle: f64) -> Array2<f64> {
    let (s, c) = angle.sin_cos();
    let rot = array![[c, -s], [s, c]];
    let diag = array![[long, 0.0], [0.0, short]];
    rot.dot(&diag).dot(&rot.t())
}

/// Component means of the 1-D two-mode problem: `p = N(-2, 1)`, `q = N(2, 1)`.
pub const MIXTURE1D_MEANS: (f64, f64) = (-2.0, 2.0);

/// Reference mixture `w N(-2, 1) + (1 - w) N(2, 1)`.
pub fn mixture1d_model(left_weight: f64) -> Result<GaussianMixture> {
    if !(left_weight > 0.0 && left_weight < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "left mixing proportion must lie in (0, 1), got {left_weight}"
        )));
    }
    let (a, b) = MIXTURE1D_MEANS;
    GaussianMixture::new(
        vec![left_weight, 1.0 - left_weight],
        vec![array![a], array![b]],
        vec![array![[1.0]], array![[1.0]]],
    )
}
