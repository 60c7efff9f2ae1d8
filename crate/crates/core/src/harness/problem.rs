use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::io::load_matrix;
use super::{derive_seed, Role};
use crate::error::{ensure_same_dim, Error, Result};
use crate::models::{
    blobs_model, gaussian_model, mixture1d_model, rbm_model, rbm_perturb, BlobsVariant, DensityModel, GibbsConfig,
    RbmParams, Sampler, MIXTURE1D_MEANS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    MeanShift,
    Blobs,
    Rbm,
    Mixture1d,
    External,
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::InvalidParameter(format!("unknown problem '{s}'")))
    }
}

/// Matrix files holding the samples from `P`, `Q` and `R`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalPaths {
    pub x: PathBuf,
    pub y: PathBuf,
    pub z: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub problem: ProblemKind,
    /// Sample size per trial, shared by `X`, `Y` and `Z`.
    pub n: usize,
    /// Input dimension (mean_shift: 50, rbm: 20).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// RBM hidden units (5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_h: Option<usize>,
    /// RBM perturbation of `p`; required for rbm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Weight of the left mode of `r` (mixture1d, default 0.5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_weight: Option<f64>,
    /// Gibbs burn-in for rbm (2000).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Seed for problem parameters fixed across trials.
    #[serde(default)]
    pub seed_problem: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<ExternalPaths>,
}

impl ProblemConfig {
    pub fn new(problem: ProblemKind, n: usize) -> Self {
        Self {
            problem,
            n,
            d: None,
            d_h: None,
            epsilon: None,
            left_weight: None,
            burn_in: None,
            seed_problem: 0,
            paths: None,
        }
    }

    pub fn mean_shift(n: usize) -> Self {
        Self::new(ProblemKind::MeanShift, n)
    }

    pub fn blobs(n: usize) -> Self {
        Self::new(ProblemKind::Blobs, n)
    }

    pub fn rbm(n: usize, epsilon: f64) -> Self {
        Self {
            epsilon: Some(epsilon),
            ..Self::new(ProblemKind::Rbm, n)
        }
    }

    pub fn mixture1d(n: usize, left_weight: f64) -> Self {
        Self {
            left_weight: Some(left_weight),
            ..Self::new(ProblemKind::Mixture1d, n)
        }
    }

    pub fn external(n: usize, paths: ExternalPaths) -> Self {
        Self {
            paths: Some(paths),
            ..Self::new(ProblemKind::External, n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidParameter(format!("n must be at least 4, got {}", self.n)));
        }
        let dim_ok = |v: Option<usize>| v.is_none_or(|d| d >= 1);
        if !dim_ok(self.d) || !dim_ok(self.d_h) {
            return Err(Error::InvalidParameter("dimensions must be at least 1".into()));
        }
        match self.problem {
            ProblemKind::Rbm if !self.epsilon.is_some_and(f64::is_finite) => {
                Err(Error::InvalidParameter("rbm problem requires a finite epsilon".into()))
            }
            ProblemKind::External if self.paths.is_none() => {
                Err(Error::InvalidParameter("external problem requires matrix paths".into()))
            }
            ProblemKind::Mixture1d if !self.left_weight.unwrap_or(0.5).is_finite() => {
                Err(Error::InvalidParameter("left_weight must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn gibbs(&self) -> GibbsConfig {
        GibbsConfig {
            burn_in: self.burn_in.unwrap_or(GibbsConfig::default().burn_in),
            ..GibbsConfig::default()
        }
    }
}

/// A model with both a score and a sampler.
pub trait ProblemModel: DensityModel + Sampler {}

impl<T: DensityModel + Sampler> ProblemModel for T {}

#[derive(Clone)]
enum Source {
    Models {
        p: Arc<dyn ProblemModel>,
        q: Arc<dyn ProblemModel>,
        r: Arc<dyn ProblemModel>,
    },
    Matrices {
        x: Arc<Array2<f64>>,
        y: Arc<Array2<f64>>,
        z: Arc<Array2<f64>>,
    },
}

/// Samples drawn for one trial. `x` and `y` are only drawn when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub x: Option<Array2<f64>>,
    pub y: Option<Array2<f64>>,
    pub z: Array2<f64>,
}

/// A problem instance: models (or matrices) fixed across trials.
#[derive(Clone)]
pub struct Problem {
    config: ProblemConfig,
    source: Source,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem").field("config", &self.config).finish_non_exhaustive()
    }
}

fn unit_vector_scaled(d: usize, scale: f64) -> Array1<f64> {
    let mut v = Array1::zeros(d);
    v[0] = scale;
    v
}

impl Problem {
    pub fn new(config: ProblemConfig) -> Result<Self> {
        config.validate()?;
        let source = match config.problem {
            ProblemKind::MeanShift => {
                let d = config.d.unwrap_or(50);
                Source::Models {
                    p: Arc::new(gaussian_model(unit_vector_scaled(d, 0.5), 1.0)?),
                    q: Arc::new(gaussian_model(unit_vector_scaled(d, 1.0), 1.0)?),
                    r: Arc::new(gaussian_model(Array1::zeros(d), 1.0)?),
                }
            }
            ProblemKind::Blobs => Source::Models {
                p: Arc::new(blobs_model(BlobsVariant::P)),
                q: Arc::new(blobs_model(BlobsVariant::Q)),
                r: Arc::new(blobs_model(BlobsVariant::R)),
            },
            ProblemKind::Rbm => {
                let base = RbmParams::random(config.d.unwrap_or(20), config.d_h.unwrap_or(5), config.seed_problem)?;
                let gibbs = config.gibbs();
                let eps = config.epsilon.expect("validated");
                Source::Models {
                    p: Arc::new(rbm_model(rbm_perturb(&base, eps)).with_gibbs(gibbs)),
                    q: Arc::new(rbm_model(rbm_perturb(&base, 0.3)).with_gibbs(gibbs)),
                    r: Arc::new(rbm_model(base).with_gibbs(gibbs)),
                }
            }
            ProblemKind::Mixture1d => {
                let (left, right) = MIXTURE1D_MEANS;
                Source::Models {
                    p: Arc::new(gaussian_model(Array1::from_elem(1, left), 1.0)?),
                    q: Arc::new(gaussian_model(Array1::from_elem(1, right), 1.0)?),
                    r: Arc::new(mixture1d_model(config.left_weight.unwrap_or(0.5))?),
                }
            }
            ProblemKind::External => {
                let paths = config.paths.as_ref().expect("validated");
                let x = load_matrix(&paths.x)?;
                let y = load_matrix(&paths.y)?;
                let z = load_matrix(&paths.z)?;
                ensure_same_dim("external matrix columns (X vs Z)", z.ncols(), x.ncols())?;
                ensure_same_dim("external matrix columns (Y vs Z)", z.ncols(), y.ncols())?;
                for (name, m) in [("X", &x), ("Y", &y), ("Z", &z)] {
                    if m.nrows() < config.n {
                        return Err(Error::InvalidParameter(format!(
                            "external {name} has {} rows, fewer than n = {}",
                            m.nrows(),
                            config.n
                        )));
                    }
                }
                Source::Matrices {
                    x: Arc::new(x),
                    y: Arc::new(y),
                    z: Arc::new(z),
                }
            }
        };
        Ok(Self { config, source })
    }

    /// Problem built from already loaded matrices (rows are observations).
    pub fn from_matrices(n: usize, x: Array2<f64>, y: Array2<f64>, z: Array2<f64>) -> Result<Self> {
        let config = ProblemConfig {
            paths: None,
            ..ProblemConfig::new(ProblemKind::External, n)
        };
        if n < 4 {
            return Err(Error::InvalidParameter(format!("n must be at least 4, got {n}")));
        }
        ensure_same_dim("external matrix columns (X vs Z)", z.ncols(), x.ncols())?;
        ensure_same_dim("external matrix columns (Y vs Z)", z.ncols(), y.ncols())?;
        if x.nrows().min(y.nrows()).min(z.nrows()) < n {
            return Err(Error::InvalidParameter(format!("external matrices have fewer than n = {n} rows")));
        }
        Ok(Self {
            config,
            source: Source::Matrices {
                x: Arc::new(x),
                y: Arc::new(y),
                z: Arc::new(z),
            },
        })
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            Source::Models { r, .. } => DensityModel::dim(r.as_ref()),
            Source::Matrices { z, .. } => z.ncols(),
        }
    }

    /// `(p, q)` when the problem has models with scores.
    pub fn models(&self) -> Option<(&dyn DensityModel, &dyn DensityModel)> {
        match &self.source {
            Source::Models { p, q, .. } => Some((p.as_ref() as &dyn DensityModel, q.as_ref() as &dyn DensityModel)),
            Source::Matrices { .. } => None,
        }
    }

    /// Sampler for the role's distribution (`X ~ p`, `Y ~ q`, `Z ~ r`).
    pub fn sampler(&self, role: Role) -> Option<&dyn Sampler> {
        match &self.source {
            Source::Models { p, q, r } => Some(match role {
                Role::X => p.as_ref() as &dyn Sampler,
                Role::Y => q.as_ref() as &dyn Sampler,
                _ => r.as_ref() as &dyn Sampler,
            }),
            Source::Matrices { .. } => None,
        }
    }

    /// Draws the sample of one role for the trial with seed `trial_seed`.
    pub fn draw_role(&self, role: Role, trial_seed: u64) -> Result<Array2<f64>> {
        let seed = derive_seed(trial_seed, role as u64);
        let n = self.config.n;
        match &self.source {
            Source::Models { .. } => self.sampler(role).expect("models present").sample(n, seed),
            Source::Matrices { x, y, z } => {
                let m = match role {
                    Role::X => x,
                    Role::Y => y,
                    _ => z,
                };
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                let idx = rand::seq::index::sample(&mut rng, m.nrows(), n).into_vec();
                Ok(m.select(Axis(0), &idx))
            }
        }
    }

    /// Candidate locations: fresh draws from `r`, or rows of the `Z` matrix.
    pub fn draw_pool(&self, size: usize, trial_seed: u64) -> Result<Array2<f64>> {
        let seed = derive_seed(trial_seed, Role::Pool as u64);
        match &self.source {
            Source::Models { r, .. } => r.sample(size, seed),
            Source::Matrices { z, .. } => {
                if size > z.nrows() {
                    return Err(Error::InvalidParameter(format!(
                        "pool of {size} exceeds the {} rows of Z",
                        z.nrows()
                    )));
                }
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                let idx = rand::seq::index::sample(&mut rng, z.nrows(), size).into_vec();
                Ok(z.select(Axis(0), &idx))
            }
        }
    }

    pub fn draw(&self, trial_seed: u64, need_xy: bool) -> Result<TrialData> {
        Ok(TrialData {
            x: need_xy.then(|| self.draw_role(Role::X, trial_seed)).transpose()?,
            y: need_xy.then(|| self.draw_role(Role::Y, trial_seed)).transpose()?,
            z: self.draw_role(Role::Z, trial_seed)?,
        })
    }
}
