//! Gaussian-Bernoulli RBM with hidden units in `{-1, 1}`:
//! `p(x, h) ∝ exp(x'Bh + b'x + c'h - |x|^2 / 2)`.
//!
//! Summing out `h` gives `p(x) ∝ exp(b'x - |x|^2/2) prod_j 2 cosh((B'x + c)_j)`,
//! hence the score `b - x + B tanh(B'x + c)`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DensityModel, Sampler};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmParams {
    /// `d x d_h` coupling matrix.
    pub weights: Array2<f64>,
    /// Visible bias, length `d`.
    pub visible_bias: Array1<f64>,
    /// Hidden bias, length `d_h`.
    pub hidden_bias: Array1<f64>,
}

impl RbmParams {
    pub fn new(weights: Array2<f64>, visible_bias: Array1<f64>, hidden_bias: Array1<f64>) -> Result<Self> {
        let (d, dh) = weights.dim();
        if d == 0 || dh == 0 {
            return Err(Error::InvalidParameter("RBM needs d >= 1 and d_h >= 1".into()));
        }
        if visible_bias.len() != d {
            return Err(Error::DimensionMismatch {
                context: "RBM visible bias",
                expected: d,
                found: visible_bias.len(),
            });
        }
        if hidden_bias.len() != dh {
            return Err(Error::DimensionMismatch {
                context: "RBM hidden bias",
                expected: dh,
                found: hidden_bias.len(),
            });
        }
        let finite = weights.iter().chain(&visible_bias).chain(&hidden_bias).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("RBM parameters must be finite".into()));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            visible_bias,
            hidden_bias,
        })
    }

    /// Weights uniform on `{-1, 1}`, biases standard normal.
    pub fn random(d: usize, dh: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Array2::from_shape_fn((d, dh), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let visible_bias = Array1::from_shape_fn(d, |_| rng.sample(StandardNormal));
        let hidden_bias = Array1::from_shape_fn(dh, |_| rng.sample(StandardNormal));
        Self::new(weights, visible_bias, hidden_bias)
    }

    pub fn visible_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Adds `epsilon` to the first coupling weight `B[0, 0]` and nothing else.
pub fn rbm_perturb(params: &RbmParams, epsilon: f64) -> RbmParams {
    let mut out = params.clone();
    out.weights[[0, 0]] += epsilon;
    out
}

/// Block-Gibbs settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub burn_in: usize,
    /// Steps between retained states of the same chain (>= 1).
    pub thinning: usize,
    /// Number of independent chains; `None` runs one chain per requested state.
    pub chains: Option<usize>,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 2000,
            thinning: 1,
            chains: None,
        }
    }
}

/// RBM density with a block-Gibbs sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussBernRbm {
    params: RbmParams,
    gibbs: GibbsConfig,
}

pub fn rbm_model(params: RbmParams) -> GaussBernRbm {
    GaussBernRbm {
        params,
        gibbs: GibbsConfig::default(),
    }
}

impl GaussBernRbm {
    pub fn with_gibbs(mut self, gibbs: GibbsConfig) -> Self {
        self.gibbs = gibbs;
        self
    }

    pub fn params(&self) -> &RbmParams {
        &self.params
    }
}

impl DensityModel for GaussBernRbm {
    fn dim(&self) -> usize {
        self.params.visible_dim()
    }

    fn score_into(&self, z: ArrayView1<f64>, out: &mut [f64]) {
        let p = &self.params;
        let act = p.weights.t().dot(&z) + &p.hidden_bias;
        let t = act.mapv(f64::tanh);
        let bt = p.weights.dot(&t);
        for (i, o) in out.iter_mut().enumerate() {
            *o = p.visible_bias[i] - z[i] + bt[i];
        }
    }
}

impl Sampler for GaussBernRbm {
    fn dim(&self) -> usize {
        self.params.visible_dim()
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        rbm_sample(&self.params, n, seed, &self.gibbs)
    }
}

/// Draws `n` states by block Gibbs sampling, alternating
/// `h_j | x ~ ±1 with P(h_j = 1) = logistic(2 (B'x + c)_j)` and
/// `x | h ~ N(Bh + b, I)`. Chains start from `N(b, I)`.
pub fn rbm_sample(params: &RbmParams, n: usize, seed: u64, gibbs: &GibbsConfig) -> Result<Array2<f64>> {
    if gibbs.thinning == 0 {
        return Err(Error::InvalidParameter("Gibbs thinning must be at least 1".into()));
    }
    if gibbs.chains == Some(0) {
        return Err(Error::InvalidParameter("Gibbs sampler needs at least one chain".into()));
    }
    let (d, dh) = params.weights.dim();
    let chains = gibbs.chains.unwrap_or(n).min(n.max(1));
    let weights = params.weights.as_slice().expect("standard layout");
    let weights_t = params.weights.t().as_standard_layout().into_owned();
    let weights_t = weights_t.as_slice().expect("standard layout");
    let b = params.visible_bias.as_slice().expect("contiguous");
    let c = params.hidden_bias.as_slice().expect("contiguous");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, d));
    let mut x = vec![0.0; d];
    let mut h = vec![0.0; dh];

    let step = |x: &mut [f64], h: &mut [f64], rng: &mut ChaCha8Rng| {
        for (j, hj) in h.iter_mut().enumerate() {
            let col = &weights_t[j * d..(j + 1) * d];
            let a = c[j] + col.iter().zip(x.iter()).map(|(w, xi)| w * xi).sum::<f64>();
            let p_up = 1.0 / (1.0 + (-2.0 * a).exp());
            *hj = if rng.random::<f64>() < p_up { 1.0 } else { -1.0 };
        }
        for (i, xi) in x.iter_mut().enumerate() {
            let row = &weights[i * dh..(i + 1) * dh];
            let m = b[i] + row.iter().zip(h.iter()).map(|(w, hj)| w * hj).sum::<f64>();
            *xi = m + rng.sample::<f64, _>(StandardNormal);
        }
    };

    let per_chain = n.div_ceil(chains.max(1));
    let mut filled = 0;
    for _ in 0..chains {
        for (xi, bi) in x.iter_mut().zip(b) {
            *xi = bi + rng.sample::<f64, _>(StandardNormal);
        }
        for _ in 0..gibbs.burn_in {
            step(&mut x, &mut h, &mut rng);
        }
        for k in 0..per_chain {
            if filled == n {
                break;
            }
            let steps = if k == 0 { 1 } else { gibbs.thinning };
            for _ in 0..steps {
                step(&mut x, &mut h, &mut rng);
            }
            out.row_mut(filled).assign(&ndarray::aview1(&x));
            filled += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testing::{assert_close, fd_gradient};
    use super::*;
    use ndarray::{array, Axis};

    /// log sum_h exp(x'Bh + b'x + c'h - |x|^2/2) by enumerating all h.
    fn log_density_by_enumeration(p: &RbmParams, x: &[f64]) -> f64 {
        let (d, dh) = p.weights.dim();
        let mut terms = vec![];
        for mask in 0..(1usize << dh) {
            let h: Vec<f64> = (0..dh).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let mut e = 0.0;
            for i in 0..d {
                for j in 0..dh {
                    e += x[i] * p.weights[[i, j]] * h[j];
                }
                e += p.visible_bias[i] * x[i] - 0.5 * x[i] * x[i];
            }
            for j in 0..dh {
                e += p.hidden_bias[j] * h[j];
            }
            terms.push(e);
        }
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn zero_coupling_gives_gaussian_score() {
        let p = RbmParams::new(Array2::zeros((3, 2)), array![0.5, -1.0, 2.0], array![0.3, 0.1]).unwrap();
        let m = rbm_model(p);
        let x = array![1.0, 1.0, 1.0];
        assert_eq!(m.score(x.view()).unwrap(), array![-0.5, -2.0, 1.0]);
    }

    #[test]
    fn score_matches_latent_enumeration() {
        for (d, dh, seed) in [(2, 3, 1u64), (4, 8, 2), (3, 5, 3)] {
            let p = RbmParams::random(d, dh, seed).unwrap();
            let m = rbm_model(p.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..20 {
                let x = Array1::from_shape_fn(d, |_| 2.0 * rng.sample::<f64, _>(StandardNormal));
                let fd = fd_gradient(|z| log_density_by_enumeration(&p, z), x.view(), 1e-5);
                assert_close(&m.score(x.view()).unwrap(), &fd, 1e-6);
            }
        }
    }

    #[test]
    fn random_problem_parameters_have_finite_scores() {
        let p = RbmParams::random(20, 5, 42).unwrap();
        assert!(p.weights.iter().all(|&w| w == 1.0 || w == -1.0));
        let gibbs = GibbsConfig { burn_in: 200, ..GibbsConfig::default() };
        let s = rbm_sample(&p, 100, 7, &gibbs).unwrap();
        let scores = rbm_model(p).score_matrix(s.view()).unwrap();
        assert!(scores.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn perturbation_touches_one_entry_and_composes() {
        let p = RbmParams::random(4, 3, 9).unwrap();
        assert_eq!(rbm_perturb(&p, 0.0), p);
        let q = rbm_perturb(&p, 0.3);
        assert_eq!(q.weights[[0, 0]], p.weights[[0, 0]] + 0.3);
        let mut diff = &q.weights - &p.weights;
        diff[[0, 0]] = 0.0;
        assert!(diff.iter().all(|&v| v == 0.0));
        let twice = rbm_perturb(&rbm_perturb(&p, 0.25), 0.5);
        assert!((twice.weights[[0, 0]] - rbm_perturb(&p, 0.75).weights[[0, 0]]).abs() < 1e-15);
    }

    #[test]
    fn decoupled_chain_samples_the_visible_gaussian() {
        let p = RbmParams::new(Array2::zeros((3, 2)), array![1.0, -2.0, 0.5], array![0.0, 1.0]).unwrap();
        let n = 3000;
        let s = rbm_sample(&p, n, 1, &GibbsConfig { burn_in: 5, ..Default::default() }).unwrap();
        let m = s.mean_axis(Axis(0)).unwrap();
        for (mi, bi) in m.iter().zip(&p.visible_bias) {
            assert!((mi - bi).abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn stationary_samples_satisfy_the_stein_identity() {
        // E_p[score(x)] = 0 when x ~ p; a weakly coupled RBM mixes quickly
        let p = RbmParams::new(
            array![[0.6, -0.4], [0.3, 0.5]],
            array![0.2, -0.3],
            array![0.1, -0.2],
        )
        .unwrap();
        let n = 4000;
        let s = rbm_sample(&p, n, 3, &GibbsConfig { burn_in: 50, thinning: 3, chains: Some(40) }).unwrap();
        let scores = rbm_model(p).score_matrix(s.view()).unwrap();
        let mean = scores.mean_axis(Axis(0)).unwrap();
        let sd = scores.std_axis(Axis(0), 1.0);
        for (m, s) in mean.iter().zip(&sd) {
            // generous band: thinned chains are mildly autocorrelated
            assert!(m.abs() < 5.0 * s / (n as f64).sqrt(), "mean score {m}");
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let p = RbmParams::random(5, 3, 1).unwrap();
        let g = GibbsConfig { burn_in: 20, thinning: 2, chains: Some(4) };
        let a = rbm_sample(&p, 30, 11, &g).unwrap();
        assert_eq!(a, rbm_sample(&p, 30, 11, &g).unwrap());
        assert_ne!(a, rbm_sample(&p, 30, 12, &g).unwrap());
        assert_eq!(a.nrows(), 30);
    }

    #[test]
    fn invalid_gibbs_config() {
        let p = RbmParams::random(2, 2, 1).unwrap();
        let bad = GibbsConfig { thinning: 0, ..Default::default() };
        assert!(rbm_sample(&p, 10, 1, &bad).is_err());
        let bad = GibbsConfig { chains: Some(0), ..Default::default() };
        assert!(rbm_sample(&p, 10, 1, &bad).is_err());
    }
}
