//! Choosing test locations and the kernel bandwidth.
//!
//! The optimizers maximize the power criterion `S / (gamma + sqrt(nu))` on a
//! training split by gradient ascent over the `J x d` location coordinates and
//! `log sigma^2`, with `V = W` and one kernel shared by both candidates.
//! Gradients are analytic. Pool scoring and greedy selection search a finite
//! set of candidate locations instead.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_rows, ensure_same_dim, Error, Result};
use crate::fssd::{features_from_scores, rel_fssd_from_features};
use crate::kernels::{init_bandwidth, median_heuristic, sq_dist, GaussianKernel};
use crate::locations::TestLocations;
use crate::models::DensityModel;
use crate::test_result::{check_gamma, RelativeStatistic, DEFAULT_GAMMA};
use crate::ume::{feature_matrix, rel_ume_from_features};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_iters: usize,
    /// Initial step; grows on accepted steps and halves on rejected ones.
    pub step_size: f64,
    pub gamma: f64,
    pub seed: u64,
    #[serde(rename = "J")]
    pub j: usize,
}

impl OptimConfig {
    pub fn new(j: usize, seed: u64) -> Self {
        Self {
            max_iters: 200,
            step_size: 1.0,
            gamma: DEFAULT_GAMMA,
            seed,
            j,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.j == 0 {
            return Err(Error::InvalidParameter("J must be at least 1".into()));
        }
        check_gamma(self.gamma)
    }
}

/// Row indices of a seeded train/test split of `n` rows, each side sorted.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    ensure_rows("training split", 2, n_train)?;
    ensure_rows("test split", 2, n.saturating_sub(n_train))?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Paired samples from `P`, `Q` and `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTriple {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
}

impl SampleTriple {
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            z: self.z.select(Axis(0), rows),
        }
    }
}

/// Splits `(X, Y, Z)` with the same row indices for all three samples.
pub fn split_train_test(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
    train_fraction: f64,
    seed: u64,
) -> Result<(SampleTriple, SampleTriple)> {
    ensure_same_dim("paired sample sizes (X vs Z)", z.nrows(), x.nrows())?;
    ensure_same_dim("paired sample sizes (Y vs Z)", z.nrows(), y.nrows())?;
    let (train, test) = split_indices(z.nrows(), train_fraction, seed)?;
    let all = SampleTriple {
        x: x.to_owned(),
        y: y.to_owned(),
        z: z.to_owned(),
    };
    Ok((all.select(&train), all.select(&test)))
}

/// Gradient of the power criterion with respect to the locations and `log sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionGradient {
    pub locations: Array2<f64>,
    pub log_sigma2: f64,
}

/// Kernel values and squared distances between every sample row and location.
fn kernel_block(sample: ArrayView2<f64>, locs: ArrayView2<f64>, sigma2: f64) -> (Array2<f64>, Array2<f64>) {
    let (n, j) = (sample.nrows(), locs.nrows());
    let mut k = Array2::zeros((n, j));
    let mut d2 = Array2::zeros((n, j));
    let locs = locs.as_standard_layout();
    let sample = sample.as_standard_layout();
    let (locs, sample) = (
        locs.as_slice().expect("standard layout"),
        sample.as_slice().expect("standard layout"),
    );
    let dim = if j == 0 { 0 } else { locs.len() / j };
    let half_inv = 0.5 / sigma2;
    for i in 0..n {
        let x = &sample[i * dim..(i + 1) * dim];
        for jj in 0..j {
            let d = sq_dist(x, &locs[jj * dim..(jj + 1) * dim]);
            d2[[i, jj]] = d;
            k[[i, jj]] = (-d * half_inv).exp();
        }
    }
    (k, d2)
}

/// `(A - a_i) * 2 / (n (n - 1))` for every row: the derivative of the
/// unbiased U-statistic with respect to each paired difference.
fn u_stat_row_grads(diffs: &Array2<f64>) -> Array2<f64> {
    let n = diffs.nrows() as f64;
    let total = diffs.sum_axis(Axis(0));
    let scale = 2.0 / (n * (n - 1.0));
    (&total.insert_axis(Axis(0)) - diffs) * scale
}

fn u_stat(diffs: &Array2<f64>) -> f64 {
    let n = diffs.nrows() as f64;
    let total = diffs.sum_axis(Axis(0));
    (total.dot(&total) - diffs.iter().map(|v| v * v).sum::<f64>()) / (n * (n - 1.0))
}

fn centred(v: Array1<f64>) -> Array1<f64> {
    let m = v.mean().unwrap_or(0.0);
    v - m
}

/// `dF/dS` and `dF/dnu` for `F = S / (gamma + sqrt(nu))`.
fn criterion_partials(s_val: f64, nu: f64, gamma: f64) -> (f64, f64, f64) {
    let denom = gamma + nu.sqrt();
    let value = s_val / denom;
    let d_nu = if nu > 0.0 {
        -s_val / (denom * denom) / (2.0 * nu.sqrt())
    } else {
        0.0
    };
    (value, 1.0 / denom, d_nu)
}

/// Rel-UME power criterion with `V = W`, one kernel `exp(log_sigma2)`, and
/// its analytic gradient.
pub fn ume_criterion_grad(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
    locations: ArrayView2<f64>,
    log_sigma2: f64,
    gamma: f64,
) -> Result<(f64, CriterionGradient)> {
    ensure_rows("relative UME", 2, z.nrows())?;
    ensure_same_dim("paired sample sizes (X vs Z)", z.nrows(), x.nrows())?;
    ensure_same_dim("paired sample sizes (Y vs Z)", z.nrows(), y.nrows())?;
    ensure_same_dim("sample dimensions (X vs Z)", z.ncols(), x.ncols())?;
    ensure_same_dim("sample dimensions (Y vs Z)", z.ncols(), y.ncols())?;
    ensure_same_dim("location dimension", z.ncols(), locations.ncols())?;
    ensure_rows("test locations", 1, locations.nrows())?;
    check_gamma(gamma)?;
    let sigma2 = GaussianKernel::from_log_sigma2(log_sigma2)?.sigma2();
    let (n, dim, j) = (z.nrows(), z.ncols(), locations.nrows());
    let nf = n as f64;
    let locs = locations.as_standard_layout();
    let v = locs.as_slice().expect("standard layout");
    let scale = (j as f64).sqrt().recip();
    let (x, y, z) = (x.as_standard_layout(), y.as_standard_layout(), z.as_standard_layout());
    let rows = |m: &ndarray::CowArray<f64, ndarray::Ix2>| m.as_slice().expect("standard layout").to_vec();
    let (xs, ys, zs) = (rows(&x), rows(&y), rows(&z));
    let bx = ScaledBlock::new(&xs, v, dim, sigma2, scale);
    let by = ScaledBlock::new(&ys, v, dim, sigma2, scale);
    let bz = ScaledBlock::new(&zs, v, dim, sigma2, scale);

    let (mut sx, mut sy, mut sz) = (vec![0.0; j], vec![0.0; j], vec![0.0; j]);
    let (mut sq_a, mut sq_b) = (0.0, 0.0);
    for k in 0..n * j {
        let (px, py, pz) = (bx.phi[k], by.phi[k], bz.phi[k]);
        sx[k % j] += px;
        sy[k % j] += py;
        sz[k % j] += pz;
        sq_a += (px - pz) * (px - pz);
        sq_b += (py - pz) * (py - pz);
    }
    let big_a: Vec<f64> = (0..j).map(|l| sx[l] - sz[l]).collect();
    let big_b: Vec<f64> = (0..j).map(|l| sy[l] - sz[l]).collect();
    let pairs = nf * (nf - 1.0);
    let norm2 = |u: &[f64]| u.iter().map(|a| a * a).sum::<f64>();
    let s_val = (norm2(&big_a) - sq_a - norm2(&big_b) + sq_b) / pairs;

    let m_p: Vec<f64> = big_a.iter().map(|a| a / nf).collect();
    let m_q: Vec<f64> = big_b.iter().map(|b| b / nf).collect();
    let w: Vec<f64> = (0..j).map(|l| m_p[l] - m_q[l]).collect();
    let dot = |u: &[f64], s: &[f64]| u.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    let (ox, oy, oz) = (dot(&sx, &m_p) / nf, dot(&sy, &m_q) / nf, dot(&sz, &w) / nf);

    let (mut cx, mut cy, mut cz) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut gx, mut gy, mut gz) = (vec![0.0; j], vec![0.0; j], vec![0.0; j]);
    let mut sum_sq = 0.0;
    for i in 0..n {
        let r = i * j..(i + 1) * j;
        let (px, py, pz) = (&bx.phi[r.clone()], &by.phi[r.clone()], &bz.phi[r]);
        cx[i] = dot(px, &m_p) - ox;
        cy[i] = dot(py, &m_q) - oy;
        cz[i] = dot(pz, &w) - oz;
        sum_sq += cx[i] * cx[i] + cy[i] * cy[i] + cz[i] * cz[i];
        for l in 0..j {
            gx[l] += cx[i] * px[l];
            gy[l] += cy[i] * py[l];
            gz[l] += cz[i] * pz[l];
        }
    }
    let nu = 4.0 * sum_sq / nf;
    let (value, d_s, d_nu) = criterion_partials(s_val, nu, gamma);

    let g_mp: Vec<f64> = (0..j).map(|l| 2.0 * (gx[l] + gz[l]) / nf).collect();
    let g_mq: Vec<f64> = (0..j).map(|l| 2.0 * (gy[l] - gz[l]) / nf).collect();
    let mut pull = vec![0.0; j * dim];
    let mut col = vec![0.0; j];
    let mut ls = 0.0;
    for i in 0..n {
        let (xi, yi, zi) = (
            &xs[i * dim..(i + 1) * dim],
            &ys[i * dim..(i + 1) * dim],
            &zs[i * dim..(i + 1) * dim],
        );
        for l in 0..j {
            let k = i * j + l;
            let (px, py, pz) = (bx.phi[k], by.phi[k], bz.phi[k]);
            let ga = 2.0 * (big_a[l] - (px - pz)) / pairs;
            let gb = 2.0 * (big_b[l] - (py - pz)) / pairs;
            let nu_x = 4.0 * (2.0 * cx[i] * m_p[l] + g_mp[l]) / nf;
            let nu_y = 4.0 * (2.0 * cy[i] * m_q[l] + g_mq[l]) / nf;
            let nu_z = 4.0 * (2.0 * cz[i] * w[l] - g_mp[l] - g_mq[l]) / nf;
            let cxk = (d_s * ga + d_nu * nu_x) * px;
            let cyk = (-d_s * gb + d_nu * nu_y) * py;
            let czk = (d_s * (gb - ga) + d_nu * nu_z) * pz;
            col[l] += cxk + cyk + czk;
            for m in 0..dim {
                pull[l * dim + m] += cxk * xi[m] + cyk * yi[m] + czk * zi[m];
            }
            ls += cxk * bx.d2[k] + cyk * by.d2[k] + czk * bz.d2[k];
        }
    }
    let grad_locs = Array2::from_shape_fn((j, dim), |(l, m)| (pull[l * dim + m] - col[l] * v[l * dim + m]) / sigma2);
    Ok((
        value,
        CriterionGradient {
            locations: grad_locs,
            log_sigma2: ls / (2.0 * sigma2),
        },
    ))
}

/// Scaled kernel values and squared distances between sample rows and
/// locations, row-major `n x J`.
struct ScaledBlock {
    phi: Vec<f64>,
    d2: Vec<f64>,
}

impl ScaledBlock {
    fn new(sample: &[f64], locs: &[f64], dim: usize, sigma2: f64, scale: f64) -> Self {
        let (n, j) = (sample.len() / dim, locs.len() / dim);
        let mut phi = Vec::with_capacity(n * j);
        let mut d2 = Vec::with_capacity(n * j);
        for row in sample.chunks_exact(dim) {
            for loc in locs.chunks_exact(dim) {
                let d = sq_dist(row, loc);
                d2.push(d);
                phi.push(scale * (-d / (2.0 * sigma2)).exp());
            }
        }
        Self { phi, d2 }
    }
}

/// Rel-FSSD power criterion with `V = W` and one kernel, from precomputed
/// model scores at `z`, with its analytic gradient.
fn fssd_criterion_grad_from_scores(
    z: ArrayView2<f64>,
    score_p: ArrayView2<f64>,
    score_q: ArrayView2<f64>,
    locations: ArrayView2<f64>,
    log_sigma2: f64,
    gamma: f64,
) -> Result<(f64, CriterionGradient)> {
    let t = GaussianKernel::from_log_sigma2(log_sigma2)?.sigma2();
    let (n, d) = z.dim();
    let j = locations.nrows();
    let nf = n as f64;
    let c = ((d * j) as f64).sqrt();
    let (phi, d2) = kernel_block(z, locations, t);

    // u[i, j*d + l] = s_l(z_i) + (w_jl - z_il) / t
    let mut u_p = Array2::zeros((n, d * j));
    let mut u_q = Array2::zeros((n, d * j));
    for i in 0..n {
        for jj in 0..j {
            for l in 0..d {
                let shift = (locations[[jj, l]] - z[[i, l]]) / t;
                u_p[[i, jj * d + l]] = score_p[[i, l]] + shift;
                u_q[[i, jj * d + l]] = score_q[[i, l]] + shift;
            }
        }
    }
    let mut phi_wide = Array2::zeros((n, d * j));
    for jj in 0..j {
        let col = phi.column(jj).to_owned() / c;
        for l in 0..d {
            phi_wide.column_mut(jj * d + l).assign(&col);
        }
    }
    let tau_p = &phi_wide * &u_p;
    let tau_q = &phi_wide * &u_q;

    let s_val = u_stat(&tau_p) - u_stat(&tau_q);
    let mu_p = tau_p.mean_axis(Axis(0)).expect("n >= 2");
    let mu_q = tau_q.mean_axis(Axis(0)).expect("n >= 2");
    let h = centred(tau_p.dot(&mu_p) - tau_q.dot(&mu_q));
    let nu = 4.0 * h.dot(&h) / nf;
    let (value, d_s, d_nu) = criterion_partials(s_val, nu, gamma);

    let g_p = tau_p.t().dot(&h) * (2.0 / nf);
    let g_q = tau_q.t().dot(&h) * (2.0 / nf);
    let outer = |m: &Array1<f64>| h.view().insert_axis(Axis(1)).dot(&m.view().insert_axis(Axis(0))) * (2.0 / nf);
    let nu_p = (outer(&mu_p) + (g_p.insert_axis(Axis(0)) / nf)) * 4.0;
    let nu_q = (outer(&mu_q) + (g_q.insert_axis(Axis(0)) / nf)) * -4.0;

    let grad_p = u_stat_row_grads(&tau_p) * d_s + nu_p * d_nu;
    let grad_q = u_stat_row_grads(&tau_q) * (-d_s) + nu_q * d_nu;

    let mut grad = CriterionGradient {
        locations: Array2::zeros((j, d)),
        log_sigma2: 0.0,
    };
    for i in 0..n {
        for jj in 0..j {
            let base = phi[[i, jj]] / c;
            if base == 0.0 {
                continue;
            }
            let cols = jj * d..(jj + 1) * d;
            let gp = grad_p.slice(s![i, cols.clone()]);
            let gq = grad_q.slice(s![i, cols.clone()]);
            let up = u_p.slice(s![i, cols.clone()]);
            let uq = u_q.slice(s![i, cols]);
            let gsum = gp.dot(&up) + gq.dot(&uq);
            let mut shift_dot = 0.0;
            for m in 0..d {
                let e = gp[m] + gq[m];
                let diff = z[[i, m]] - locations[[jj, m]];
                grad.locations[[jj, m]] += base / t * (diff * gsum + e);
                shift_dot -= e * diff;
            }
            grad.log_sigma2 += base * (d2[[i, jj]] / (2.0 * t) * gsum - shift_dot / t);
        }
    }
    Ok((value, grad))
}

/// Rel-FSSD power criterion with `V = W`, one kernel `exp(log_sigma2)`, and
/// its analytic gradient.
pub fn fssd_criterion_grad(
    model_p: &dyn DensityModel,
    model_q: &dyn DensityModel,
    z: ArrayView2<f64>,
    locations: ArrayView2<f64>,
    log_sigma2: f64,
    gamma: f64,
) -> Result<(f64, CriterionGradient)> {
    ensure_rows("relative FSSD", 2, z.nrows())?;
    ensure_same_dim("location dimension", z.ncols(), locations.ncols())?;
    ensure_rows("test locations", 1, locations.nrows())?;
    check_gamma(gamma)?;
    let sp = model_p.score_matrix(z)?;
    let sq = model_q.score_matrix(z)?;
    fssd_criterion_grad_from_scores(z, sp.view(), sq.view(), locations, log_sigma2, gamma)
}

/// Optimized locations, bandwidth and the criterion at every accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub locations: TestLocations,
    pub sigma2: f64,
    pub trajectory: Vec<f64>,
    pub initial_locations: Array2<f64>,
    pub initial_sigma2: f64,
}

impl OptimResult {
    pub fn kernel(&self) -> GaussianKernel {
        GaussianKernel::new(self.sigma2).expect("optimizer keeps the bandwidth positive")
    }
}

fn flatten(locs: &Array2<f64>, log_sigma2: f64) -> Array1<f64> {
    locs.iter().copied().chain(std::iter::once(log_sigma2)).collect()
}

fn unflatten(theta: &Array1<f64>, j: usize, d: usize) -> (Array2<f64>, f64) {
    let locs = Array2::from_shape_vec((j, d), theta.slice(s![..j * d]).to_vec()).expect("length j*d");
    (locs, theta[j * d])
}

/// Gradient ascent with a step that grows by 1.2 after each accepted step
/// and halves after a non-finite or non-improving one.
fn ascend<F>(init_locs: Array2<f64>, init_log_sigma2: f64, config: &OptimConfig, eval: F) -> Result<OptimResult>
where
    F: Fn(ArrayView2<f64>, f64) -> Result<(f64, CriterionGradient)>,
{
    let (j, d) = init_locs.dim();
    let (f0, g0) = eval(init_locs.view(), init_log_sigma2)?;
    if !f0.is_finite() {
        return Err(Error::Optimization {
            iterations: 0,
            reason: format!("criterion at the initial point is {f0}"),
        });
    }
    let mut theta = flatten(&init_locs, init_log_sigma2);
    let mut value = f0;
    let mut grad = flatten(&g0.locations, g0.log_sigma2);
    let mut step = config.step_size;
    let mut trajectory = vec![f0];

    'outer: for _ in 0..config.max_iters {
        if !grad.iter().all(|g| g.is_finite()) {
            break;
        }
        loop {
            if step < 1e-12 {
                break 'outer;
            }
            let cand = &theta + &(&grad * step);
            let (locs, ls) = unflatten(&cand, j, d);
            match eval(locs.view(), ls) {
                Ok((f, g)) if f.is_finite() && f >= value => {
                    theta = cand;
                    value = f;
                    grad = flatten(&g.locations, g.log_sigma2);
                    step *= 1.2;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        trajectory.push(value);
    }
    let (locs, ls) = unflatten(&theta, j, d);
    Ok(OptimResult {
        locations: TestLocations::new(locs)?,
        sigma2: ls.exp(),
        trajectory,
        initial_locations: init_locs,
        initial_sigma2: init_log_sigma2.exp(),
    })
}

fn random_rows(sample: ArrayView2<f64>, j: usize, seed: u64) -> Result<Array2<f64>> {
    if j > sample.nrows() {
        return Err(Error::InvalidParameter(format!(
            "cannot pick {j} initial locations from {} training rows",
            sample.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, sample.nrows(), j).into_vec();
    Ok(sample.select(Axis(0), &idx))
}

/// Rows of each sample used by the initial median heuristics.
pub const INIT_MEDIAN_ROWS: usize = 500;

fn head(m: ArrayView2<f64>) -> ArrayView2<f64> {
    let rows = m.nrows().min(INIT_MEDIAN_ROWS);
    m.slice_move(s![..rows, ..])
}

/// [`init_bandwidth`] on the first [`INIT_MEDIAN_ROWS`] rows of each sample.
pub fn initial_ume_bandwidth(x: ArrayView2<f64>, y: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<f64> {
    init_bandwidth(head(x), head(y), head(z))
}

/// Squared median distance of the first [`INIT_MEDIAN_ROWS`] rows of `z`.
pub fn initial_fssd_bandwidth(z: ArrayView2<f64>) -> Result<f64> {
    let med = median_heuristic(head(z))?.median;
    Ok(med * med)
}

/// Optimizes Rel-UME locations (`V = W`) and the shared bandwidth on training data.
///
/// Locations start at `J` random rows of `z_train`; the bandwidth starts at
/// [`initial_ume_bandwidth`].
pub fn optimize_ume_params(
    x_train: ArrayView2<f64>,
    y_train: ArrayView2<f64>,
    z_train: ArrayView2<f64>,
    config: &OptimConfig,
) -> Result<OptimResult> {
    config.validate()?;
    let init = random_rows(z_train, config.j, config.seed)?;
    let sigma2 = initial_ume_bandwidth(x_train, y_train, z_train)?;
    ascend(init, sigma2.ln(), config, |locs, ls| {
        ume_criterion_grad(x_train, y_train, z_train, locs, ls, config.gamma)
    })
}

/// Optimizes Rel-FSSD locations (`V = W`) and the shared bandwidth on training data.
///
/// Locations start at `J` random rows of `z_train`; the bandwidth starts at
/// [`initial_fssd_bandwidth`].
pub fn optimize_fssd_params(
    model_p: &dyn DensityModel,
    model_q: &dyn DensityModel,
    z_train: ArrayView2<f64>,
    config: &OptimConfig,
) -> Result<OptimResult> {
    config.validate()?;
    ensure_rows("relative FSSD", 2, z_train.nrows())?;
    let init = random_rows(z_train, config.j, config.seed)?;
    let sigma2 = initial_fssd_bandwidth(z_train)?;
    let sp = model_p.score_matrix(z_train)?;
    let sq = model_q.score_matrix(z_train)?;
    ascend(init, sigma2.ln(), config, |locs, ls| {
        fssd_criterion_grad_from_scores(z_train, sp.view(), sq.view(), locs, ls, config.gamma)
    })
}

#[derive(Debug, Clone)]
enum ContextData {
    Ume {
        x: Array2<f64>,
        y: Array2<f64>,
        z: Array2<f64>,
    },
    Fssd {
        z: Array2<f64>,
        score_p: Array2<f64>,
        score_q: Array2<f64>,
    },
}

/// Fixed data and kernel against which candidate location sets are scored.
#[derive(Debug, Clone)]
pub struct CriterionContext {
    kernel: GaussianKernel,
    data: ContextData,
}

impl CriterionContext {
    pub fn ume(
        kernel: GaussianKernel,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        z: ArrayView2<f64>,
    ) -> Result<Self> {
        ensure_rows("relative UME", 2, z.nrows())?;
        ensure_same_dim("paired sample sizes (X vs Z)", z.nrows(), x.nrows())?;
        ensure_same_dim("paired sample sizes (Y vs Z)", z.nrows(), y.nrows())?;
        ensure_same_dim("sample dimensions (X vs Z)", z.ncols(), x.ncols())?;
        ensure_same_dim("sample dimensions (Y vs Z)", z.ncols(), y.ncols())?;
        Ok(Self {
            kernel,
            data: ContextData::Ume {
                x: x.to_owned(),
                y: y.to_owned(),
                z: z.to_owned(),
            },
        })
    }

    /// Scores of both models are evaluated once here.
    pub fn fssd(
        kernel: GaussianKernel,
        model_p: &dyn DensityModel,
        model_q: &dyn DensityModel,
        z: ArrayView2<f64>,
    ) -> Result<Self> {
        ensure_rows("relative FSSD", 2, z.nrows())?;
        Ok(Self {
            kernel,
            data: ContextData::Fssd {
                z: z.to_owned(),
                score_p: model_p.score_matrix(z)?,
                score_q: model_q.score_matrix(z)?,
            },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.data {
            ContextData::Ume { z, .. } | ContextData::Fssd { z, .. } => z.ncols(),
        }
    }

    pub fn kernel(&self) -> GaussianKernel {
        self.kernel
    }

    /// Relative statistic with `V = W = locations`.
    pub fn statistic(&self, locations: &TestLocations) -> Result<RelativeStatistic> {
        ensure_same_dim("candidate location dimension", self.dim(), locations.dim())?;
        let k = &self.kernel;
        Ok(match &self.data {
            ContextData::Ume { x, y, z } => {
                let fx = feature_matrix(k, locations, x.view())?;
                let fy = feature_matrix(k, locations, y.view())?;
                let fz = feature_matrix(k, locations, z.view())?;
                rel_ume_from_features(fx.view(), fz.view(), fy.view(), fz.view())
            }
            ContextData::Fssd { z, score_p, score_q } => {
                let tp = features_from_scores(k, locations, z.view(), score_p.view());
                let tq = features_from_scores(k, locations, z.view(), score_q.view());
                rel_fssd_from_features(tp.view(), tq.view())
            }
        })
    }
}

/// Per-candidate power criteria with `J = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolScores {
    pub scores: Vec<f64>,
    /// Candidate had a degenerate variance or non-finite criterion; its score is 0.
    pub degenerate: Vec<bool>,
}

impl PoolScores {
    /// Candidate indices from lowest to highest score.
    pub fn ascending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }

    pub fn descending(&self) -> Vec<usize> {
        let mut idx = self.ascending();
        idx.reverse();
        idx
    }
}

pub fn score_candidate_pool(pool: ArrayView2<f64>, context: &CriterionContext, gamma: f64) -> Result<PoolScores> {
    ensure_rows("candidate pool", 1, pool.nrows())?;
    ensure_same_dim("candidate pool dimension", context.dim(), pool.ncols())?;
    check_gamma(gamma)?;
    let results: Vec<(f64, bool)> = (0..pool.nrows())
        .into_par_iter()
        .map(|i| {
            let stat = TestLocations::single(pool.row(i)).and_then(|l| context.statistic(&l))?;
            let value = stat.power_criterion(gamma);
            Ok(if stat.is_degenerate() || !value.is_finite() {
                (0.0, true)
            } else {
                (value, false)
            })
        })
        .collect::<Result<_>>()?;
    let (scores, degenerate) = results.into_iter().unzip();
    Ok(PoolScores { scores, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedySelection {
    pub locations: TestLocations,
    /// Pool row of each selected location, in selection order.
    pub indices: Vec<usize>,
    /// Criterion of the selected set after each addition.
    pub trace: Vec<f64>,
    /// Fewer than `J` locations were selected because no remaining candidate
    /// had a finite criterion that improved the set in the chosen direction.
    pub exhausted: bool,
}

/// Grows a location set one pool row at a time, each time adding the row
/// that makes the set's criterion largest (or smallest).
pub fn greedy_select(
    pool: ArrayView2<f64>,
    j: usize,
    direction: Direction,
    context: &CriterionContext,
    gamma: f64,
) -> Result<GreedySelection> {
    if j == 0 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    ensure_rows("candidate pool", j, pool.nrows())?;
    ensure_same_dim("candidate pool dimension", context.dim(), pool.ncols())?;
    check_gamma(gamma)?;
    let sign = direction.sign();
    let mut chosen: Vec<usize> = Vec::with_capacity(j);
    let mut trace = Vec::with_capacity(j);
    let mut exhausted = false;

    while chosen.len() < j {
        let best = (0..pool.nrows())
            .into_par_iter()
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let mut rows = chosen.clone();
                rows.push(i);
                let locs = TestLocations::new(pool.select(Axis(0), &rows))?;
                Ok((i, context.statistic(&locs)?.power_criterion(gamma)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| (sign * a.1).total_cmp(&(sign * b.1)).then(b.0.cmp(&a.0)));
        match best {
            Some((i, v)) if trace.last().is_none_or(|&last: &f64| sign * v > sign * last) => {
                chosen.push(i);
                trace.push(v);
            }
            _ => {
                exhausted = true;
                break;
            }
        }
    }
    if chosen.is_empty() {
        return Err(Error::DegenerateSample(
            "no candidate location has a finite power criterion".into(),
        ));
    }
    Ok(GreedySelection {
        locations: TestLocations::new(pool.select(Axis(0), &chosen))?,
        indices: chosen,
        trace,
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fssd::fssd_power_criterion;
    use crate::models::{gaussian_model, mixture1d_model, Sampler};
    use crate::ume::ume_power_criterion;
    use ndarray::{array, Array1};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal) + shift)
    }

    fn ume_value(x: &Array2<f64>, y: &Array2<f64>, z: &Array2<f64>, locs: &Array2<f64>, ls: f64) -> f64 {
        let k = GaussianKernel::from_log_sigma2(ls).unwrap();
        let l = TestLocations::new(locs.clone()).unwrap();
        ume_power_criterion(&k, &k, &l, &l, x.view(), y.view(), z.view(), DEFAULT_GAMMA).unwrap()
    }

    /// Central differences of `f` at `(locs, ls)`, flattened like the optimizer.
    fn fd_grad(locs: &Array2<f64>, ls: f64, f: impl Fn(&Array2<f64>, f64) -> f64) -> Array1<f64> {
        let theta = flatten(locs, ls);
        let (j, d) = locs.dim();
        (0..theta.len())
            .map(|k| {
                let h = 1e-5 * theta[k].abs().max(1.0);
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                let (lu, su) = unflatten(&up, j, d);
                let (ld, sd) = unflatten(&dn, j, d);
                (f(&lu, su) - f(&ld, sd)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let diff = (a - b).mapv(|v| v * v).sum().sqrt();
        diff / b.mapv(|v| v * v).sum().sqrt().max(1e-12)
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, test) = split_indices(100, 0.2, 5).unwrap();
        assert_eq!((train.len(), test.len()), (20, 80));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.2, 5).unwrap(), (train.clone(), test));
        assert_ne!(split_indices(100, 0.2, 6).unwrap().0, train);
    }

    #[test]
    fn split_keeps_rows_paired() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let y = &x + 100.0;
        let z = &x + 200.0;
        let (tr, te) = split_train_test(x.view(), y.view(), z.view(), 0.3, 1).unwrap();
        assert_eq!(tr.x.nrows(), 3);
        for part in [tr, te] {
            assert_eq!(&part.y - &part.x, Array2::from_elem(part.x.raw_dim(), 100.0));
            assert_eq!(&part.z - &part.x, Array2::from_elem(part.x.raw_dim(), 200.0));
        }
    }

    #[test]
    fn split_rejects_tiny_sides() {
        assert!(split_indices(5, 0.2, 0).is_err());
        assert!(split_indices(10, 0.9, 0).is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
        assert!(split_indices(10, 0.0, 0).is_err());
    }

    #[test]
    fn ume_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let d = rng.random_range(1..=3);
            let j = rng.random_range(1..=3);
            let x = normal_matrix(&mut rng, 40, d, 0.6);
            let y = normal_matrix(&mut rng, 40, d, 0.2);
            let z = normal_matrix(&mut rng, 40, d, 0.0);
            let locs = normal_matrix(&mut rng, j, d, 0.0);
            let ls = rng.random_range(-0.5..1.0);
            let (value, g) = ume_criterion_grad(x.view(), y.view(), z.view(), locs.view(), ls, DEFAULT_GAMMA).unwrap();
            assert!((value - ume_value(&x, &y, &z, &locs, ls)).abs() < 1e-10);
            let fd = fd_grad(&locs, ls, |l, s| ume_value(&x, &y, &z, l, s));
            let err = rel_err(&flatten(&g.locations, g.log_sigma2), &fd);
            assert!(err <= 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn fssd_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let d = rng.random_range(1..=3);
            let j = rng.random_range(1..=3);
            let p = gaussian_model(Array1::from_elem(d, 0.8), 1.0).unwrap();
            let q = gaussian_model(Array1::from_elem(d, 0.3), 1.5).unwrap();
            let z = normal_matrix(&mut rng, 40, d, 0.0);
            let locs = normal_matrix(&mut rng, j, d, 0.0);
            let ls = rng.random_range(-0.5..1.0);
            let f = |l: &Array2<f64>, s: f64| {
                let k = GaussianKernel::from_log_sigma2(s).unwrap();
                let l = TestLocations::new(l.clone()).unwrap();
                fssd_power_criterion(&k, &k, &p, &q, &l, &l, z.view(), DEFAULT_GAMMA).unwrap()
            };
            let (value, g) = fssd_criterion_grad(&p, &q, z.view(), locs.view(), ls, DEFAULT_GAMMA).unwrap();
            assert!((value - f(&locs, ls)).abs() < 1e-10);
            let err = rel_err(&flatten(&g.locations, g.log_sigma2), &fd_grad(&locs, ls, f));
            assert!(err <= 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn ume_optimizer_improves_and_trajectory_never_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = normal_matrix(&mut rng, 200, 2, 1.0);
        let y = normal_matrix(&mut rng, 200, 2, 0.3);
        let z = normal_matrix(&mut rng, 200, 2, 0.0);
        let cfg = OptimConfig::new(3, 9);
        let res = optimize_ume_params(x.view(), y.view(), z.view(), &cfg).unwrap();
        assert!(res.trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert!(res.trajectory.last() > res.trajectory.first());
        assert!(res.sigma2 > 0.0);
        assert_eq!(res.locations.len(), 3);
        let final_value = ume_value(&x, &y, &z, &res.locations.view().to_owned(), res.sigma2.ln());
        assert!((final_value - res.trajectory.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn fssd_optimizer_improves() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let p = gaussian_model(array![1.0, 0.0], 1.0).unwrap();
        let q = gaussian_model(array![0.3, 0.0], 1.0).unwrap();
        let z = normal_matrix(&mut rng, 200, 2, 0.0);
        let res = optimize_fssd_params(&p, &q, z.view(), &OptimConfig::new(2, 1)).unwrap();
        assert!(res.trajectory.last().unwrap() > &(res.trajectory[0] + 1e-6));
        assert!(res.trajectory.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn optimizer_uses_only_training_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let x = normal_matrix(&mut rng, 100, 2, 0.7);
        let y = normal_matrix(&mut rng, 100, 2, 0.2);
        let z = normal_matrix(&mut rng, 100, 2, 0.0);
        let (train, test) = split_indices(100, 0.2, 3).unwrap();
        let mut shuffled = test.clone();
        shuffled.shuffle(&mut rng);
        let permute = |m: &Array2<f64>| {
            let mut out = m.clone();
            for (a, b) in test.iter().zip(&shuffled) {
                out.row_mut(*a).assign(&m.row(*b));
            }
            out
        };
        let run = |x: &Array2<f64>, y: &Array2<f64>, z: &Array2<f64>| {
            let (tr, _) = split_train_test(x.view(), y.view(), z.view(), 0.2, 3).unwrap();
            optimize_ume_params(tr.x.view(), tr.y.view(), tr.z.view(), &OptimConfig::new(2, 4)).unwrap()
        };
        let a = run(&x, &y, &z);
        let b = run(&permute(&x), &permute(&y), &permute(&z));
        assert_eq!(a, b);
        assert_eq!(train.len(), 20);
    }

    #[test]
    fn invalid_config() {
        let z = array![[0.0], [1.0], [2.0]];
        let mut cfg = OptimConfig::new(1, 0);
        cfg.max_iters = 0;
        assert!(optimize_ume_params(z.view(), z.view(), z.view(), &cfg).is_err());
        let cfg = OptimConfig::new(5, 0);
        assert!(optimize_ume_params(z.view(), z.view(), z.view(), &cfg).is_err());
    }

    fn mixture_context(left_weight: f64, n: usize, fssd: bool) -> CriterionContext {
        let p = gaussian_model(array![-2.0], 1.0).unwrap();
        let q = gaussian_model(array![2.0], 1.0).unwrap();
        let r = mixture1d_model(left_weight).unwrap();
        let z = r.sample(n, 1).unwrap();
        let k = GaussianKernel::new(1.0).unwrap();
        if fssd {
            CriterionContext::fssd(k, &p, &q, z.view()).unwrap()
        } else {
            let x = p.sample(n, 2).unwrap();
            let y = q.sample(n, 3).unwrap();
            CriterionContext::ume(k, x.view(), y.view(), z.view()).unwrap()
        }
    }

    #[test]
    fn pool_scores_duplicates_identically_and_sorts() {
        let ctx = mixture_context(0.3, 500, false);
        let pool = array![[-2.0], [0.5], [-2.0], [2.0]];
        let scores = score_candidate_pool(pool.view(), &ctx, DEFAULT_GAMMA).unwrap();
        assert_eq!(scores.scores[0], scores.scores[2]);
        let asc = scores.ascending();
        assert!(asc.windows(2).all(|w| scores.scores[w[0]] <= scores.scores[w[1]]));
        assert_eq!(scores.descending()[0], *asc.last().unwrap());
    }

    #[test]
    fn degenerate_candidates_score_zero_with_flag() {
        let z = array![[0.0], [1.0], [2.0], [3.0]];
        let ctx = CriterionContext::ume(GaussianKernel::new(1.0).unwrap(), z.view(), z.view(), z.view()).unwrap();
        let scores = score_candidate_pool(array![[0.5], [1e6]].view(), &ctx, DEFAULT_GAMMA).unwrap();
        assert_eq!(scores.scores, vec![0.0, 0.0]);
        assert_eq!(scores.degenerate, vec![true, true]);
    }

    #[test]
    fn greedy_single_step_is_pool_argmax_and_argmin() {
        let ctx = mixture_context(0.5, 400, true);
        let pool = Array2::from_shape_fn((41, 1), |(i, _)| -4.0 + 0.2 * i as f64);
        let scores = score_candidate_pool(pool.view(), &ctx, DEFAULT_GAMMA).unwrap();
        let max = greedy_select(pool.view(), 1, Direction::Maximize, &ctx, DEFAULT_GAMMA).unwrap();
        let min = greedy_select(pool.view(), 1, Direction::Minimize, &ctx, DEFAULT_GAMMA).unwrap();
        assert_eq!(max.indices, vec![scores.descending()[0]]);
        assert_eq!(min.indices, vec![scores.ascending()[0]]);
    }

    #[test]
    fn greedy_trace_is_monotone_and_selects_distinct_rows() {
        let ctx = mixture_context(0.5, 400, true);
        let pool = Array2::from_shape_fn((41, 1), |(i, _)| -4.0 + 0.2 * i as f64);
        for dir in [Direction::Maximize, Direction::Minimize] {
            let sel = greedy_select(pool.view(), 4, dir, &ctx, DEFAULT_GAMMA).unwrap();
            let sign = dir.sign();
            assert!(sel.trace.windows(2).all(|w| sign * w[1] > sign * w[0]));
            let mut idx = sel.indices.clone();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), sel.indices.len());
            assert_eq!(sel.locations.len(), sel.indices.len());
            assert_eq!(sel.exhausted, sel.indices.len() < 4);
        }
    }

    #[test]
    fn greedy_rejects_small_pool() {
        let ctx = mixture_context(0.5, 50, false);
        assert!(greedy_select(array![[0.0]].view(), 2, Direction::Maximize, &ctx, DEFAULT_GAMMA).is_err());
    }
}
