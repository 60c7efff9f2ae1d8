//! Finite-set Stein discrepancy (FSSD) and the relative FSSD test.
//!
//! For a model `q` with score `s_q = grad log q`, kernel `k` and locations
//! `W = {w_1..w_J}`, the Stein feature of a point `z` stacks
//! `xi(z, w_j) = k(z, w_j) s_q(z) + grad_z k(z, w_j)` over `j`, scaled by
//! `1/sqrt(dJ)`. Its mean under the data distribution is zero iff `q`
//! matches the data, and the squared norm of that mean is estimated by a
//! second-order U-statistic in `O(n J d)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{ensure_rows, ensure_same_dim, Result};
use crate::kernels::{sq_dist, GaussianKernel};
use crate::locations::TestLocations;
use crate::models::DensityModel;
use crate::test_result::{check_gamma, cov_n, RelativeStatistic, TestResult, VarianceTerms};
use crate::ume::paired_u_statistic;

/// Stein feature `tau(z)` of length `d * J`; entry `j * d + i` holds
/// `xi_i(z, w_j) / sqrt(dJ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinFeature(pub Array1<f64>);

pub fn stein_feature(
    kernel: &GaussianKernel,
    model: &dyn DensityModel,
    locations: &TestLocations,
    z: ArrayView1<f64>,
) -> Result<SteinFeature> {
    ensure_same_dim("Stein feature (point)", model.dim(), z.len())?;
    ensure_same_dim("Stein feature (locations)", model.dim(), locations.dim())?;
    let score = model.score(z)?;
    let z_row = z.insert_axis(Axis(0));
    let score_row = score.view().insert_axis(Axis(0));
    let tau = features_from_scores(kernel, locations, z_row, score_row);
    Ok(SteinFeature(tau.row(0).to_owned()))
}

/// Stein features of every row of `sample` given precomputed scores, `n x dJ`.
pub(crate) fn features_from_scores(
    kernel: &GaussianKernel,
    locations: &TestLocations,
    sample: ArrayView2<f64>,
    scores: ArrayView2<f64>,
) -> Array2<f64> {
    let (n, d) = sample.dim();
    let j = locations.len();
    let scale = ((d * j) as f64).sqrt().recip();
    let inv_s2 = kernel.sigma2().recip();
    let sample = sample.as_standard_layout();
    let scores = scores.as_standard_layout();
    let locs = locations.view();
    let locs = locs.as_slice().expect("locations are stored in standard layout");
    let mut out = Array2::zeros((n, d * j));
    for ((z, s), mut tau) in sample.rows().into_iter().zip(scores.rows()).zip(out.rows_mut()) {
        let z = z.as_slice().expect("standard layout");
        let s = s.as_slice().expect("standard layout");
        let tau = tau.as_slice_mut().expect("fresh array is contiguous");
        for jj in 0..j {
            let w = &locs[jj * d..(jj + 1) * d];
            let kv = kernel.from_sq_dist(sq_dist(z, w));
            let block = &mut tau[jj * d..(jj + 1) * d];
            for i in 0..d {
                block[i] = kv * (s[i] + (w[i] - z[i]) * inv_s2) * scale;
            }
        }
    }
    out
}

/// Stein features of a whole sample under `model`, `n x dJ`.
pub fn stein_feature_matrix(
    kernel: &GaussianKernel,
    model: &dyn DensityModel,
    locations: &TestLocations,
    sample: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    ensure_same_dim("Stein features (sample)", model.dim(), sample.ncols())?;
    ensure_same_dim("Stein features (locations)", model.dim(), locations.dim())?;
    let scores = model.score_matrix(sample)?;
    Ok(features_from_scores(kernel, locations, sample, scores.view()))
}

/// Unbiased estimate of `FSSD^2` of `model` against the sample `z`. May be negative.
pub fn fssd_sq(
    kernel: &GaussianKernel,
    model: &dyn DensityModel,
    locations: &TestLocations,
    z: ArrayView2<f64>,
) -> Result<f64> {
    ensure_rows("FSSD estimate", 2, z.nrows())?;
    let tau = stein_feature_matrix(kernel, model, locations, z)?;
    Ok(paired_u_statistic(tau.view()))
}

/// Relative statistic from the Stein feature matrices of both models.
pub(crate) fn rel_fssd_from_features(tau_p: ArrayView2<f64>, tau_q: ArrayView2<f64>) -> RelativeStatistic {
    let n = tau_p.nrows();
    let f_p = paired_u_statistic(tau_p);
    let f_q = paired_u_statistic(tau_q);
    let mu_p = tau_p.mean_axis(Axis(0)).expect("n >= 2");
    let mu_q = tau_q.mean_axis(Axis(0)).expect("n >= 2");
    let proj_p = tau_p.dot(&mu_p).to_vec();
    let proj_q = tau_q.dot(&mu_q).to_vec();
    let terms = VarianceTerms {
        p: cov_n(&proj_p, &proj_p),
        pq: cov_n(&proj_p, &proj_q),
        q: cov_n(&proj_q, &proj_q),
    };
    RelativeStatistic::new(f_p - f_q, terms.nu(), n, Some(terms))
}

/// `S = FSSD^2_p - FSSD^2_q` on the sample `z`, with its plug-in variance.
#[allow(clippy::too_many_arguments)]
pub fn rel_fssd_stat_and_var(
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    model_p: &dyn DensityModel,
    model_q: &dyn DensityModel,
    v: &TestLocations,
    w: &TestLocations,
    z: ArrayView2<f64>,
) -> Result<RelativeStatistic> {
    ensure_rows("relative FSSD", 2, z.nrows())?;
    let tau_p = stein_feature_matrix(kx, model_p, v, z)?;
    let tau_q = stein_feature_matrix(ky, model_q, w, z)?;
    Ok(rel_fssd_from_features(tau_p.view(), tau_q.view()))
}

/// Rel-FSSD test of `H0: FSSD^2_p <= FSSD^2_q`; rejection means `q` fits better.
#[allow(clippy::too_many_arguments)]
pub fn rel_fssd_test(
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    model_p: &dyn DensityModel,
    model_q: &dyn DensityModel,
    v: &TestLocations,
    w: &TestLocations,
    z: ArrayView2<f64>,
    alpha: f64,
) -> Result<TestResult> {
    rel_fssd_stat_and_var(kx, ky, model_p, model_q, v, w, z)?.test(alpha)
}

#[allow(clippy::too_many_arguments)]
pub fn fssd_power_criterion(
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    model_p: &dyn DensityModel,
    model_q: &dyn DensityModel,
    v: &TestLocations,
    w: &TestLocations,
    z: ArrayView2<f64>,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(rel_fssd_stat_and_var(kx, ky, model_p, model_q, v, w, z)?.power_criterion(gamma))
}
