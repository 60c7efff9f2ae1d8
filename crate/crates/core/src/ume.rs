//! Unnormalized mean embedding (UME) distances and the relative UME test.
//!
//! The feature map of a kernel `k` and locations `V = {v_1..v_J}` is
//! `psi_V(x) = (k(x, v_1), ..., k(x, v_J)) / sqrt(J)`. The squared UME
//! distance `|E psi(Y) - E psi(Z)|^2` has an unbiased estimator that is a
//! second-order U-statistic in the paired differences `psi(y_i) - psi(z_i)`,
//! computable in `O(n J d)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{ensure_rows, ensure_same_dim, Result};
use crate::kernels::{sq_dist, GaussianKernel};
use crate::locations::TestLocations;
use crate::test_result::{check_gamma, cov_n, RelativeStatistic, TestResult, VarianceTerms};

/// `psi_V(x)`: kernel values against every location, scaled by `1/sqrt(J)`.
pub fn feature_map(
    kernel: &GaussianKernel,
    locations: &TestLocations,
    x: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    ensure_same_dim("UME feature map", locations.dim(), x.len())?;
    let scale = (locations.len() as f64).sqrt().recip();
    Ok(locations
        .view()
        .rows()
        .into_iter()
        .map(|v| kernel.eval_unchecked(x, v) * scale)
        .collect())
}

/// Row-wise feature map of a whole sample, `n x J`.
pub fn feature_matrix(
    kernel: &GaussianKernel,
    locations: &TestLocations,
    sample: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    ensure_same_dim("UME feature matrix", locations.dim(), sample.ncols())?;
    let j = locations.len();
    let scale = (j as f64).sqrt().recip();
    let sample = sample.as_standard_layout();
    let locs = locations.view();
    let locs = locs.as_slice().expect("locations are stored in standard layout");
    let d = locations.dim();
    let mut out = Array2::zeros((sample.nrows(), j));
    for (row, mut feats) in sample.rows().into_iter().zip(out.rows_mut()) {
        let row = row.as_slice().expect("standard layout");
        for (jj, f) in feats.iter_mut().enumerate() {
            *f = kernel.from_sq_dist(sq_dist(row, &locs[jj * d..(jj + 1) * d])) * scale;
        }
    }
    Ok(out)
}

/// Unbiased estimate of `|mean(a_i)|^2` from the rows `a_i` of `diffs`:
/// `2 sum_{i < j} <a_i, a_j> / (n (n - 1))`, accumulated with running prefix sums.
pub(crate) fn paired_u_statistic(diffs: ArrayView2<f64>) -> f64 {
    let n = diffs.nrows() as f64;
    let mut prefix = vec![0.0; diffs.ncols()];
    let mut cross = 0.0;
    for row in diffs.rows() {
        for (p, &a) in prefix.iter_mut().zip(row.iter()) {
            cross += a * *p;
            *p += a;
        }
    }
    2.0 * cross / (n * (n - 1.0))
}

fn check_pair(y: &ArrayView2<f64>, z: &ArrayView2<f64>) -> Result<()> {
    ensure_rows("UME estimate", 2, z.nrows())?;
    ensure_same_dim("paired sample sizes", z.nrows(), y.nrows())?;
    ensure_same_dim("sample dimensions", z.ncols(), y.ncols())
}

/// Unbiased estimate of the squared UME distance between the distributions of
/// `y` and `z`, from paired samples of equal size. May be negative.
pub fn ume_sq(
    kernel: &GaussianKernel,
    locations: &TestLocations,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<f64> {
    check_pair(&y, &z)?;
    let fy = feature_matrix(kernel, locations, y)?;
    let fz = feature_matrix(kernel, locations, z)?;
    Ok(paired_u_statistic((&fy - &fz).view()))
}

/// Relative statistic and variance from precomputed feature matrices
/// (`fx_v`, `fz_v` under `(k_X, V)` and `fy_w`, `fz_w` under `(k_Y, W)`).
pub(crate) fn rel_ume_from_features(
    fx_v: ArrayView2<f64>,
    fz_v: ArrayView2<f64>,
    fy_w: ArrayView2<f64>,
    fz_w: ArrayView2<f64>,
) -> RelativeStatistic {
    let n = fx_v.nrows();
    let u_p = paired_u_statistic((&fx_v - &fz_v).view());
    let u_q = paired_u_statistic((&fy_w - &fz_w).view());

    let mean_p = &fx_v.mean_axis(Axis(0)).unwrap() - &fz_v.mean_axis(Axis(0)).unwrap();
    let mean_q = &fy_w.mean_axis(Axis(0)).unwrap() - &fz_w.mean_axis(Axis(0)).unwrap();

    // Quadratic forms m' C m are variances of the projections m' psi(.)
    let proj_x = fx_v.dot(&mean_p).to_vec();
    let proj_y = fy_w.dot(&mean_q).to_vec();
    let proj_zv = fz_v.dot(&mean_p).to_vec();
    let proj_zw = fz_w.dot(&mean_q).to_vec();

    let terms = VarianceTerms {
        p: cov_n(&proj_x, &proj_x) + cov_n(&proj_zv, &proj_zv),
        pq: cov_n(&proj_zv, &proj_zw),
        q: cov_n(&proj_y, &proj_y) + cov_n(&proj_zw, &proj_zw),
    };
    RelativeStatistic::new(u_p - u_q, terms.nu(), n, Some(terms))
}

fn check_triple(
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    z: &ArrayView2<f64>,
) -> Result<()> {
    ensure_rows("relative UME", 2, z.nrows())?;
    ensure_same_dim("paired sample sizes (X vs Z)", z.nrows(), x.nrows())?;
    ensure_same_dim("paired sample sizes (Y vs Z)", z.nrows(), y.nrows())?;
    Ok(())
}

/// `S = U^2(P, R) - U^2(Q, R)` with its plug-in asymptotic variance.
///
/// `(kx, v)` measure the distance of `P` (sample `x`), `(ky, w)` that of `Q`
/// (sample `y`); `z` is the reference sample from `R`.
#[allow(clippy::too_many_arguments)]
pub fn rel_ume_stat_and_var(
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    v: &TestLocations,
    w: &TestLocations,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<RelativeStatistic> {
    check_triple(&x, &y, &z)?;
    let fx_v = feature_matrix(kx, v, x)?;
    let fz_v = feature_matrix(kx, v, z)?;
    let fy_w = feature_matrix(ky, w, y)?;
    let fz_w = feature_matrix(ky, w, z)?;
    Ok(rel_ume_from_features(
        fx_v.view(),
        fz_v.view(),
        fy_w.view(),
        fz_w.view(),
    ))
}

/// Rel-UME test of `H0: U^2(P,R) <= U^2(Q,R)`; rejection means `Q` fits
/// `R` better at the given locations.
#[allow(clippy::too_many_arguments)]
pub fn rel_ume_test(
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    v: &TestLocations,
    w: &TestLocations,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
    alpha: f64,
) -> Result<TestResult> {
    rel_ume_stat_and_var(kx, ky, v, w, x, y, z)?.test(alpha)
}

/// `S / (gamma + sqrt(nu))`; positive where `Q` fits better.
#[allow(clippy::too_many_arguments)]
pub fn ume_power_criterion(
    kx: &GaussianKernel,
    ky: &GaussianKernel,
    v: &TestLocations,
    w: &TestLocations,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(rel_ume_stat_and_var(kx, ky, v, w, x, y, z)?.power_criterion(gamma))
}
