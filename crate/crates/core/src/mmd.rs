//! Quadratic-time relative MMD baseline.

use ndarray::ArrayView2;

use crate::error::{ensure_rows, ensure_same_dim, Result};
use crate::kernels::{sq_dist, GaussianKernel};
use crate::test_result::{var_n, RelativeStatistic, TestResult};

fn rows_of(m: ArrayView2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Row sums of the within-sample Gram matrix, diagonal excluded.
fn within_row_sums(kernel: &GaussianKernel, a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let k = kernel.from_sq_dist(sq_dist(&a[i], &a[j]));
            sums[i] += k;
            sums[j] += k;
        }
    }
    sums
}

/// Row and column sums of the cross Gram matrix `K[i, j] = k(a_i, b_j)`.
fn cross_sums(kernel: &GaussianKernel, a: &[Vec<f64>], b: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0; a.len()];
    let mut cols = vec![0.0; b.len()];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let k = kernel.from_sq_dist(sq_dist(ai, bj));
            rows[i] += k;
            cols[j] += k;
        }
    }
    (rows, cols)
}

/// Unbiased `MMD_u^2` between samples `a` and `b` (sizes may differ).
pub fn mmd_u_sq(kernel: &GaussianKernel, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    ensure_rows("MMD estimate (first sample)", 2, a.nrows())?;
    ensure_rows("MMD estimate (second sample)", 2, b.nrows())?;
    ensure_same_dim("MMD sample dimensions", a.ncols(), b.ncols())?;
    let (ra, rb) = (rows_of(a), rows_of(b));
    let (na, nb) = (ra.len() as f64, rb.len() as f64);
    let kaa: f64 = within_row_sums(kernel, &ra).iter().sum();
    let kbb: f64 = within_row_sums(kernel, &rb).iter().sum();
    let kab: f64 = cross_sums(kernel, &ra, &rb).0.iter().sum();
    Ok(kaa / (na * (na - 1.0)) + kbb / (nb * (nb - 1.0)) - 2.0 * kab / (na * nb))
}

/// `MMD_u^2(X, Z) - MMD_u^2(Y, Z)` with a plug-in variance.
///
/// Both estimates share `Z`, so the difference is one U-statistic in the
/// triples `(x_i, y_i, z_i)` whose kernel is
/// `k(x,x') - k(x,z') - k(x',z) - k(y,y') + k(y,z') + k(y',z)` (the `Z`
/// within-sample terms cancel). Its first Hoeffding projection splits into
/// `mu_P(x) - mu_R(x)`, `mu_R(y) - mu_Q(y)` and `mu_Q(z) - mu_P(z)`, each
/// estimated by empirical mean embeddings; the variance is four times the
/// sum of their sample variances.
pub fn rel_mmd_stat_and_var(
    kernel: &GaussianKernel,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<RelativeStatistic> {
    ensure_rows("relative MMD", 2, z.nrows())?;
    ensure_same_dim("paired sample sizes (X vs Z)", z.nrows(), x.nrows())?;
    ensure_same_dim("paired sample sizes (Y vs Z)", z.nrows(), y.nrows())?;
    ensure_same_dim("sample dimensions (X vs Z)", z.ncols(), x.ncols())?;
    ensure_same_dim("sample dimensions (Y vs Z)", z.ncols(), y.ncols())?;
    let (rx, ry, rz) = (rows_of(x), rows_of(y), rows_of(z));
    let n = rz.len();
    let nf = n as f64;

    let kxx = within_row_sums(kernel, &rx);
    let kyy = within_row_sums(kernel, &ry);
    let (kxz, kzx) = cross_sums(kernel, &rx, &rz);
    let (kyz, kzy) = cross_sums(kernel, &ry, &rz);

    let within = nf * (nf - 1.0);
    let cross = nf * nf;
    let mmd_xz_minus_zz = kxx.iter().sum::<f64>() / within - 2.0 * kxz.iter().sum::<f64>() / cross;
    let mmd_yz_minus_zz = kyy.iter().sum::<f64>() / within - 2.0 * kyz.iter().sum::<f64>() / cross;

    let a: Vec<f64> = (0..n).map(|i| kxx[i] / (nf - 1.0) - kxz[i] / nf).collect();
    let b: Vec<f64> = (0..n).map(|i| kyz[i] / nf - kyy[i] / (nf - 1.0)).collect();
    let c: Vec<f64> = (0..n).map(|i| (kzy[i] - kzx[i]) / nf).collect();
    let nu = 4.0 * (var_n(&a) + var_n(&b) + var_n(&c));
    Ok(RelativeStatistic::new(mmd_xz_minus_zz - mmd_yz_minus_zz, nu, n, None))
}

/// Rel-MMD test of `H0: MMD(P,R) <= MMD(Q,R)` with the normal threshold.
pub fn rel_mmd_test(
    kernel: &GaussianKernel,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
    alpha: f64,
) -> Result<TestResult> {
    rel_mmd_stat_and_var(kernel, x, y, z)?.test(alpha)
}
