//! Gaussian kernel, its input gradient, and bandwidth heuristics.

use ndarray::{concatenate, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_rows, ensure_same_dim, Error, Result};

/// Gaussian kernel `k(x, y) = exp(-|x - y|^2 / (2 sigma2))`.
///
/// `sigma2` is the squared bandwidth in squared data units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    sigma2: f64,
}

impl GaussianKernel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "squared bandwidth must be finite and positive, got {sigma2}"
            )));
        }
        Ok(Self { sigma2 })
    }

    pub fn from_log_sigma2(log_sigma2: f64) -> Result<Self> {
        Self::new(log_sigma2.exp())
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        ensure_same_dim("kernel evaluation", x.len(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Gradient of `k(x, y)` with respect to `x`: `k(x, y) (y - x) / sigma2`.
    pub fn grad_x(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Vec<f64>> {
        ensure_same_dim("kernel gradient", x.len(), y.len())?;
        let k = self.eval_unchecked(x, y);
        Ok(x.iter()
            .zip(y.iter())
            .map(|(xi, yi)| k * (yi - xi) / self.sigma2)
            .collect())
    }

    pub(crate) fn eval_unchecked(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        self.from_sq_dist(d2)
    }

    #[inline]
    pub(crate) fn from_sq_dist(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.sigma2)).exp()
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row `i` copied out as a `Vec`.
#[inline]
pub(crate) fn row(m: &ArrayView2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// Median pairwise distance, plus whether any pair of distinct rows coincided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianDistance {
    pub median: f64,
    /// Set when duplicated rows contributed zero distances to the median.
    pub has_zero_distances: bool,
}

/// Median of `|x_i - x_j|` over all index pairs `i < j`.
///
/// Fails when every pairwise distance is zero. Duplicated rows are allowed
/// and reported through [`MedianDistance::has_zero_distances`].
pub fn median_heuristic(sample: ArrayView2<f64>) -> Result<MedianDistance> {
    let n = sample.nrows();
    ensure_rows("median heuristic", 2, n)?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(&sample, i)).collect();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    let has_zero_distances = dists.iter().any(|&d| d == 0.0);
    if dists.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateSample(
            "all pairwise distances are zero".into(),
        ));
    }
    Ok(MedianDistance {
        median: median_in_place(&mut dists),
        has_zero_distances,
    })
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let m = values.len();
    let mid = m / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *upper;
    if m % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Starting squared bandwidth for gradient ascent: the square of the mean of
/// the median distances of `X ∪ Z` and `Y ∪ Z`.
pub fn init_bandwidth(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    z: ArrayView2<f64>,
) -> Result<f64> {
    ensure_same_dim("bandwidth initialisation (X vs Z)", z.ncols(), x.ncols())?;
    ensure_same_dim("bandwidth initialisation (Y vs Z)", z.ncols(), y.ncols())?;
    let xz = concatenate(Axis(0), &[x, z]).expect("column counts checked");
    let yz = concatenate(Axis(0), &[y, z]).expect("column counts checked");
    let med_xz = median_heuristic(xz.view())?.median;
    let med_yz = median_heuristic(yz.view())?.median;
    let mean = 0.5 * (med_xz + med_yz);
    if mean <= 0.0 {
        return Err(Error::DegenerateSample(
            "median distances are zero; cannot initialise bandwidth".into(),
        ));
    }
    Ok(mean * mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn brute_median(points: &[Vec<f64>]) -> f64 {
        let mut d = vec![];
        for i in 0..points.len() {
            for j in 0..points.len() {
                if i < j {
                    let s: f64 = points[i]
                        .iter()
                        .zip(&points[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    d.push(s.sqrt());
                }
            }
        }
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = d.len();
        if m % 2 == 1 {
            d[m / 2]
        } else {
            (d[m / 2 - 1] + d[m / 2]) / 2.0
        }
    }

    #[test]
    fn rejects_nonpositive_bandwidth() {
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::new(-1.0).is_err());
        assert!(GaussianKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn eval_examples() {
        let k = GaussianKernel::new(1.0).unwrap();
        let x = array![3.2, -1.0];
        assert_eq!(k.eval(x.view(), x.view()).unwrap(), 1.0);

        let k = GaussianKernel::new(2.0).unwrap();
        let v = k.eval(array![0.0].view(), array![2.0].view()).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(v, 0.367879, epsilon = 1e-6);

        let k = GaussianKernel::new(0.5).unwrap();
        let v = k.eval(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap();
        // scalar closed form: |x-y|^2 = 2, 2 sigma2 = 1
        let brute = (-(1.0f64 * 1.0 + 1.0 * 1.0) / (2.0 * 0.5)).exp();
        assert_relative_eq!(v, brute, max_relative = 1e-15);
        assert_relative_eq!(v, (-2.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let k = GaussianKernel::new(1.0).unwrap();
        let err = k.eval(array![1.0].view(), array![1.0, 2.0].view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(k.grad_x(array![1.0].view(), array![1.0, 2.0].view()).is_err());
    }

    fn fd_grad(k: &GaussianKernel, x: &[f64], y: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                let fp = k.eval_unchecked(ndarray::aview1(&xp), ndarray::aview1(y));
                let fm = k.eval_unchecked(ndarray::aview1(&xm), ndarray::aview1(y));
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn grad_examples() {
        let k = GaussianKernel::new(1.0).unwrap();
        let x = array![0.3, -0.7];
        assert_eq!(k.grad_x(x.view(), x.view()).unwrap(), vec![0.0, 0.0]);

        let g = k.grad_x(array![0.0].view(), array![1.0].view()).unwrap();
        let fd = fd_grad(&k, &[0.0], &[1.0], 1e-5);
        assert_relative_eq!(g[0], (-0.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g[0], fd[0], max_relative = 1e-6);

        let k = GaussianKernel::new(4.0).unwrap();
        let g = k.grad_x(array![2.0, 0.0].view(), array![0.0, 0.0].view()).unwrap();
        let fd = fd_grad(&k, &[2.0, 0.0], &[0.0, 0.0], 1e-5);
        assert_relative_eq!(g[0], -0.5 * (-0.5f64).exp(), max_relative = 1e-14);
        assert_eq!(g[1], 0.0);
        assert_relative_eq!(g[0], fd[0], max_relative = 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let d = rng.random_range(1..6);
            let sigma2 = rng.random_range(0.2..5.0);
            let k = GaussianKernel::new(sigma2).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let g = k.grad_x(ndarray::aview1(&x), ndarray::aview1(&y)).unwrap();
            let fd = fd_grad(&k, &x, &y, 1e-4);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gram_matrix_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = rng.random_range(2..=10);
            let d = rng.random_range(1..4);
            let pts = Array2::from_shape_fn((m, d), |_| rng.sample::<f64, _>(StandardNormal) * 2.0);
            let k = GaussianKernel::new(rng.random_range(0.1..3.0)).unwrap();
            let gram = Array2::from_shape_fn((m, m), |(i, j)| {
                k.eval(pts.row(i), pts.row(j)).unwrap()
            });
            // Gershgorin cannot certify PSD; use Cholesky with a -1e-8 shift instead.
            let mut a = gram.clone();
            for i in 0..m {
                a[[i, i]] += 1e-8;
            }
            assert!(cholesky_ok(a), "Gram matrix not PSD");
        }
    }

    fn cholesky_ok(mut a: Array2<f64>) -> bool {
        let n = a.nrows();
        for j in 0..n {
            let mut s = a[[j, j]];
            for k in 0..j {
                s -= a[[j, k]] * a[[j, k]];
            }
            if s <= 0.0 {
                return false;
            }
            let l = s.sqrt();
            a[[j, j]] = l;
            for i in (j + 1)..n {
                let mut t = a[[i, j]];
                for k in 0..j {
                    t -= a[[i, k]] * a[[j, k]];
                }
                a[[i, j]] = t / l;
            }
        }
        true
    }

    #[test]
    fn median_examples() {
        let m = median_heuristic(array![[0.0], [1.0], [2.0]].view()).unwrap();
        assert_eq!(m.median, 1.0);
        assert!(!m.has_zero_distances);

        // distances {0, 3, 3}: duplicated row is flagged but not fatal
        let m = median_heuristic(array![[0.0], [0.0], [3.0]].view()).unwrap();
        assert_eq!(m.median, brute_median(&[vec![0.0], vec![0.0], vec![3.0]]));
        assert_eq!(m.median, 3.0);
        assert!(m.has_zero_distances);

        let err = median_heuristic(array![[1.5, 2.0], [1.5, 2.0], [1.5, 2.0]].view()).unwrap_err();
        assert!(matches!(err, Error::DegenerateSample(_)));
        assert!(median_heuristic(array![[1.0]].view()).is_err());
    }

    #[test]
    fn median_matches_brute_force_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let n = rng.random_range(2..25);
            let d = rng.random_range(1..4);
            let a = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
            let pts: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
            let med = median_heuristic(a.view()).unwrap().median;
            assert_relative_eq!(med, brute_median(&pts), max_relative = 1e-14);
            let c: f64 = rng.random_range(-3.0..3.0);
            let scaled = median_heuristic((&a * c).view()).unwrap().median;
            assert_relative_eq!(scaled, c.abs() * med, max_relative = 1e-12);
        }
    }

    #[test]
    fn init_bandwidth_examples() {
        let z = array![[0.0], [1.0]];
        assert_relative_eq!(
            init_bandwidth(z.view(), z.view(), z.view()).unwrap(),
            median_heuristic(ndarray::concatenate![Axis(0), z, z].view()).unwrap().median.powi(2)
        );

        let x = array![[0.0], [1.0]];
        let y = array![[4.0], [4.0]];
        let med_xz = brute_median(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]]);
        let med_yz = brute_median(&[vec![4.0], vec![4.0], vec![0.0], vec![1.0]]);
        assert_eq!((med_xz, med_yz), (1.0, 3.0));
        assert_relative_eq!(init_bandwidth(x.view(), y.view(), z.view()).unwrap(), 4.0);

        let err = init_bandwidth(x.view(), array![[1.0, 2.0]].view(), z.view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn init_bandwidth_standard_normal_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = 10;
        let draw = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((1000, d), |_| rng.sample::<f64, _>(StandardNormal))
        };
        let (x, y, z) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let s2 = init_bandwidth(x.view(), y.view(), z.view()).unwrap();
        assert!(s2 >= 0.5 * d as f64 && s2 <= 2.0 * d as f64, "sigma2 = {s2}");
    }
}
