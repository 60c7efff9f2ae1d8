use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::FigureRow;
use super::problem::{Problem, ProblemConfig};
use super::trial_seed;
use crate::error::{Error, Result};
use crate::kernels::GaussianKernel;
use crate::locations::TestLocations;
use crate::test_result::DEFAULT_GAMMA;
use crate::tuning::CriterionContext;

/// Power criteria of single locations on the 1-D mixture problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionCurve {
    pub left_weight: f64,
    pub n: usize,
    pub sigma2: f64,
    pub grid: Vec<f64>,
    pub rel_ume: Vec<f64>,
    pub rel_fssd: Vec<f64>,
}

impl CriterionCurve {
    pub fn figure_rows(&self) -> Vec<FigureRow> {
        let mut rows = Vec::with_capacity(2 * self.grid.len());
        for (name, values) in [("rel_ume", &self.rel_ume), ("rel_fssd", &self.rel_fssd)] {
            rows.extend(self.grid.iter().zip(values).map(|(&x, &value)| FigureRow {
                x,
                method: name.to_string(),
                value,
                ci_low: None,
                ci_high: None,
            }));
        }
        rows
    }

    /// Criterion at the grid point nearest to `x`.
    pub fn at(&self, x: f64, fssd: bool) -> f64 {
        let i = (0..self.grid.len())
            .min_by(|&a, &b| (self.grid[a] - x).abs().total_cmp(&(self.grid[b] - x).abs()))
            .expect("non-empty grid");
        if fssd {
            self.rel_fssd[i]
        } else {
            self.rel_ume[i]
        }
    }
}

/// Evenly spaced grid including both ends.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    Array1::linspace(lo, hi, points).to_vec()
}

/// Rel-UME and Rel-FSSD criteria at every grid location (`J = 1`) on the
/// mixture1d problem with `p = N(-2, 1)`, `q = N(2, 1)` and `r` mixing them
/// with weight `left_weight` on the left mode.
pub fn criterion_curve(left_weight: f64, n: usize, grid: &[f64], sigma2: f64, seed: u64) -> Result<CriterionCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty location grid".into()));
    }
    let problem = Problem::new(ProblemConfig::mixture1d(n, left_weight))?;
    let data = problem.draw(trial_seed(seed, 0), true)?;
    let (x, y) = (data.x.expect("drawn"), data.y.expect("drawn"));
    let kernel = GaussianKernel::new(sigma2)?;
    let ume = CriterionContext::ume(kernel, x.view(), y.view(), data.z.view())?;
    let (p, q) = problem.models().expect("mixture1d has models");
    let fssd = CriterionContext::fssd(kernel, p, q, data.z.view())?;
    let values: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&v| {
            let loc = TestLocations::single(ndarray::aview1(&[v]))?;
            Ok((
                ume.statistic(&loc)?.power_criterion(DEFAULT_GAMMA),
                fssd.statistic(&loc)?.power_criterion(DEFAULT_GAMMA),
            ))
        })
        .collect::<Result<_>>()?;
    let (rel_ume, rel_fssd) = values.into_iter().unzip();
    Ok(CriterionCurve {
        left_weight,
        n,
        sigma2,
        grid: grid.to_vec(),
        rel_ume,
        rel_fssd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_ends() {
        let g = linspace(-6.0, 6.0, 200);
        assert_eq!(g.len(), 200);
        assert_eq!((g[0], g[199]), (-6.0, 6.0));
    }

    #[test]
    fn curve_shapes_and_rows() {
        let grid = linspace(-4.0, 4.0, 9);
        let c = criterion_curve(0.3, 500, &grid, 1.0, 1).unwrap();
        assert_eq!(c.rel_ume.len(), 9);
        assert_eq!(c.figure_rows().len(), 18);
        assert_eq!(c.at(-2.1, false), c.rel_ume[2]);
        assert!(c.rel_ume.iter().chain(&c.rel_fssd).all(|v| v.is_finite()));
        assert!(criterion_curve(0.3, 500, &[], 1.0, 1).is_err());
    }

    #[test]
    fn left_heavy_mixture_favours_p_on_the_left_for_fssd() {
        let c = criterion_curve(0.9, 2000, &[-2.0, 2.0], 1.0, 2).unwrap();
        assert!(c.rel_fssd[0] < 0.0);
    }
}
