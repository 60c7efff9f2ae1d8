//! Location reports: pool scoring and greedy selection on a training split,
//! followed by a test on the held-out rows.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use super::trials::Method;
use super::{derive_seed, trial_seed, Role};
use crate::error::{Error, Result};
use crate::kernels::GaussianKernel;
use crate::locations::TestLocations;
use crate::test_result::{TestResult, DEFAULT_GAMMA};
use crate::tuning::{
    greedy_select, initial_fssd_bandwidth, initial_ume_bandwidth, score_candidate_pool, split_indices, CriterionContext,
    Direction, PoolScores,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Ume,
    Fssd,
}

impl CriterionKind {
    pub fn from_method(method: Method) -> Self {
        match method {
            Method::RelFssdOpt => CriterionKind::Fssd,
            _ => CriterionKind::Ume,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationOptions {
    pub kind: CriterionKind,
    pub pool_size: usize,
    pub alpha: f64,
    pub seed: u64,
    pub train_frac: f64,
}

/// Candidate pool with scores, plus the held-out test at the best candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolReport {
    pub pool: Array2<f64>,
    pub scores: PoolScores,
    /// Pool indices from highest to lowest score.
    pub order: Vec<usize>,
    pub sigma2: f64,
    pub test: TestResult,
    /// Locations are only interpretable when this is true.
    pub test_rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyReport {
    pub direction: Direction,
    pub locations: Array2<f64>,
    pub indices: Vec<usize>,
    pub trace: Vec<f64>,
    pub exhausted: bool,
    pub sigma2: f64,
    pub test: TestResult,
    pub test_rejected: bool,
}

struct Prepared {
    train: CriterionContext,
    test: CriterionContext,
    pool: Array2<f64>,
}

fn prepare(problem: &Problem, opts: &LocationOptions) -> Result<Prepared> {
    if opts.pool_size == 0 {
        return Err(Error::InvalidParameter("pool size must be at least 1".into()));
    }
    let seed = trial_seed(opts.seed, 0);
    let need_xy = opts.kind == CriterionKind::Ume;
    let data = problem.draw(seed, need_xy)?;
    let (train, test) = split_indices(data.z.nrows(), opts.train_frac, derive_seed(seed, Role::Split as u64))?;
    let pool = problem.draw_pool(opts.pool_size, seed)?;
    let rows = |m: &Array2<f64>, idx: &[usize]| m.select(Axis(0), idx);
    let (ztr, zte) = (rows(&data.z, &train), rows(&data.z, &test));
    let (train_ctx, test_ctx) = match opts.kind {
        CriterionKind::Ume => {
            let (x, y) = (data.x.as_ref().expect("drawn"), data.y.as_ref().expect("drawn"));
            let (xtr, ytr) = (rows(x, &train), rows(y, &train));
            let k = GaussianKernel::new(initial_ume_bandwidth(xtr.view(), ytr.view(), ztr.view())?)?;
            (
                CriterionContext::ume(k, xtr.view(), ytr.view(), ztr.view())?,
                CriterionContext::ume(k, rows(x, &test).view(), rows(y, &test).view(), zte.view())?,
            )
        }
        CriterionKind::Fssd => {
            let (p, q) = problem
                .models()
                .ok_or_else(|| Error::InvalidParameter("FSSD locations need model scores".into()))?;
            let k = GaussianKernel::new(initial_fssd_bandwidth(ztr.view())?)?;
            (
                CriterionContext::fssd(k, p, q, ztr.view())?,
                CriterionContext::fssd(k, p, q, zte.view())?,
            )
        }
    };
    Ok(Prepared {
        train: train_ctx,
        test: test_ctx,
        pool,
    })
}

/// Scores every pool row on the training split and tests the best one on
/// the held-out rows.
pub fn pool_score_report(problem: &Problem, opts: &LocationOptions) -> Result<PoolReport> {
    let prep = prepare(problem, opts)?;
    let scores = score_candidate_pool(prep.pool.view(), &prep.train, DEFAULT_GAMMA)?;
    let order = scores.descending();
    let best = TestLocations::single(prep.pool.row(order[0]))?;
    let test = prep.test.statistic(&best)?.test(opts.alpha)?;
    Ok(PoolReport {
        sigma2: prep.train.kernel().sigma2(),
        pool: prep.pool,
        scores,
        order,
        test_rejected: test.reject,
        test,
    })
}

/// Greedy selection of `j` pool rows on the training split, tested on the
/// held-out rows.
pub fn greedy_report(problem: &Problem, j: usize, direction: Direction, opts: &LocationOptions) -> Result<GreedyReport> {
    let prep = prepare(problem, opts)?;
    let sel = greedy_select(prep.pool.view(), j, direction, &prep.train, DEFAULT_GAMMA)?;
    let test = prep.test.statistic(&sel.locations)?.test(opts.alpha)?;
    Ok(GreedyReport {
        direction,
        locations: sel.locations.view().to_owned(),
        indices: sel.indices,
        trace: sel.trace,
        exhausted: sel.exhausted,
        sigma2: prep.train.kernel().sigma2(),
        test_rejected: test.reject,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::problem::ProblemConfig;

    fn opts(kind: CriterionKind) -> LocationOptions {
        LocationOptions {
            kind,
            pool_size: 30,
            alpha: 0.05,
            seed: 4,
            train_frac: 0.5,
        }
    }

    #[test]
    fn pool_report_orders_scores() {
        let prob = Problem::new(ProblemConfig::mixture1d(400, 0.3)).unwrap();
        for kind in [CriterionKind::Ume, CriterionKind::Fssd] {
            let r = pool_score_report(&prob, &opts(kind)).unwrap();
            assert_eq!(r.pool.nrows(), 30);
            assert_eq!(r.order.len(), 30);
            assert!(r.order.windows(2).all(|w| r.scores.scores[w[0]] >= r.scores.scores[w[1]]));
            assert_eq!(r.test_rejected, r.test.reject);
        }
    }

    #[test]
    fn greedy_report_respects_direction() {
        let prob = Problem::new(ProblemConfig::mixture1d(400, 0.5)).unwrap();
        let up = greedy_report(&prob, 3, Direction::Maximize, &opts(CriterionKind::Fssd)).unwrap();
        let down = greedy_report(&prob, 3, Direction::Minimize, &opts(CriterionKind::Fssd)).unwrap();
        assert!(up.trace[0] > down.trace[0]);
        assert_eq!(up.locations.nrows(), up.indices.len());
    }

    #[test]
    fn fssd_reports_need_models() {
        let z = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let prob = Problem::from_matrices(20, z.clone(), z.clone(), z).unwrap();
        assert!(pool_score_report(&prob, &opts(CriterionKind::Fssd)).is_err());
        assert!(pool_score_report(&prob, &opts(CriterionKind::Ume)).is_ok());
    }
}
