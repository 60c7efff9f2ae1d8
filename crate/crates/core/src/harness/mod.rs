//! Experiment runner: problem presets, trial loops, runtime benchmarks,
//! criterion curves, location reports and file IO.

mod bench;
mod curve;
mod io;
mod problem;
mod report;
mod trials;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bench::{log_log_slope, runtime_bench, BenchReport, BenchRow, BenchSlope, MIN_TIMED_SECONDS};
pub use curve::{criterion_curve, linspace, CriterionCurve};
pub use io::{load_matrix, save_matrix, save_results, write_figure_csv, FigureRow};
pub use problem::{ExternalPaths, Problem, ProblemConfig, ProblemKind, ProblemModel, TrialData};
pub use report::{greedy_report, pool_score_report, CriterionKind, GreedyReport, LocationOptions, PoolReport};
pub use trials::{
    pooled_median_kernel, run_epsilon_grid, run_method, run_trials, summarize, wilson_interval, Method, MethodSpec,
    TrialOptions, TrialRecord, TrialSummary, TrialsReport, MMD_MEDIAN_ROWS,
};

/// Environment variable holding the worker count for trial pools.
pub const WORKERS_ENV: &str = "RELGOF_WORKERS";

/// Independent random streams within one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    X = 0,
    Y = 1,
    Z = 2,
    Split = 3,
    Init = 4,
    Pool = 5,
}

/// Seed of stream `stream` under `base`, taken from a ChaCha stream so
/// distinct streams never overlap.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Seed of trial `trial` in a run with base seed `seed_base`.
pub fn trial_seed(seed_base: u64, trial: usize) -> u64 {
    derive_seed(seed_base, trial as u64 + (1 << 32))
}

/// Thread pool sized by [`WORKERS_ENV`] (all cores when unset).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| Error::InvalidParameter(format!("{WORKERS_ENV} must be a positive integer, got '{v}'")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// Everything a `trials` run needs, echoed into its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub methods: Vec<MethodSpec>,
    pub options: TrialOptions,
    /// RBM perturbations to sweep instead of `problem.epsilon`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(flatten)]
    pub report: TrialsReport,
}

/// Result document of a `trials` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub config: RunConfig,
    pub results: Vec<EpsilonReport>,
}

impl RunResults {
    /// Rejection rates as figure rows (`x` is epsilon for rbm, otherwise `n`).
    pub fn figure_rows(&self) -> Vec<FigureRow> {
        let mut rows = Vec::new();
        for r in &self.results {
            let x = r.epsilon.unwrap_or(self.config.problem.n as f64);
            rows.extend(r.report.summaries.iter().map(|s| FigureRow {
                x,
                method: s.method.clone(),
                value: s.rejection_rate,
                ci_low: Some(s.ci_low),
                ci_high: Some(s.ci_high),
            }));
        }
        rows
    }
}

/// Runs the configured trials, sweeping epsilon when requested.
pub fn run_config(config: &RunConfig) -> Result<RunResults> {
    let results = if config.epsilons.is_empty() {
        let problem = Problem::new(config.problem.clone())?;
        let report = run_trials(&problem, &config.methods, &config.options)?;
        vec![EpsilonReport {
            epsilon: config.problem.epsilon,
            report,
        }]
    } else {
        if config.problem.problem != ProblemKind::Rbm {
            return Err(Error::InvalidParameter("epsilon sweeps apply to the rbm problem only".into()));
        }
        let base = ProblemConfig {
            epsilon: Some(config.epsilons[0]),
            ..config.problem.clone()
        };
        run_epsilon_grid(&base, &config.epsilons, &config.methods, &config.options)?
            .into_iter()
            .map(|(eps, report)| EpsilonReport {
                epsilon: Some(eps),
                report,
            })
            .collect()
    };
    Ok(RunResults {
        config: config.clone(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(1, 3));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 2));
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|t| trial_seed(9, t)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn results_are_byte_identical_apart_from_wall_time() {
        let config = RunConfig {
            problem: ProblemConfig::blobs(60),
            methods: vec![MethodSpec::new(Method::RelUmeOpt, 2), MethodSpec::new(Method::RelMmdMedian, 1)],
            options: TrialOptions {
                trials: 3,
                max_iters: 10,
                ..TrialOptions::default()
            },
            epsilons: vec![],
        };
        let render = || {
            let mut res = run_config(&config).unwrap();
            for r in &mut res.results {
                for t in &mut r.report.records {
                    t.wall_time_seconds = 0.0;
                }
            }
            serde_json::to_string_pretty(&res).unwrap()
        };
        assert_eq!(render(), render());
        let res = run_config(&config).unwrap();
        assert_eq!(res.figure_rows().len(), 2);
        let back: RunResults = serde_json::from_str(&serde_json::to_string(&res).unwrap()).unwrap();
        assert_eq!(back.config, config);
    }

    #[test]
    fn sweeps_only_for_rbm() {
        let config = RunConfig {
            problem: ProblemConfig::blobs(60),
            methods: vec![MethodSpec::new(Method::RelMmdMedian, 1)],
            options: TrialOptions::default(),
            epsilons: vec![0.1],
        };
        assert!(run_config(&config).is_err());
    }

    #[test]
    fn worker_pool_reads_env() {
        std::env::set_var(WORKERS_ENV, "2");
        assert_eq!(worker_pool().unwrap().current_num_threads(), 2);
        std::env::set_var(WORKERS_ENV, "zero");
        assert!(worker_pool().is_err());
        std::env::remove_var(WORKERS_ENV);
        assert!(worker_pool().is_ok());
    }
}
