use web_time::Instant;

use serde::{Deserialize, Serialize};

use super::problem::{Problem, ProblemConfig};
use super::trial_seed;
use super::trials::{run_method, MethodSpec, TrialOptions};
use crate::error::{Error, Result};

/// Medians below this many seconds trigger more repetitions.
pub const MIN_TIMED_SECONDS: f64 = 1e-3;
const MAX_REP_FACTOR: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSlope {
    pub method: String,
    /// Least-squares slope of `log(time)` against `log(n)`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub slopes: Vec<BenchSlope>,
    pub notes: Vec<String>,
}

impl BenchReport {
    pub fn slope(&self, label: &str) -> Option<f64> {
        self.slopes.iter().find(|s| s.method == label).map(|s| s.slope)
    }

    pub fn median(&self, label: &str, n: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == label && r.n == n)
            .map(|r| r.median_seconds)
    }
}

pub fn log_log_slope(ns: &[usize], times: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn median(values: &mut [f64]) -> f64 {
    crate::kernels::median_in_place(values)
}

/// Median wall time of one trial per method and sample size. Timing covers
/// the method pipeline, not sampling. Repetitions run sequentially.
pub fn runtime_bench(
    base: &ProblemConfig,
    methods: &[MethodSpec],
    n_grid: &[usize],
    reps: usize,
    opts: &TrialOptions,
) -> Result<BenchReport> {
    if reps < 3 {
        return Err(Error::InvalidParameter(format!("reps must be at least 3, got {reps}")));
    }
    if n_grid.len() < 2 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("n grid must hold at least two increasing sizes".into()));
    }
    let need_xy = methods.iter().any(|m| m.method.needs_candidate_samples());
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for &n in n_grid {
        let problem = Problem::new(ProblemConfig { n, ..base.clone() })?;
        for spec in methods {
            let mut times = Vec::new();
            let mut target = reps;
            let mut rep = 0;
            loop {
                while rep < target {
                    let seed = trial_seed(opts.seed, rep);
                    let data = problem.draw(seed, need_xy)?;
                    let start = Instant::now();
                    run_method(&problem, *spec, &data, opts, seed)?;
                    times.push(start.elapsed().as_secs_f64());
                    rep += 1;
                }
                let med = median(&mut times.clone());
                if med >= MIN_TIMED_SECONDS || target >= reps * MAX_REP_FACTOR {
                    break;
                }
                target *= 2;
            }
            if target > reps {
                notes.push(format!(
                    "{} at n={n}: median below {MIN_TIMED_SECONDS}s, reps increased to {target}",
                    spec.label()
                ));
            }
            let min = times.iter().copied().fold(f64::INFINITY, f64::min);
            let max = times.iter().copied().fold(0.0, f64::max);
            rows.push(BenchRow {
                method: spec.label(),
                n,
                median_seconds: median(&mut times),
                min_seconds: min,
                max_seconds: max,
                reps: target,
            });
        }
    }
    let slopes = methods
        .iter()
        .map(|spec| {
            let label = spec.label();
            let times: Vec<f64> = n_grid
                .iter()
                .map(|&n| rows.iter().find(|r| r.method == label && r.n == n).expect("row").median_seconds)
                .collect();
            BenchSlope {
                slope: log_log_slope(n_grid, &times),
                method: label,
            }
        })
        .collect();
    Ok(BenchReport { rows, slopes, notes })
}
