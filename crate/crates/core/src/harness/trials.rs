use web_time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use super::problem::{Problem, ProblemConfig, TrialData};
use super::{derive_seed, trial_seed, Role};
use crate::error::{Error, Result};
use crate::fssd::rel_fssd_test;
use crate::kernels::{median_heuristic, GaussianKernel};
use crate::locations::TestLocations;
use crate::mmd::rel_mmd_test;
use crate::test_result::{standard_normal, TestResult, DEFAULT_GAMMA};
use crate::tuning::{initial_ume_bandwidth, optimize_fssd_params, optimize_ume_params, split_indices, OptimConfig};
use crate::ume::rel_ume_test;

/// Rows per sample used for the Rel-MMD median heuristic.
pub const MMD_MEDIAN_ROWS: usize = 334;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RelUmeRandom,
    RelUmeOpt,
    RelFssdOpt,
    RelMmdMedian,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::RelUmeRandom,
        Method::RelUmeOpt,
        Method::RelFssdOpt,
        Method::RelMmdMedian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RelUmeRandom => "rel_ume_random",
            Method::RelUmeOpt => "rel_ume_opt",
            Method::RelFssdOpt => "rel_fssd_opt",
            Method::RelMmdMedian => "rel_mmd_median",
        }
    }

    /// Whether the method uses the samples from `P` and `Q`.
    pub fn needs_candidate_samples(self) -> bool {
        self != Method::RelFssdOpt
    }

    pub fn uses_locations(self) -> bool {
        self != Method::RelMmdMedian
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// A method together with its number of test locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(rename = "J")]
    pub j: usize,
}

impl MethodSpec {
    pub fn new(method: Method, j: usize) -> Self {
        Self { method, j }
    }

    pub fn label(&self) -> String {
        if self.method.uses_locations() {
            format!("{}_J{}", self.method, self.j)
        } else {
            self.method.to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub max_iters: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            trials: 100,
            seed: 0,
            train_frac: 0.2,
            max_iters: 200,
        }
    }
}

/// Reads JSON `null` (how NaN is written) back as NaN.
fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub method: String,
    #[serde(deserialize_with = "nullable_f64")]
    pub stat: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub threshold: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub p_value: f64,
    pub reject: bool,
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub method: String,
    pub trials: usize,
    pub failures: usize,
    pub rejections: usize,
    /// Rejections over successful trials.
    #[serde(deserialize_with = "nullable_f64")]
    pub rejection_rate: f64,
    /// 95% Wilson interval for the rejection rate.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsReport {
    pub summaries: Vec<TrialSummary>,
    pub records: Vec<TrialRecord>,
}

/// 95% Wilson score interval for `successes` out of `total`.
pub fn wilson_interval(successes: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let z = standard_normal().inverse_cdf(0.975);
    let n = total as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == total { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

fn head_rows(m: &Array2<f64>, rows: usize) -> ArrayView2<'_, f64> {
    m.slice(s![..rows.min(m.nrows()), ..])
}

/// Median-heuristic kernel on the pooled samples (at most
/// [`MMD_MEDIAN_ROWS`] rows of each).
pub fn pooled_median_kernel(x: &Array2<f64>, y: &Array2<f64>, z: &Array2<f64>) -> Result<GaussianKernel> {
    let pooled = concatenate(
        Axis(0),
        &[
            head_rows(x, MMD_MEDIAN_ROWS),
            head_rows(y, MMD_MEDIAN_ROWS),
            head_rows(z, MMD_MEDIAN_ROWS),
        ],
    )
    .expect("same column count");
    let med = median_heuristic(pooled.view())?.median;
    GaussianKernel::new(med * med)
}

/// Runs one method's full pipeline on one trial's data.
pub fn run_method(
    problem: &Problem,
    spec: MethodSpec,
    data: &TrialData,
    opts: &TrialOptions,
    seed: u64,
) -> Result<TestResult> {
    let xy = || -> Result<(&Array2<f64>, &Array2<f64>)> {
        match (&data.x, &data.y) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(Error::InvalidParameter(format!("{} needs samples from P and Q", spec.method))),
        }
    };
    let n = data.z.nrows();
    let mut optim = OptimConfig::new(spec.j, derive_seed(seed, Role::Init as u64));
    optim.max_iters = opts.max_iters;
    optim.gamma = DEFAULT_GAMMA;
    let split = || split_indices(n, opts.train_frac, derive_seed(seed, Role::Split as u64));
    match spec.method {
        Method::RelMmdMedian => {
            let (x, y) = xy()?;
            let k = pooled_median_kernel(x, y, &data.z)?;
            rel_mmd_test(&k, x.view(), y.view(), data.z.view(), opts.alpha)
        }
        Method::RelUmeRandom | Method::RelUmeOpt => {
            let (x, y) = xy()?;
            let (train, test) = split()?;
            let pick = |m: &Array2<f64>, rows: &[usize]| m.select(Axis(0), rows);
            let (xtr, ytr, ztr) = (pick(x, &train), pick(y, &train), pick(&data.z, &train));
            let (locs, kernel) = if spec.method == Method::RelUmeOpt {
                let res = optimize_ume_params(xtr.view(), ytr.view(), ztr.view(), &optim)?;
                let k = res.kernel();
                (res.locations, k)
            } else {
                if spec.j > ztr.nrows() {
                    return Err(Error::InvalidParameter(format!(
                        "cannot pick {} locations from {} training rows",
                        spec.j,
                        ztr.nrows()
                    )));
                }
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(optim.seed);
                let idx = rand::seq::index::sample(&mut rng, ztr.nrows(), spec.j).into_vec();
                let locs = TestLocations::new(ztr.select(Axis(0), &idx))?;
                let k = GaussianKernel::new(initial_ume_bandwidth(xtr.view(), ytr.view(), ztr.view())?)?;
                (locs, k)
            };
            let (xte, yte, zte) = (pick(x, &test), pick(y, &test), pick(&data.z, &test));
            rel_ume_test(&kernel, &kernel, &locs, &locs, xte.view(), yte.view(), zte.view(), opts.alpha)
        }
        Method::RelFssdOpt => {
            let (p, q) = problem
                .models()
                .ok_or_else(|| Error::InvalidParameter("rel_fssd_opt needs model scores".into()))?;
            let (train, test) = split()?;
            let ztr = data.z.select(Axis(0), &train);
            let res = optimize_fssd_params(p, q, ztr.view(), &optim)?;
            let k = res.kernel();
            let zte = data.z.select(Axis(0), &test);
            rel_fssd_test(&k, &k, p, q, &res.locations, &res.locations, zte.view(), opts.alpha)
        }
    }
}

fn record(trial_index: usize, spec: &MethodSpec, outcome: Result<TestResult>, secs: f64) -> TrialRecord {
    match outcome {
        Ok(r) => TrialRecord {
            trial_index,
            method: spec.label(),
            stat: r.stat,
            threshold: r.threshold,
            p_value: r.p_value,
            reject: r.reject,
            wall_time_seconds: secs,
            error: None,
        },
        Err(e) => TrialRecord {
            trial_index,
            method: spec.label(),
            stat: f64::NAN,
            threshold: f64::NAN,
            p_value: f64::NAN,
            reject: false,
            wall_time_seconds: secs,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every method on one trial's data; the wall time covers the method
/// pipeline only, not sampling.
fn run_trial(problem: &Problem, methods: &[MethodSpec], data: Result<TrialData>, opts: &TrialOptions, trial: usize) -> Vec<TrialRecord> {
    let seed = trial_seed(opts.seed, trial);
    methods
        .iter()
        .map(|spec| {
            let data = match &data {
                Ok(d) => d,
                Err(e) => return record(trial, spec, Err(e.clone()), 0.0),
            };
            let start = Instant::now();
            let outcome = run_method(problem, *spec, data, opts, seed);
            record(trial, spec, outcome, start.elapsed().as_secs_f64())
        })
        .collect()
}

/// Summaries in the order of `methods`; records sorted by method then trial.
pub fn summarize(methods: &[MethodSpec], mut records: Vec<TrialRecord>) -> TrialsReport {
    let order = |label: &str| methods.iter().position(|m| m.label() == label).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (order(&r.method), r.trial_index));
    let summaries = methods
        .iter()
        .map(|spec| {
            let label = spec.label();
            let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.method == label).collect();
            let failures = mine.iter().filter(|r| r.error.is_some()).count();
            let rejections = mine.iter().filter(|r| r.reject).count();
            let ok = mine.len() - failures;
            let (ci_low, ci_high) = wilson_interval(rejections, ok);
            TrialSummary {
                method: label,
                trials: mine.len(),
                failures,
                rejections,
                rejection_rate: if ok == 0 { f64::NAN } else { rejections as f64 / ok as f64 },
                ci_low,
                ci_high,
            }
        })
        .collect();
    TrialsReport { summaries, records }
}

fn check_run(methods: &[MethodSpec], opts: &TrialOptions) -> Result<()> {
    if opts.trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods given".into()));
    }
    if let Some(m) = methods.iter().find(|m| m.method.uses_locations() && m.j == 0) {
        return Err(Error::InvalidParameter(format!("{} needs J >= 1", m.method)));
    }
    crate::test_result::check_alpha(opts.alpha)
}

/// Rejection rates of `methods` over independent trials of `problem`.
///
/// Every method sees the same samples within a trial. Trials run on the
/// current rayon pool.
pub fn run_trials(problem: &Problem, methods: &[MethodSpec], opts: &TrialOptions) -> Result<TrialsReport> {
    check_run(methods, opts)?;
    let need_xy = methods.iter().any(|m| m.method.needs_candidate_samples());
    let records = (0..opts.trials)
        .into_par_iter()
        .flat_map_iter(|t| {
            let data = problem.draw(trial_seed(opts.seed, t), need_xy);
            run_trial(problem, methods, data, opts, t)
        })
        .collect();
    Ok(summarize(methods, records))
}

/// [`run_trials`] over several RBM perturbations. The samples from `q` and
/// `r` do not depend on epsilon and are drawn once per trial; results equal
/// separate runs with the same seeds.
pub fn run_epsilon_grid(
    base: &ProblemConfig,
    epsilons: &[f64],
    methods: &[MethodSpec],
    opts: &TrialOptions,
) -> Result<Vec<(f64, TrialsReport)>> {
    check_run(methods, opts)?;
    let problems = epsilons
        .iter()
        .map(|&eps| {
            Problem::new(ProblemConfig {
                epsilon: Some(eps),
                ..base.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = problems.first() else {
        return Ok(Vec::new());
    };
    let need_xy = methods.iter().any(|m| m.method.needs_candidate_samples());
    let per_trial: Vec<Vec<Vec<TrialRecord>>> = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(opts.seed, t);
            let shared = first.draw(seed, false).and_then(|d| {
                let y = need_xy.then(|| first.draw_role(Role::Y, seed)).transpose()?;
                Ok((d.z, y))
            });
            problems
                .iter()
                .map(|prob| {
                    let data = shared.clone().and_then(|(z, y)| {
                        let x = need_xy.then(|| prob.draw_role(Role::X, seed)).transpose()?;
                        Ok(TrialData { x, y, z })
                    });
                    run_trial(prob, methods, data, opts, t)
                })
                .collect()
        })
        .collect();
    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let records = per_trial.iter().flat_map(|t| t[k].iter().cloned()).collect();
            (eps, summarize(methods, records))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::problem::ProblemKind;

    fn quick_opts(trials: usize) -> TrialOptions {
        TrialOptions {
            trials,
            max_iters: 20,
            seed: 11,
            ..TrialOptions::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("rel_ksd".parse::<Method>().is_err());
        assert_eq!(MethodSpec::new(Method::RelUmeOpt, 5).label(), "rel_ume_opt_J5");
        assert_eq!(MethodSpec::new(Method::RelMmdMedian, 5).label(), "rel_mmd_median");
    }

    #[test]
    fn wilson_interval_examples() {
        let (lo, hi) = wilson_interval(5, 100);
        assert!((lo - 0.02154).abs() < 1e-4 && (hi - 0.11175).abs() < 1e-4, "{lo} {hi}");
        assert_eq!(wilson_interval(0, 10).0, 0.0);
        assert_eq!(wilson_interval(10, 10).1, 1.0);
    }

    #[test]
    fn single_trial_is_reproducible() {
        let prob = Problem::new(ProblemConfig::blobs(200)).unwrap();
        let methods: Vec<MethodSpec> = Method::ALL.iter().map(|&m| MethodSpec::new(m, 2)).collect();
        let a = run_trials(&prob, &methods, &quick_opts(1)).unwrap();
        let b = run_trials(&prob, &methods, &quick_opts(1)).unwrap();
        let strip = |r: &TrialsReport| {
            r.records
                .iter()
                .map(|t| TrialRecord {
                    wall_time_seconds: 0.0,
                    ..t.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert!(a.records.iter().all(|r| r.error.is_none()), "{:?}", a.records);
        assert_eq!(a.summaries.len(), 4);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let z = Array2::from_shape_fn((40, 2), |(i, j)| (i * 2 + j) as f64);
        let prob = Problem::from_matrices(20, z.clone(), z.clone(), z).unwrap();
        let methods = [MethodSpec::new(Method::RelFssdOpt, 1), MethodSpec::new(Method::RelUmeRandom, 1)];
        let report = run_trials(&prob, &methods, &quick_opts(3)).unwrap();
        assert_eq!(report.summaries[0].failures, 3);
        assert!(report.summaries[0].rejection_rate.is_nan());
        assert_eq!(report.summaries[1].failures, 0);
        assert_eq!(report.summaries[1].trials, 3);
        let json = serde_json::to_string(&report).unwrap();
        let back: TrialsReport = serde_json::from_str(&json).unwrap();
        assert!(back.records[0].stat.is_nan() && back.summaries[0].rejection_rate.is_nan());
    }

    #[test]
    fn invalid_runs() {
        let prob = Problem::new(ProblemConfig::mean_shift(20)).unwrap();
        let m = [MethodSpec::new(Method::RelUmeOpt, 1)];
        assert!(run_trials(&prob, &m, &quick_opts(0)).is_err());
        assert!(run_trials(&prob, &[MethodSpec::new(Method::RelUmeOpt, 0)], &quick_opts(1)).is_err());
        let bad_alpha = TrialOptions {
            alpha: 1.5,
            ..quick_opts(1)
        };
        assert!(run_trials(&prob, &m, &bad_alpha).is_err());
    }

    #[test]
    fn epsilon_grid_matches_separate_runs() {
        let mut base = ProblemConfig::rbm(40, 0.0);
        base.d = Some(4);
        base.d_h = Some(2);
        base.burn_in = Some(10);
        let methods = [MethodSpec::new(Method::RelUmeRandom, 2), MethodSpec::new(Method::RelFssdOpt, 1)];
        let opts = quick_opts(2);
        let grid = run_epsilon_grid(&base, &[0.1, 0.5], &methods, &opts).unwrap();
        for (eps, report) in grid {
            let prob = Problem::new(ProblemConfig {
                epsilon: Some(eps),
                ..base.clone()
            })
            .unwrap();
            let single = run_trials(&prob, &methods, &opts).unwrap();
            let stats = |r: &TrialsReport| r.records.iter().map(|t| (t.stat, t.reject)).collect::<Vec<_>>();
            assert_eq!(stats(&report), stats(&single));
        }
        assert_eq!(base.problem, ProblemKind::Rbm);
    }
}
