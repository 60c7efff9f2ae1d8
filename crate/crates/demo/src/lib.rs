//! WebAssembly entry points for the browser demo. Every export returns a
//! JSON document; errors are thrown as strings.

use ndarray::{Array2, Axis};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use relgof::harness::{
    criterion_curve as curve, derive_seed, linspace, run_trials, trial_seed, Method, MethodSpec, Problem,
    ProblemConfig, ProblemKind, Role, TrialOptions,
};
use relgof::{
    optimize_ume_params, rel_ume_test, split_indices, CriterionContext, OptimConfig, TestLocations, TestResult,
    DEFAULT_GAMMA,
};

type DemoResult = Result<String, String>;

fn json<T: Serialize>(value: &T) -> DemoResult {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn err(e: relgof::Error) -> String {
    e.to_string()
}

/// Rel-UME and Rel-FSSD criteria of one location swept over `[lo, hi]` on
/// the two-Gaussian mixture problem.
#[wasm_bindgen]
pub fn criterion_curve(left_weight: f64, n: usize, points: usize, lo: f64, hi: f64, sigma2: f64, seed: u64) -> DemoResult {
    if points < 2 || !(lo < hi) {
        return Err("the grid needs at least 2 points and lo < hi".into());
    }
    let c = curve(left_weight, n, &linspace(lo, hi, points), sigma2, seed).map_err(err)?;
    json(&c)
}

#[derive(Serialize)]
struct Landscape {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Row-major over `ys`, then `xs`.
    values: Vec<f64>,
}

#[derive(Serialize)]
struct BlobsRun {
    /// First rows of each sample, for plotting.
    x: Vec<[f64; 2]>,
    y: Vec<[f64; 2]>,
    z: Vec<[f64; 2]>,
    initial: Vec<[f64; 2]>,
    optimized: Vec<[f64; 2]>,
    sigma2: f64,
    trajectory: Vec<f64>,
    landscape: Landscape,
    test: TestResult,
}

fn points(m: &Array2<f64>, limit: usize) -> Vec<[f64; 2]> {
    m.rows().into_iter().take(limit).map(|r| [r[0], r[1]]).collect()
}

/// Optimizes Rel-UME locations on the Blobs problem and reports the
/// single-location criterion over the plotted window.
#[wasm_bindgen]
pub fn blobs_locations(n: usize, j: usize, max_iters: usize, grid: usize, seed: u64) -> DemoResult {
    if grid < 2 {
        return Err("grid needs at least 2 points per axis".into());
    }
    let problem = Problem::new(ProblemConfig::blobs(n)).map_err(err)?;
    let tseed = trial_seed(seed, 0);
    let data = problem.draw(tseed, true).map_err(err)?;
    let (x, y, z) = (data.x.expect("drawn"), data.y.expect("drawn"), data.z);
    let (train, test) = split_indices(n, 0.2, derive_seed(tseed, Role::Split as u64)).map_err(err)?;
    let pick = |m: &Array2<f64>, rows: &[usize]| m.select(Axis(0), rows);
    let (xtr, ytr, ztr) = (pick(&x, &train), pick(&y, &train), pick(&z, &train));

    let mut cfg = OptimConfig::new(j, derive_seed(tseed, Role::Init as u64));
    cfg.max_iters = max_iters;
    let res = optimize_ume_params(xtr.view(), ytr.view(), ztr.view(), &cfg).map_err(err)?;
    let kernel = res.kernel();
    let test_result = rel_ume_test(
        &kernel,
        &kernel,
        &res.locations,
        &res.locations,
        pick(&x, &test).view(),
        pick(&y, &test).view(),
        pick(&z, &test).view(),
        0.05,
    )
    .map_err(err)?;

    let ctx = CriterionContext::ume(kernel, xtr.view(), ytr.view(), ztr.view()).map_err(err)?;
    let lo = z.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
    let hi = z.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
    let (xs, ys) = (linspace(lo[0], hi[0], grid), linspace(lo[1], hi[1], grid));
    let mut values = Vec::with_capacity(grid * grid);
    for &gy in &ys {
        for &gx in &xs {
            let loc = TestLocations::single(ndarray::aview1(&[gx, gy])).map_err(err)?;
            values.push(ctx.statistic(&loc).map_err(err)?.power_criterion(DEFAULT_GAMMA));
        }
    }
    json(&BlobsRun {
        x: points(&x, 500),
        y: points(&y, 500),
        z: points(&z, 500),
        initial: points(&res.initial_locations, usize::MAX),
        optimized: points(&res.locations.view().to_owned(), usize::MAX),
        sigma2: res.sigma2,
        trajectory: res.trajectory,
        landscape: Landscape { xs, ys, values },
        test: test_result,
    })
}

/// Rejection rates of the chosen methods over repeated trials.
#[wasm_bindgen]
pub fn test_run(problem: &str, methods: &str, j: usize, n: usize, trials: usize, alpha: f64, seed: u64) -> DemoResult {
    let kind: ProblemKind = problem.parse().map_err(err)?;
    if matches!(kind, ProblemKind::External | ProblemKind::Rbm) {
        return Err(format!("problem '{problem}' is not available in the demo"));
    }
    let mut config = ProblemConfig::new(kind, n);
    if kind == ProblemKind::MeanShift {
        config.d = Some(10);
    }
    let specs = methods
        .split(',')
        .map(|m| m.trim().parse::<Method>().map(|m| MethodSpec::new(m, if m.uses_locations() { j } else { 1 })))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let opts = TrialOptions {
        alpha,
        trials,
        seed,
        ..TrialOptions::default()
    };
    let report = run_trials(&Problem::new(config).map_err(err)?, &specs, &opts).map_err(err)?;
    json(&report.summaries)
}

