use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use relgof::harness::{
    criterion_curve, greedy_report, linspace, pool_score_report, run_config, runtime_bench, save_results, worker_pool,
    write_figure_csv, CriterionKind, ExternalPaths, FigureRow, LocationOptions, Method, MethodSpec, Problem,
    ProblemConfig, ProblemKind, RunConfig, TrialOptions,
};
use relgof::Direction;

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "relgof", version, about = "Relative goodness-of-fit tests: trials, benchmarks and location reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rejection rates over repeated trials.
    Trials(TrialsArgs),
    /// Wall time per trial over a grid of sample sizes.
    Bench(BenchArgs),
    /// Power criterion of a single location over a 1-D grid (mixture1d).
    CriterionCurve(CurveArgs),
    /// Power criterion of every location in a candidate pool.
    PoolScore(LocationArgs),
    /// Greedy selection of locations from a candidate pool.
    Greedy(GreedyArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// mean_shift, blobs, rbm, mixture1d or external.
    #[arg(long, value_parser = parse_problem)]
    problem: Option<ProblemKind>,
    /// Sample size per distribution.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Hidden units (rbm).
    #[arg(long)]
    dh: Option<usize>,
    /// Weight of the left mode (mixture1d).
    #[arg(long)]
    left_weight: Option<f64>,
    /// Gibbs burn-in sweeps (rbm).
    #[arg(long)]
    burn_in: Option<usize>,
    /// Seed of the fixed problem parameters.
    #[arg(long)]
    seed_problem: Option<u64>,
    /// Matrix file of the sample from P (external).
    #[arg(long)]
    x: Option<PathBuf>,
    /// Matrix file of the sample from Q (external).
    #[arg(long)]
    y: Option<PathBuf>,
    /// Matrix file of the sample from R (external).
    #[arg(long)]
    z: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct MethodArgs {
    /// Comma-separated methods: rel_ume_random, rel_ume_opt, rel_fssd_opt, rel_mmd_median.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    method: Vec<Method>,
    /// Comma-separated numbers of test locations.
    #[arg(long = "J", value_delimiter = ',')]
    j: Vec<usize>,
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// JSON result file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Figure CSV; defaults to the result file with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TrialsArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// RBM perturbation; several comma-separated values run a sweep.
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of rows used to tune locations and bandwidth.
    #[arg(long)]
    train_frac: Option<f64>,
    /// Gradient ascent iterations.
    #[arg(long)]
    max_iters: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// Comma-separated sample sizes.
    #[arg(long = "n-grid", value_delimiter = ',', default_value = "1000,2000,4000,8000")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    train_frac: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    #[arg(long, default_value_t = 0.5)]
    left_weight: f64,
    #[arg(long, default_value_t = 20000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    hi: f64,
    /// Squared kernel bandwidth.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[serde(skip)]
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Clone)]
struct LocationArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Criterion: ume or fssd.
    #[arg(long, default_value = "ume", value_parser = parse_criterion)]
    criterion: CriterionKind,
    #[arg(long, default_value_t = 200)]
    pool_size: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    train_frac: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct GreedyArgs {
    #[command(flatten)]
    location: LocationArgs,
    #[arg(long = "J", default_value_t = 5)]
    j: usize,
    /// maximize or minimize.
    #[arg(long, default_value = "maximize", value_parser = parse_direction)]
    direction: Direction,
}

fn parse_problem(s: &str) -> Result<ProblemKind, String> {
    s.parse().map_err(|e: relgof::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: relgof::Error| e.to_string())
}

fn parse_criterion(s: &str) -> Result<CriterionKind, String> {
    match s {
        "ume" | "rel_ume" => Ok(CriterionKind::Ume),
        "fssd" | "rel_fssd" => Ok(CriterionKind::Fssd),
        _ => Err(format!("unknown criterion '{s}' (expected ume or fssd)")),
    }
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "max" | "maximize" => Ok(Direction::Maximize),
        "min" | "minimize" => Ok(Direction::Minimize),
        _ => Err(format!("unknown direction '{s}' (expected maximize or minimize)")),
    }
}

impl ProblemArgs {
    fn apply(&self, base: Option<ProblemConfig>, default_kind: ProblemKind, default_n: usize) -> ProblemConfig {
        let mut cfg = match (base, self.problem) {
            (Some(b), None) => b,
            (Some(b), Some(k)) if b.problem == k => b,
            (_, kind) => ProblemConfig::new(kind.unwrap_or(default_kind), default_n),
        };
        if let Some(n) = self.n {
            cfg.n = n;
        }
        cfg.d = self.d.or(cfg.d);
        cfg.d_h = self.dh.or(cfg.d_h);
        cfg.left_weight = self.left_weight.or(cfg.left_weight);
        cfg.burn_in = self.burn_in.or(cfg.burn_in);
        cfg.seed_problem = self.seed_problem.unwrap_or(cfg.seed_problem);
        if let (Some(x), Some(y), Some(z)) = (&self.x, &self.y, &self.z) {
            cfg.paths = Some(ExternalPaths {
                x: x.clone(),
                y: y.clone(),
                z: z.clone(),
            });
        }
        cfg
    }

    fn check_paths(&self) -> CliResult<()> {
        let given = [&self.x, &self.y, &self.z].iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err("--x, --y and --z must be given together".into());
        }
        Ok(())
    }
}

impl MethodArgs {
    fn specs(&self, problem: ProblemKind) -> Vec<MethodSpec> {
        let methods = if self.method.is_empty() {
            let mut m = vec![Method::RelUmeOpt, Method::RelFssdOpt, Method::RelMmdMedian];
            if problem == ProblemKind::External {
                m.retain(|&m| m != Method::RelFssdOpt);
            }
            m
        } else {
            self.method.clone()
        };
        let js = if self.j.is_empty() { vec![5] } else { self.j.clone() };
        let mut specs: Vec<MethodSpec> = Vec::new();
        for m in methods {
            let candidates: Vec<MethodSpec> = if m.uses_locations() {
                js.iter().map(|&j| MethodSpec::new(m, j)).collect()
            } else {
                vec![MethodSpec::new(m, 1)]
            };
            for s in candidates {
                if !specs.contains(&s) {
                    specs.push(s);
                }
            }
        }
        specs
    }
}

impl OutputArgs {
    fn write<T: Serialize>(&self, results: &T, rows: &[FigureRow]) -> CliResult<()> {
        match &self.out {
            Some(path) => {
                save_results(path, results)?;
                eprintln!("wrote {}", path.display());
            }
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                serde_json::to_writer_pretty(&mut lock, results)?;
                writeln!(lock)?;
            }
        }
        let csv = self.csv.clone().or_else(|| self.out.as_ref().map(|p| p.with_extension("csv")));
        if let Some(path) = csv {
            write_figure_csv(BufWriter::new(File::create(&path)?), rows)?;
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn trials(args: TrialsArgs) -> CliResult<()> {
    args.problem.check_paths()?;
    let base: Option<RunConfig> = args.config.as_deref().map(read_json).transpose()?;
    let mut problem = args
        .problem
        .apply(base.as_ref().map(|b| b.problem.clone()), ProblemKind::MeanShift, 300);
    let mut epsilons = base.as_ref().map(|b| b.epsilons.clone()).unwrap_or_default();
    match args.epsilon.len() {
        0 => {}
        1 => {
            problem.epsilon = Some(args.epsilon[0]);
            epsilons.clear();
        }
        _ => epsilons = args.epsilon.clone(),
    }
    if (problem.epsilon.is_some() || !epsilons.is_empty()) && problem.problem != ProblemKind::Rbm {
        return Err("--epsilon applies to the rbm problem only".into());
    }
    let methods = match &base {
        Some(b) if args.methods.method.is_empty() && args.methods.j.is_empty() => b.methods.clone(),
        _ => args.methods.specs(problem.problem),
    };
    let mut options = base.as_ref().map(|b| b.options).unwrap_or_default();
    options.alpha = args.alpha.unwrap_or(options.alpha);
    options.trials = args.trials.unwrap_or(options.trials);
    options.seed = args.seed.unwrap_or(options.seed);
    options.train_frac = args.train_frac.unwrap_or(options.train_frac);
    options.max_iters = args.max_iters.unwrap_or(options.max_iters);
    let config = RunConfig {
        problem,
        methods,
        options,
        epsilons,
    };
    let results = worker_pool()?.install(|| run_config(&config))?;
    for r in &results.results {
        for s in &r.report.summaries {
            let eps = r.epsilon.map(|e| format!(" epsilon={e}")).unwrap_or_default();
            eprintln!(
                "{}{eps}: rejection rate {:.3} [{:.3}, {:.3}] over {} trials ({} failed)",
                s.method, s.rejection_rate, s.ci_low, s.ci_high, s.trials, s.failures
            );
        }
    }
    args.output.write(&results, &results.figure_rows())
}

#[derive(Serialize)]
struct BenchOutput {
    config: BenchConfig,
    #[serde(flatten)]
    report: relgof::harness::BenchReport,
}

#[derive(Serialize)]
struct BenchConfig {
    problem: ProblemConfig,
    methods: Vec<MethodSpec>,
    n_grid: Vec<usize>,
    reps: usize,
    options: TrialOptions,
}

fn bench(args: BenchArgs) -> CliResult<()> {
    args.problem.check_paths()?;
    let problem = args.problem.apply(None, ProblemKind::Blobs, args.n_grid[0]);
    let methods = if args.methods.method.is_empty() {
        let j = args.methods.j.first().copied().unwrap_or(5);
        vec![MethodSpec::new(Method::RelUmeOpt, j), MethodSpec::new(Method::RelMmdMedian, 1)]
    } else {
        args.methods.specs(problem.problem)
    };
    let options = TrialOptions {
        seed: args.seed,
        train_frac: args.train_frac,
        ..TrialOptions::default()
    };
    let report = worker_pool()?.install(|| runtime_bench(&problem, &methods, &args.n_grid, args.reps, &options))?;
    for s in &report.slopes {
        eprintln!("{}: log-log slope {:.3}", s.method, s.slope);
    }
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    let rows: Vec<FigureRow> = report
        .rows
        .iter()
        .map(|r| FigureRow {
            x: r.n as f64,
            method: r.method.clone(),
            value: r.median_seconds,
            ci_low: Some(r.min_seconds),
            ci_high: Some(r.max_seconds),
        })
        .collect();
    let output = BenchOutput {
        config: BenchConfig {
            problem,
            methods,
            n_grid: args.n_grid.clone(),
            reps: args.reps,
            options,
        },
        report,
    };
    args.output.write(&output, &rows)
}

#[derive(Serialize)]
struct CurveOutput<'a> {
    config: &'a CurveArgs,
    #[serde(flatten)]
    curve: relgof::harness::CriterionCurve,
}

fn curve(args: CurveArgs) -> CliResult<()> {
    if args.points < 2 || !(args.lo < args.hi) {
        return Err("the grid needs at least 2 points and lo < hi".into());
    }
    let grid = linspace(args.lo, args.hi, args.points);
    let curve = worker_pool()?.install(|| criterion_curve(args.left_weight, args.n, &grid, args.sigma2, args.seed))?;
    let rows = curve.figure_rows();
    args.output.write(
        &CurveOutput {
            config: &args,
            curve,
        },
        &rows,
    )
}

#[derive(Serialize)]
struct LocationOutput<T: Serialize> {
    problem: ProblemConfig,
    options: LocationOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    j: Option<usize>,
    report: T,
}

fn location_setup(args: &LocationArgs) -> CliResult<(Problem, LocationOptions)> {
    args.problem.check_paths()?;
    let config = args.problem.apply(None, ProblemKind::Mixture1d, 2000);
    let problem = Problem::new(config)?;
    let opts = LocationOptions {
        kind: args.criterion,
        pool_size: args.pool_size,
        alpha: args.alpha,
        seed: args.seed,
        train_frac: args.train_frac,
    };
    Ok((problem, opts))
}

fn criterion_name(kind: CriterionKind) -> &'static str {
    match kind {
        CriterionKind::Ume => "rel_ume",
        CriterionKind::Fssd => "rel_fssd",
    }
}

fn pool_score(args: LocationArgs) -> CliResult<()> {
    let (problem, opts) = location_setup(&args)?;
    let report = worker_pool()?.install(|| pool_score_report(&problem, &opts))?;
    eprintln!(
        "best candidate {} scored {:.4}; held-out test {}",
        report.order[0],
        report.scores.scores[report.order[0]],
        if report.test_rejected { "rejected" } else { "did not reject" }
    );
    let rows: Vec<FigureRow> = report
        .scores
        .scores
        .iter()
        .enumerate()
        .map(|(i, &value)| FigureRow {
            x: i as f64,
            method: criterion_name(opts.kind).to_string(),
            value,
            ci_low: None,
            ci_high: None,
        })
        .collect();
    let output = LocationOutput {
        problem: problem.config().clone(),
        options: opts,
        j: None,
        report,
    };
    args.output.write(&output, &rows)
}

fn greedy(args: GreedyArgs) -> CliResult<()> {
    let (problem, opts) = location_setup(&args.location)?;
    let report = worker_pool()?.install(|| greedy_report(&problem, args.j, args.direction, &opts))?;
    eprintln!(
        "selected {} of {} locations{}; held-out test {}",
        report.indices.len(),
        args.j,
        if report.exhausted { " (no further candidate improved the criterion)" } else { "" },
        if report.test_rejected { "rejected" } else { "did not reject" }
    );
    let rows: Vec<FigureRow> = report
        .trace
        .iter()
        .enumerate()
        .map(|(i, &value)| FigureRow {
            x: (i + 1) as f64,
            method: criterion_name(opts.kind).to_string(),
            value,
            ci_low: None,
            ci_high: None,
        })
        .collect();
    let output = LocationOutput {
        problem: problem.config().clone(),
        options: opts,
        j: Some(args.j),
        report,
    };
    args.location.output.write(&output, &rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Trials(a) => trials(a),
        Command::Bench(a) => bench(a),
        Command::CriterionCurve(a) => curve(a),
        Command::PoolScore(a) => pool_score(a),
        Command::Greedy(a) => greedy(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
