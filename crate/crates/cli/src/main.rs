//! `modalreg`: conditional mode estimation from the command line.
//!
//! Results are written as JSON (to `--output` or stdout); experiment commands
//! can also write CSV tables. A one-line summary goes to stdout when
//! `--output` is given and to stderr otherwise. Errors exit with status 1 and
//! a JSON error object on stderr; usage errors exit with status 2.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use modalreg::bandwidth::{BandwidthPlan, KmRule};
use modalreg::chernoff::{gumbel_convergence_check, ChernoffParams, ChernoffTable};
use modalreg::inference::{
    analytic_ci_on_process, simultaneous_ci, subsample_ci, subsample_distribution, AnalyticOptions,
    IntervalResult, SubsampleBandwidth, SubsampleConfig, VMethod,
};
use modalreg::mode::{estimate_mode_on_process, BandwidthChoice, SparsityObjective};
use modalreg::qr::uniform_grid;
use modalreg::simlab::{
    conformal_experiment, coverage_experiment, rmse_experiment, sample_dgp, CiMethod, ConformalConfig,
    CoverageConfig, CustomDensity, DgpKind, DgpSpec, Estimator, ExperimentReport, RmseConfig,
};
use modalreg::{load_csv, solve_path, Dataset, DesignPoint, Error, ModeConfig, ModeEstimate};

#[derive(Parser, Debug)]
#[command(name = "modalreg", version, about = "Conditional mode estimation by inverting linear quantile regression")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the conditional mode at one or more design points.
    Fit(FitArgs),
    /// Confidence intervals for the conditional mode.
    Ci(CiArgs),
    /// Monte-Carlo experiments on the simulation designs.
    Simulate(SimulateArgs),
    /// Quantiles of Chernoff's distribution, or the Gumbel convergence check.
    Chernoff(ChernoffArgs),
    /// Split conformal prediction bands around the mode estimate.
    Conformal(ConformalArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Response column; every other column is a regressor.
    #[arg(long)]
    response: String,
    /// Do not prepend an intercept column.
    #[arg(long)]
    no_intercept: bool,
}

#[derive(Args, Debug, Clone)]
struct EstimatorArgs {
    /// Trimming: the sparsity is minimised over [epsilon, 1 - epsilon].
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Number of points in the uniform tau grid.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 0.05)]
    tau_min: f64,
    #[arg(long, default_value_t = 0.95)]
    tau_max: f64,
    /// `auto` for the pilot/final rule, or a fixed value.
    #[arg(long, default_value = "auto", value_parser = parse_bandwidth)]
    bandwidth: BandwidthChoice,
    #[arg(long, value_enum, default_value_t = Objective::Centered)]
    objective: Objective,
    /// Form of the Koenker-Machado bandwidth rule.
    #[arg(long, value_enum, default_value_t = Rule::Linear)]
    km_rule: Rule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EstimatorArgs {
    fn mode_config(&self) -> ModeConfig {
        ModeConfig {
            epsilon: self.epsilon,
            grid: uniform_grid(self.tau_min, self.tau_max, self.grid),
            bandwidth: self.bandwidth,
            objective: match self.objective {
                Objective::Centered => SparsityObjective::Centered,
                Objective::FourthOrder => SparsityObjective::FourthOrder,
            },
            rule: match self.km_rule {
                Rule::Linear => KmRule::Linear,
                Rule::HallSheather => KmRule::HallSheather,
            },
            ..ModeConfig::default()
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Rule {
    Linear,
    HallSheather,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Objective {
    Centered,
    FourthOrder,
}

#[derive(Args, Debug, Clone)]
struct PointArgs {
    /// Design point as comma-separated values, intercept included; repeatable.
    #[arg(long = "x", value_parser = parse_point)]
    points: Vec<DesignPoint>,
    /// CSV file of design points, one per row, no header.
    #[arg(long)]
    points_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// JSON output path (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    points: PointArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Method {
    Analytic,
    Subsample,
    Simultaneous,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum VChoice {
    Kernel,
    Delta3,
    FivePoint,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SubsampleH {
    Reselect,
    FullSample,
}

#[derive(Args, Debug, Clone)]
struct ChernoffTableArgs {
    /// Monte-Carlo draws for the Chernoff table.
    #[arg(long, default_value_t = 200_000)]
    chernoff_draws: usize,
    /// Half-width T of the simulation grid.
    #[arg(long = "chernoff-T", default_value_t = 2.5)]
    chernoff_t: f64,
    /// Step of the simulation grid.
    #[arg(long, default_value_t = 1e-3)]
    chernoff_delta: f64,
    #[arg(long, default_value_t = 0)]
    chernoff_seed: u64,
}

impl ChernoffTableArgs {
    fn params(&self) -> ChernoffParams {
        ChernoffParams {
            n_draws: self.chernoff_draws,
            half_width: self.chernoff_t,
            step: self.chernoff_delta,
            seed: self.chernoff_seed,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct IntervalArgs {
    #[arg(long, value_enum, default_value_t = Method::Analytic)]
    method: Method,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Curvature estimator for analytic intervals.
    #[arg(long, value_enum, default_value_t = VChoice::Kernel)]
    v_method: VChoice,
    /// Powell bandwidth (default: the sparsity bandwidth).
    #[arg(long)]
    h_j: Option<f64>,
    /// Subsample size as a fraction of n.
    #[arg(long, default_value_t = 0.2)]
    ell_frac: f64,
    /// Number of subsamples.
    #[arg(long = "B", default_value_t = 250)]
    b: usize,
    #[arg(long, value_enum, default_value_t = SubsampleH::Reselect)]
    subsample_bandwidth: SubsampleH,
    /// One bandwidth for all points (simultaneous intervals).
    #[arg(long)]
    shared_h: Option<f64>,
    #[command(flatten)]
    table: ChernoffTableArgs,
}

impl IntervalArgs {
    fn analytic(&self) -> AnalyticOptions {
        AnalyticOptions {
            alpha: self.alpha,
            v_method: match self.v_method {
                VChoice::Kernel => VMethod::Kernel,
                VChoice::Delta3 => VMethod::Delta3,
                VChoice::FivePoint => VMethod::FivePoint,
            },
            h_j: self.h_j,
            ..AnalyticOptions::default()
        }
    }

    fn subsample_bandwidth(&self) -> SubsampleBandwidth {
        match self.subsample_bandwidth {
            SubsampleH::Reselect => SubsampleBandwidth::Reselect,
            SubsampleH::FullSample => SubsampleBandwidth::FullSample,
        }
    }

    fn subsample(&self, n: usize, seed: u64) -> SubsampleConfig {
        SubsampleConfig {
            b: self.b,
            alpha: self.alpha,
            bandwidth: self.subsample_bandwidth(),
            shared_h: self.shared_h,
            ..SubsampleConfig::with_fraction(n, self.ell_frac, seed)
        }
    }
}

#[derive(Args, Debug)]
struct CiArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    points: PointArgs,
    #[command(flatten)]
    interval: IntervalArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Experiment {
    Rmse,
    Coverage,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EstimatorChoice {
    Proposed,
    Lmr,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    /// `case1`, `case2`, or an intercept-only design such as `beta:2,5`,
    /// `gamma:3,0.5`, `normal:0,1`.
    #[arg(long, value_parser = parse_dgp, default_value = "case2")]
    dgp: DgpKind,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Use the full-scale replicate count of 1000.
    #[arg(long)]
    full_scale: bool,
    /// Fresh design points per replicate for the RMSE.
    #[arg(long, default_value_t = 1000)]
    eval_points: usize,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Proposed)]
    estimator: EstimatorChoice,
    /// Nominal coverage levels for coverage experiments.
    #[arg(long, value_delimiter = ',', default_value = "0.95,0.99")]
    levels: Vec<f64>,
    #[command(flatten)]
    estimator_args: EstimatorArgs,
    #[command(flatten)]
    points: PointArgs,
    #[command(flatten)]
    interval: IntervalArgs,
    /// CSV table path.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ChernoffArgs {
    /// Probability level of the quantile.
    #[arg(long, default_value_t = 0.975)]
    p: f64,
    #[arg(long, default_value_t = 200_000)]
    n_draws: usize,
    #[arg(long = "T", default_value_t = 2.5)]
    t: f64,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the Gumbel convergence check instead (needs --lambda and --kappa).
    #[arg(long)]
    gumbel: bool,
    /// Tail constant lambda of Chernoff's density.
    #[arg(long)]
    lambda: Option<f64>,
    /// Tail constant kappa of Chernoff's density.
    #[arg(long)]
    kappa: Option<f64>,
    /// Number of draws per maximum in the Gumbel check.
    #[arg(long = "L", default_value_t = 1000)]
    l: usize,
    /// Replicates of the maximum in the Gumbel check.
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ConformalArgs {
    /// CSV input; omit to use a simulated design (see --dgp).
    #[arg(long, requires = "response")]
    input: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, value_parser = parse_dgp, default_value = "case2")]
    dgp: DgpKind,
    /// Sample size of the simulated design.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 250)]
    reps: usize,
    /// Fraction of the data used for fitting and calibration.
    #[arg(long, default_value_t = 0.95)]
    train_frac: f64,
    /// Fraction of the training part used for fitting.
    #[arg(long, default_value_t = 0.8)]
    fit_frac: f64,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_bandwidth(s: &str) -> Result<BandwidthChoice, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(BandwidthChoice::Auto { pilot: None });
    }
    match s.parse::<f64>() {
        Ok(h) if h > 0.0 && h.is_finite() => Ok(BandwidthChoice::Fixed(h)),
        _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
    }
}

fn parse_values(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect()
}

fn parse_point(s: &str) -> Result<DesignPoint, String> {
    DesignPoint::new(parse_values(s)?).map_err(|e| e.to_string())
}

fn parse_dgp(s: &str) -> Result<DgpKind, String> {
    let (name, params) = s.split_once(':').unwrap_or((s, ""));
    let two = || -> Result<(f64, f64), String> {
        match parse_values(params)?[..] {
            [a, b] => Ok((a, b)),
            _ => Err(format!("`{s}` needs two parameters")),
        }
    };
    Ok(match name {
        "case1" => DgpKind::Case1,
        "case2" => DgpKind::Case2,
        "beta" => {
            let (a, b) = two()?;
            DgpKind::InterceptOnly {
                density: CustomDensity::Beta { a, b },
            }
        }
        "gamma" => {
            let (shape, scale) = two()?;
            DgpKind::InterceptOnly {
                density: CustomDensity::Gamma { shape, scale },
            }
        }
        "normal" => {
            let (mean, sd) = two()?;
            DgpKind::InterceptOnly {
                density: CustomDensity::Normal { mean, sd },
            }
        }
        _ => return Err(format!("unknown design `{s}`")),
    })
}

/// A failure attributed to a pipeline module.
#[derive(Debug, Serialize)]
struct Failure {
    module: &'static str,
    parameter: Option<&'static str>,
    message: String,
}

trait Stage<T> {
    fn stage(self, module: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for modalreg::Result<T> {
    fn stage(self, module: &'static str) -> Result<T, Failure> {
        self.map_err(|e: Error| Failure {
            module,
            parameter: e.parameter(),
            message: e.to_string(),
        })
    }
}

fn failure(module: &'static str, parameter: Option<&'static str>, message: impl Into<String>) -> Failure {
    Failure {
        module,
        parameter,
        message: message.into(),
    }
}

fn load(data: &DataArgs) -> Result<Dataset, Failure> {
    load_csv(&data.input, &data.response, !data.no_intercept).stage("dataset")
}

fn design_points(args: &PointArgs, data: &Dataset) -> Result<Vec<DesignPoint>, Failure> {
    let mut points = args.points.clone();
    if let Some(path) = &args.points_file {
        let text = fs::read_to_string(path)
            .map_err(|e| failure("dataset", Some("points_file"), format!("{}: {e}", path.display())))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            points.push(parse_point(line).map_err(|e| failure("dataset", Some("points_file"), e))?);
        }
    }
    if points.is_empty() {
        return Err(failure("cli", Some("x"), "no design point given; use --x or --points-file"));
    }
    for x in &points {
        x.check_dim(data.d())
            .map_err(|e| failure("dataset", Some("x"), e.to_string()))?;
    }
    Ok(points)
}

fn emit(output: &OutputArgs, value: &impl Serialize, summary: &str) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(value).map_err(|e| failure("cli", None, e.to_string()))? + "\n";
    match &output.output {
        Some(path) => {
            fs::write(path, json).map_err(|e| failure("cli", Some("output"), format!("{}: {e}", path.display())))?;
            println!("{summary}");
        }
        None => {
            std::io::stdout()
                .write_all(json.as_bytes())
                .map_err(|e| failure("cli", Some("output"), e.to_string()))?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn write_table(path: &Option<PathBuf>, report: &ExperimentReport) -> Result<(), Failure> {
    if let Some(path) = path {
        let file =
            fs::File::create(path).map_err(|e| failure("cli", Some("csv"), format!("{}: {e}", path.display())))?;
        report.write_csv(file).stage("simlab")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitOutput {
    n: usize,
    estimates: Vec<FitRecord>,
}

#[derive(Serialize)]
struct FitRecord {
    #[serde(flatten)]
    estimate: ModeEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth_plan: Option<BandwidthPlan>,
}

fn run_fit(args: &FitArgs) -> Result<(), Failure> {
    let data = load(&args.data)?;
    let points = design_points(&args.points, &data)?;
    let config = args.estimator.mode_config();
    let process = solve_path(&data, &config.grid).stage("qr_solver")?;
    let estimates = points
        .iter()
        .map(|x| {
            let (estimate, bandwidth_plan) =
                estimate_mode_on_process(&process, data.n(), x, &config).stage("mode_estimator")?;
            Ok(FitRecord {
                estimate,
                bandwidth_plan,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let summary = estimates
        .iter()
        .map(|e| format!("m_hat = {:.6} (tau_hat = {:.4})", e.estimate.mode, e.estimate.tau_hat))
        .collect::<Vec<_>>()
        .join("; ");
    emit(
        &args.output,
        &FitOutput {
            n: data.n(),
            estimates,
        },
        &format!("fit n = {}: {summary}", data.n()),
    )
}

#[derive(Serialize)]
struct CiOutput {
    n: usize,
    intervals: Vec<IntervalResult>,
}

fn run_ci(args: &CiArgs) -> Result<(), Failure> {
    let data = load(&args.data)?;
    let points = design_points(&args.points, &data)?;
    let config = args.estimator.mode_config();
    let iv = &args.interval;
    let intervals = match iv.method {
        Method::Analytic => {
            let table = ChernoffTable::cached(iv.table.params()).stage("chernoff")?;
            let process = solve_path(&data, &config.grid).stage("qr_solver")?;
            points
                .iter()
                .map(|x| analytic_ci_on_process(&data, &process, x, &config, &iv.analytic(), &table).stage("inference"))
                .collect::<Result<Vec<_>, _>>()?
        }
        Method::Subsample => {
            let sub = iv.subsample(data.n(), args.estimator.seed);
            points
                .iter()
                .map(|x| {
                    let dist = subsample_distribution(&data, x, &config, &sub).stage("inference")?;
                    subsample_ci(&dist, x, iv.alpha).stage("inference")
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        Method::Simultaneous => {
            let sub = iv.subsample(data.n(), args.estimator.seed);
            simultaneous_ci(&data, &points, &config, &sub).stage("inference")?
        }
    };
    let summary = intervals
        .iter()
        .map(|c| format!("[{:.6}, {:.6}]", c.lower, c.upper))
        .collect::<Vec<_>>()
        .join(" ");
    emit(
        &args.output,
        &CiOutput {
            n: data.n(),
            intervals,
        },
        &format!("{:?} {:.0}% intervals: {summary}", iv.method, 100.0 * (1.0 - iv.alpha)).to_lowercase(),
    )
}

fn run_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let reps = if args.full_scale { 1000 } else { args.reps };
    let config = args.estimator_args.mode_config();
    let seed = args.estimator_args.seed;
    let points = args.points.points.clone();
    let report = match args.experiment {
        Experiment::Rmse => {
            let config = RmseConfig {
                kind: args.dgp,
                n: args.n,
                method: match args.estimator {
                    EstimatorChoice::Proposed => Estimator::Proposed,
                    EstimatorChoice::Lmr => Estimator::Lmr,
                },
                reps,
                eval_points: args.eval_points,
                fixed_points: points,
                seed,
                mode: config,
            };
            rmse_experiment(&config).stage("simlab")?
        }
        Experiment::Coverage => {
            let points = if points.is_empty() {
                default_points(&args.dgp)?
            } else {
                points
            };
            let (method, table) = match args.interval.method {
                Method::Analytic => (
                    CiMethod::Analytic(args.interval.analytic()),
                    Some(ChernoffTable::cached(args.interval.table.params()).stage("chernoff")?),
                ),
                Method::Subsample => (
                    CiMethod::Subsample {
                        ell_frac: args.interval.ell_frac,
                        b: args.interval.b,
                        bandwidth: args.interval.subsample_bandwidth(),
                    },
                    None,
                ),
                Method::Simultaneous => {
                    return Err(failure(
                        "simlab",
                        Some("method"),
                        "coverage experiments support analytic and subsample intervals",
                    ))
                }
            };
            let config = CoverageConfig {
                kind: args.dgp,
                n: args.n,
                points,
                method,
                levels: args.levels.clone(),
                reps,
                seed,
                mode: config,
            };
            coverage_experiment(&config, table.as_ref()).stage("simlab")?
        }
    };
    write_table(&args.csv, &report)?;
    let summary = match &report.rmse_summary {
        Some(s) => format!("rmse n = {}: median {:.5}, mean {:.5}", args.n, s.median, s.mean),
        None => report
            .intervals
            .iter()
            .map(|r| format!("level {} coverage {:.3} median length {:.4}", r.level, r.coverage, r.median_length))
            .collect::<Vec<_>>()
            .join("; "),
    };
    emit(&args.output, &report, &summary)
}

/// The three design points `x2 in {0.25, 0.5, 0.75}` for case 2.
fn default_points(kind: &DgpKind) -> Result<Vec<DesignPoint>, Failure> {
    match kind {
        DgpKind::Case2 => Ok([0.25, 0.5, 0.75]
            .iter()
            .map(|&x2| DesignPoint::new(vec![1.0, x2]).expect("finite"))
            .collect()),
        DgpKind::InterceptOnly { .. } => Ok(vec![DesignPoint::new(vec![1.0]).expect("finite")]),
        DgpKind::Case1 => Err(failure("cli", Some("x"), "give design points with --x for case1")),
    }
}

#[derive(Serialize)]
struct QuantileOutput {
    p: f64,
    quantile: f64,
    params: ChernoffParams,
}

fn run_chernoff(args: &ChernoffArgs) -> Result<(), Failure> {
    let params = ChernoffParams {
        n_draws: args.n_draws,
        half_width: args.t,
        step: args.delta,
        seed: args.seed,
    };
    if args.gumbel {
        let (Some(lambda), Some(kappa)) = (args.lambda, args.kappa) else {
            return Err(failure("chernoff", Some("lambda"), "the Gumbel check needs --lambda and --kappa"));
        };
        let check = gumbel_convergence_check(args.reps, args.l, lambda, kappa, &params).stage("chernoff")?;
        let summary = format!("gumbel L = {}: KS distance {:.4}", args.l, check.ks_distance);
        return emit(&args.output, &check, &summary);
    }
    let table = ChernoffTable::cached(params).stage("chernoff")?;
    let quantile = table.quantile(args.p).stage("chernoff")?;
    emit(
        &args.output,
        &QuantileOutput {
            p: args.p,
            quantile,
            params,
        },
        &format!("chernoff q({}) = {quantile:.6}", args.p),
    )
}

fn run_conformal(args: &ConformalArgs) -> Result<(), Failure> {
    let data = match (&args.input, &args.response) {
        (Some(input), Some(response)) => load(&DataArgs {
            input: input.clone(),
            response: response.clone(),
            no_intercept: args.no_intercept,
        })?,
        _ => sample_dgp(&DgpSpec {
            kind: args.dgp,
            n: args.n,
            seed: args.estimator.seed,
        })
        .stage("simlab")?,
    };
    let config = ConformalConfig {
        train_fraction: args.train_frac,
        fit_fraction: args.fit_frac,
        alpha: args.alpha,
        reps: args.reps,
        seed: args.estimator.seed,
        mode: args.estimator.mode_config(),
    };
    let report = conformal_experiment(&data, &config).stage("simlab")?;
    write_table(&args.csv, &report)?;
    let row = &report.intervals[0];
    let summary = format!(
        "conformal n = {}: coverage {:.4}, average length {:.4}, median length {:.4}",
        data.n(),
        row.coverage,
        row.avg_length,
        row.median_length
    );
    emit(&args.output, &report, &summary)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(failure("cli", Some("threads"), "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| failure("cli", Some("threads"), e.to_string()))?;
    }
    match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Ci(a) => run_ci(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Chernoff(a) => run_chernoff(a),
        Command::Conformal(a) => run_conformal(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = serde_json::json!({ "error": f });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}
