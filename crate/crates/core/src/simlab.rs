//! Simulation designs with known modal functions and the Monte-Carlo
//! experiments built on them: RMSE of the mode estimate, coverage of
//! confidence intervals, and split-conformal prediction bands. Also the
//! linear modal regression (EM) baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chernoff::ChernoffTable;
use crate::dataset::{dot, Dataset, DesignPoint, INTERCEPT_NAME};
use crate::error::{check_positive, check_prob, Error, Result};
use crate::inference::{
    analytic_ci_on_process, subsample_ci, subsample_distribution, AnalyticOptions, SubsampleBandwidth,
    SubsampleConfig, DEFAULT_SUBSAMPLES,
};
use crate::mode::{estimate_mode_on_process, ModeConfig};
use crate::qr::{solve_path, QuantileProcess};
use crate::seeding::{child_seed, stream, Domain};

/// Fraction of failed replicates tolerated by the experiments.
pub const MAX_REP_FAILURE_RATE: f64 = 0.1;
pub const DEFAULT_REPS: usize = 100;
pub const DEFAULT_EVAL_POINTS: usize = 1000;

/// Error distribution for intercept-only designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CustomDensity {
    Beta { a: f64, b: f64 },
    Gamma { shape: f64, scale: f64 },
    Normal { mean: f64, sd: f64 },
}

impl CustomDensity {
    /// Mode of the density (the truth for intercept-only designs).
    pub fn mode(&self) -> f64 {
        match *self {
            Self::Beta { a, b } => (a - 1.0) / (a + b - 2.0),
            Self::Gamma { shape, scale } => (shape - 1.0) * scale,
            Self::Normal { mean, .. } => mean,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Beta { a, b } => {
                if !(a > 1.0 && b > 1.0) {
                    return Err(Error::Domain {
                        name: "beta",
                        value: a.min(b),
                        expected: "both shape parameters must exceed 1 for an interior mode",
                    });
                }
            }
            Self::Gamma { shape, scale } => {
                if !(shape > 1.0) {
                    return Err(Error::Domain {
                        name: "shape",
                        value: shape,
                        expected: "must exceed 1 for a positive mode",
                    });
                }
                check_positive("scale", scale)?;
            }
            Self::Normal { mean, sd } => {
                if !mean.is_finite() {
                    return Err(Error::Domain {
                        name: "mean",
                        value: mean,
                        expected: "must be finite",
                    });
                }
                check_positive("sd", sd)?;
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Beta { a, b } => Beta::new(a, b).expect("validated").sample(rng),
            Self::Gamma { shape, scale } => Gamma::new(shape, scale).expect("validated").sample(rng),
            Self::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
        }
    }
}

/// Data generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// `Y = 1 + X2 - 3 X3 + X4 + X2 nu`, `X2, X3 ~ U(0,1)`, `X4 ~ N(0,1)`,
    /// `nu ~ Gamma(shape 3, scale 0.5)`.
    Case1,
    /// `Y = U^3/3 - X2 (U - 1)^2`, `X2, U ~ U(0,1)`.
    Case2,
    InterceptOnly { density: CustomDensity },
}

impl DgpKind {
    /// Number of design columns, intercept included.
    pub fn dim(&self) -> usize {
        match self {
            Self::Case1 => 4,
            Self::Case2 => 2,
            Self::InterceptOnly { .. } => 1,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![INTERCEPT_NAME.to_string()];
        match self {
            Self::Case1 => names.extend(["x2", "x3", "x4"].map(String::from)),
            Self::Case2 => names.push("x2".into()),
            Self::InterceptOnly { .. } => {}
        }
        names
    }

    /// True conditional mode at design point `x` (intercept first).
    pub fn truth(&self, x: &[f64]) -> f64 {
        match self {
            // The mode of Gamma(3, 0.5) is 1.
            Self::Case1 => 1.0 + 2.0 * x[1] - 3.0 * x[2] + x[3],
            Self::Case2 => {
                let t = x[1];
                -2.0 * t.powi(3) / 3.0 + 2.0 * t * t - t
            }
            Self::InterceptOnly { density } => density.mode(),
        }
    }

    /// True conditional quantile `Q_x(tau)` when available in closed form.
    pub fn quantile(&self, x: &[f64], tau: f64) -> Option<f64> {
        match self {
            Self::Case2 => Some(tau.powi(3) / 3.0 - x[1] * (tau - 1.0).powi(2)),
            _ => None,
        }
    }

    fn draw_design(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Self::Case1 => vec![1.0, rng.random(), rng.random(), rng.sample(StandardNormal)],
            Self::Case2 => vec![1.0, rng.random()],
            Self::InterceptOnly { .. } => vec![1.0],
        }
    }

    fn draw_response(&self, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::Case1 => {
                let nu = Gamma::new(3.0, 0.5).expect("valid gamma").sample(rng);
                1.0 + x[1] - 3.0 * x[2] + x[3] + x[1] * nu
            }
            Self::Case2 => {
                let u: f64 = rng.random();
                u.powi(3) / 3.0 - x[1] * (u - 1.0).powi(2)
            }
            Self::InterceptOnly { density } => density.sample(rng),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::InterceptOnly { density } => density.validate(),
            _ => Ok(()),
        }
    }

    /// Fresh design points drawn from the covariate distribution.
    pub fn draw_points(&self, count: usize, seed: u64) -> Vec<DesignPoint> {
        let mut rng = stream(seed, Domain::Dgp, 1);
        (0..count)
            .map(|_| DesignPoint::new(self.draw_design(&mut rng)).expect("finite design"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub kind: DgpKind,
    pub n: usize,
    pub seed: u64,
}

pub const MIN_DGP_N: usize = 10;

/// Draws `spec.n` observations.
pub fn sample_dgp(spec: &DgpSpec) -> Result<Dataset> {
    spec.kind.validate()?;
    if spec.n < MIN_DGP_N {
        return Err(Error::Domain {
            name: "n",
            value: spec.n as f64,
            expected: "must be at least 10",
        });
    }
    let mut rng = stream(spec.seed, Domain::Dgp, 0);
    let d = spec.kind.dim();
    let mut y = Vec::with_capacity(spec.n);
    let mut x = Vec::with_capacity(spec.n * d);
    for _ in 0..spec.n {
        let row = spec.kind.draw_design(&mut rng);
        y.push(spec.kind.draw_response(&row, &mut rng));
        x.extend(row);
    }
    Dataset::from_flat(y, x, spec.kind.column_names())
}

/// Least-squares coefficients.
pub fn least_squares(data: &Dataset) -> Result<Vec<f64>> {
    weighted_least_squares(data, None)
}

fn weighted_least_squares(data: &Dataset, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let d = data.d();
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    for (i, (row, &y)) in data.rows().zip(data.y()).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let x = DVector::from_column_slice(row);
        xtx.syger(w, &x, &x, 1.0);
        xty.axpy(w * y, &x, 1.0);
    }
    xtx.fill_upper_triangle_with_lower_triangle();
    let rank = xtx.clone().svd(false, false).rank(1e-12 * xtx.norm().max(f64::MIN_POSITIVE));
    let solution = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or(Error::RankDeficient { rank, d })?;
    Ok(solution.iter().cloned().collect())
}

fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)` of the least-squares residuals.
pub fn lmr_default_bandwidth(data: &Dataset) -> Result<f64> {
    let beta = least_squares(data)?;
    let mut r: Vec<f64> = data.rows().zip(data.y()).map(|(x, &y)| y - dot(x, &beta)).collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    r.sort_unstable_by(f64::total_cmp);
    let iqr = quantile_type7(&r, 0.75) - quantile_type7(&r, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    check_positive("h_lmr", h)?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmrFit {
    pub gamma: Vec<f64>,
    pub bandwidth: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sum_i phi_h(y_i - x_i'gamma)` at the start and after every iteration.
    pub objective: Vec<f64>,
}

fn lmr_objective(data: &Dataset, gamma: &[f64], h: f64) -> f64 {
    let c = (2.0 * std::f64::consts::PI).sqrt().recip() / h;
    data.rows()
        .zip(data.y())
        .map(|(x, &y)| {
            let u = (y - dot(x, gamma)) / h;
            c * (-0.5 * u * u).exp()
        })
        .sum()
}

/// Linear modal regression `argmax_gamma sum phi_h(y_i - x_i'gamma)` by the
/// EM-type iteration: Gaussian-kernel weights, then weighted least squares.
/// Converges to a local maximum near `init`.
pub fn lmr_em_fit(data: &Dataset, h: f64, init: &[f64], max_iter: usize, tol: f64) -> Result<LmrFit> {
    check_positive("h_lmr", h)?;
    if init.len() != data.d() {
        return Err(Error::Dimension(format!(
            "initial value has {} entries, design has {} columns",
            init.len(),
            data.d()
        )));
    }
    let mut gamma = init.to_vec();
    let mut objective = vec![lmr_objective(data, &gamma, h)];
    let mut converged = false;
    let mut iterations = 0;
    let mut weights = vec![0.0; data.n()];
    while iterations < max_iter {
        iterations += 1;
        let mut max_log = f64::NEG_INFINITY;
        for (w, (x, &y)) in weights.iter_mut().zip(data.rows().zip(data.y())) {
            let u = (y - dot(x, &gamma)) / h;
            *w = -0.5 * u * u;
            max_log = max_log.max(*w);
        }
        // Normalising by the largest weight keeps them representable.
        let mut total = 0.0;
        for w in &mut weights {
            *w = (*w - max_log).exp();
            total += *w;
        }
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NonFiniteWeights(iterations));
        }
        let next = weighted_least_squares(data, Some(&weights))?;
        let step = next
            .iter()
            .zip(&gamma)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        gamma = next;
        objective.push(lmr_objective(data, &gamma, h));
        if step < tol {
            converged = true;
            break;
        }
    }
    Ok(LmrFit {
        gamma,
        bandwidth: h,
        iterations,
        converged,
        objective,
    })
}

/// LMR with the default bandwidth started from least squares.
pub fn lmr_default_fit(data: &Dataset) -> Result<LmrFit> {
    let h = lmr_default_bandwidth(data)?;
    let init = least_squares(data)?;
    lmr_em_fit(data, h, &init, 500, 1e-10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Proposed,
    Lmr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseConfig {
    pub kind: DgpKind,
    pub n: usize,
    pub method: Estimator,
    pub reps: usize,
    pub eval_points: usize,
    /// Points at which per-replicate absolute errors are also reported.
    pub fixed_points: Vec<DesignPoint>,
    pub seed: u64,
    pub mode: ModeConfig,
}

impl RmseConfig {
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            method: Estimator::Proposed,
            reps: DEFAULT_REPS,
            eval_points: DEFAULT_EVAL_POINTS,
            fixed_points: Vec::new(),
            seed,
            mode: ModeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let sd = if sorted.len() > 1 {
            (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            median: quantile_type7(&sorted, 0.5),
            sd,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

/// One row of an interval table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    /// `None` for prediction bands, which are not tied to one design point.
    pub x: Option<DesignPoint>,
    pub n: usize,
    pub ell: Option<usize>,
    pub level: f64,
    pub avg_length: f64,
    pub median_length: f64,
    pub coverage: f64,
    pub count: usize,
}

/// One interval from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub rep: usize,
    pub point: usize,
    pub level: f64,
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

/// Fixed-point absolute errors across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointErrors {
    pub x: DesignPoint,
    pub truth: f64,
    pub abs_errors: Vec<f64>,
    pub median_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub reps: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rmse: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse_summary: Option<Summary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub point_errors: Vec<PointErrors>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub intervals: Vec<IntervalRow>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub records: Vec<IntervalRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub conformal: Vec<ConformalRecord>,
}

/// Band length and test-set coverage of one conformal split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalRecord {
    pub length: f64,
    pub coverage: f64,
}

impl ExperimentReport {
    fn new(experiment: &str, config: &impl Serialize, reps: usize, failures: usize) -> Result<Self> {
        Ok(Self {
            experiment: experiment.into(),
            config: serde_json::to_value(config).map_err(|e| Error::Dimension(e.to_string()))?,
            reps,
            failures,
            rmse: Vec::new(),
            rmse_summary: None,
            point_errors: Vec::new(),
            intervals: Vec::new(),
            records: Vec::new(),
            conformal: Vec::new(),
        })
    }

    /// Interval table as CSV: design point, n, subsample size, level, average
    /// length, median length, coverage. RMSE-only reports list the summary.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.intervals.is_empty() {
            w.write_record(["statistic", "mean", "median", "sd", "min", "max"])?;
            if let Some(s) = &self.rmse_summary {
                w.write_record([
                    "rmse".to_string(),
                    s.mean.to_string(),
                    s.median.to_string(),
                    s.sd.to_string(),
                    s.min.to_string(),
                    s.max.to_string(),
                ])?;
            }
        } else {
            w.write_record([
                "design_point",
                "n",
                "subsample_size",
                "level",
                "avg_length",
                "median_length",
                "coverage",
            ])?;
            for row in &self.intervals {
                let x = row.x.as_ref().map_or_else(String::new, |x| {
                    x.as_slice().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
                });
                w.write_record([
                    x,
                    row.n.to_string(),
                    row.ell.map(|l| l.to_string()).unwrap_or_default(),
                    row.level.to_string(),
                    row.avg_length.to_string(),
                    row.median_length.to_string(),
                    row.coverage.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: "<report>".into(),
            source,
        })
    }
}

fn check_failures(failures: usize, total: usize) -> Result<()> {
    if failures as f64 > MAX_REP_FAILURE_RATE * total as f64 {
        return Err(Error::TooManyFailures { failed: failures, total });
    }
    Ok(())
}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::Domain {
            name: "reps",
            value: 0.0,
            expected: "must be at least 1",
        });
    }
    Ok(())
}

/// Data seed of replicate `rep`.
fn rep_seed(seed: u64, rep: usize) -> u64 {
    child_seed(seed, Domain::Replicate, rep as u64)
}

enum Fitted {
    Proposed(QuantileProcess, usize),
    Lmr(Vec<f64>),
}

impl Fitted {
    fn predict(&self, x: &DesignPoint, config: &ModeConfig) -> Result<f64> {
        match self {
            Self::Proposed(p, n) => Ok(estimate_mode_on_process(p, *n, x, config)?.0.mode),
            Self::Lmr(gamma) => Ok(x.dot(gamma)),
        }
    }
}

fn fit(data: &Dataset, method: Estimator, config: &ModeConfig) -> Result<Fitted> {
    Ok(match method {
        Estimator::Proposed => Fitted::Proposed(solve_path(data, &config.grid)?, data.n()),
        Estimator::Lmr => Fitted::Lmr(lmr_default_fit(data)?.gamma),
    })
}

/// `sqrt(mean_k (m_hat(X*_k) - m(X*_k))^2)` over fresh design points, per replicate.
pub fn rmse_experiment(config: &RmseConfig) -> Result<ExperimentReport> {
    check_reps(config.reps)?;
    if config.eval_points == 0 {
        return Err(Error::Domain {
            name: "eval_points",
            value: 0.0,
            expected: "must be at least 1",
        });
    }
    for x in &config.fixed_points {
        x.check_dim(config.kind.dim())?;
    }
    let outcomes: Vec<Option<(f64, Vec<f64>)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(config.seed, rep);
            let data = sample_dgp(&DgpSpec {
                kind: config.kind,
                n: config.n,
                seed,
            })
            .ok()?;
            let fitted = fit(&data, config.method, &config.mode).ok()?;
            let mut sq = 0.0;
            for x in config.kind.draw_points(config.eval_points, seed) {
                let e = fitted.predict(&x, &config.mode).ok()? - config.kind.truth(x.as_slice());
                sq += e * e;
            }
            let fixed = config
                .fixed_points
                .iter()
                .map(|x| Some((fitted.predict(x, &config.mode).ok()? - config.kind.truth(x.as_slice())).abs()))
                .collect::<Option<Vec<_>>>()?;
            Some(((sq / config.eval_points as f64).sqrt(), fixed))
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    check_failures(failures, config.reps)?;
    let ok: Vec<(f64, Vec<f64>)> = outcomes.into_iter().flatten().collect();
    let mut report = ExperimentReport::new("rmse", config, config.reps, failures)?;
    report.rmse = ok.iter().map(|(r, _)| *r).collect();
    report.rmse_summary = Summary::of(&report.rmse);
    report.point_errors = config
        .fixed_points
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let abs_errors: Vec<f64> = ok.iter().map(|(_, e)| e[j]).collect();
            PointErrors {
                x: x.clone(),
                truth: config.kind.truth(x.as_slice()),
                median_abs_error: Summary::of(&abs_errors).map_or(f64::NAN, |s| s.median),
                abs_errors,
            }
        })
        .collect();
    Ok(report)
}

/// Interval construction used in a coverage experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CiMethod {
    Analytic(AnalyticOptions),
    Subsample {
        ell_frac: f64,
        #[serde(rename = "B")]
        b: usize,
        bandwidth: SubsampleBandwidth,
    },
}

impl CiMethod {
    pub fn subsample(ell_frac: f64) -> Self {
        Self::Subsample {
            ell_frac,
            b: DEFAULT_SUBSAMPLES,
            bandwidth: SubsampleBandwidth::Reselect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub kind: DgpKind,
    pub n: usize,
    pub points: Vec<DesignPoint>,
    pub method: CiMethod,
    /// Nominal coverage levels, e.g. 0.95 and 0.99.
    pub levels: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub mode: ModeConfig,
}

/// `(point index, level, center, lower, upper)` for one interval.
type RepInterval = (usize, f64, f64, f64, f64);

fn intervals_for_rep(
    data: &Dataset,
    config: &CoverageConfig,
    table: Option<&ChernoffTable>,
    seed: u64,
) -> Result<Vec<RepInterval>> {
    let mut out = Vec::new();
    match &config.method {
        CiMethod::Analytic(opts) => {
            let table = table.ok_or_else(|| Error::Cache("analytic intervals need a Chernoff table".into()))?;
            let process = solve_path(data, &config.mode.grid)?;
            for (j, x) in config.points.iter().enumerate() {
                for &level in &config.levels {
                    let opts = AnalyticOptions {
                        alpha: 1.0 - level,
                        ..opts.clone()
                    };
                    let ci = analytic_ci_on_process(data, &process, x, &config.mode, &opts, table)?;
                    out.push((j, level, ci.center, ci.lower, ci.upper));
                }
            }
        }
        CiMethod::Subsample { ell_frac, b, bandwidth } => {
            let sub = SubsampleConfig {
                b: *b,
                bandwidth: *bandwidth,
                ..SubsampleConfig::with_fraction(data.n(), *ell_frac, seed)
            };
            for (j, x) in config.points.iter().enumerate() {
                let dist = subsample_distribution(data, x, &config.mode, &sub)?;
                for &level in &config.levels {
                    let ci = subsample_ci(&dist, x, 1.0 - level)?;
                    out.push((j, level, ci.center, ci.lower, ci.upper));
                }
            }
        }
    }
    Ok(out)
}

/// Coverage and length of intervals for the true mode over replicates.
/// `table` is required for analytic intervals.
pub fn coverage_experiment(config: &CoverageConfig, table: Option<&ChernoffTable>) -> Result<ExperimentReport> {
    check_reps(config.reps)?;
    if config.points.is_empty() || config.levels.is_empty() {
        return Err(Error::Dimension("need at least one design point and level".into()));
    }
    for &level in &config.levels {
        check_prob("level", level)?;
    }
    for x in &config.points {
        x.check_dim(config.kind.dim())?;
    }
    if matches!(config.method, CiMethod::Analytic(_)) && table.is_none() {
        return Err(Error::Cache("analytic intervals need a Chernoff table".into()));
    }
    let outcomes: Vec<Option<Vec<RepInterval>>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(config.seed, rep);
            let data = sample_dgp(&DgpSpec {
                kind: config.kind,
                n: config.n,
                seed,
            })
            .ok()?;
            intervals_for_rep(&data, config, table, seed).ok()
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    check_failures(failures, config.reps)?;

    let truths: Vec<f64> = config.points.iter().map(|x| config.kind.truth(x.as_slice())).collect();
    let records: Vec<IntervalRecord> = outcomes
        .into_iter()
        .enumerate()
        .filter_map(|(rep, o)| o.map(|v| (rep, v)))
        .flat_map(|(rep, v)| {
            let truths = &truths;
            v.into_iter().map(move |(point, level, center, lower, upper)| IntervalRecord {
                rep,
                point,
                level,
                center,
                lower,
                upper,
                covered: lower <= truths[point] && truths[point] <= upper,
            })
        })
        .collect();
    let ell = match config.method {
        CiMethod::Subsample { ell_frac, .. } => Some((ell_frac * config.n as f64).round() as usize),
        CiMethod::Analytic(_) => None,
    };
    let mut report = ExperimentReport::new("coverage", config, config.reps, failures)?;
    for (j, x) in config.points.iter().enumerate() {
        for &level in &config.levels {
            let matching: Vec<&IntervalRecord> = records.iter().filter(|r| r.point == j && r.level == level).collect();
            let lengths: Vec<f64> = matching.iter().map(|r| r.upper - r.lower).collect();
            let summary = Summary::of(&lengths);
            report.intervals.push(IntervalRow {
                x: Some(x.clone()),
                n: config.n,
                ell,
                level,
                avg_length: summary.as_ref().map_or(f64::NAN, |s| s.mean),
                median_length: summary.as_ref().map_or(f64::NAN, |s| s.median),
                coverage: matching.iter().filter(|r| r.covered).count() as f64 / matching.len().max(1) as f64,
                count: matching.len(),
            });
        }
    }
    report.records = records;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    /// `|I1 u I2| / n`.
    pub train_fraction: f64,
    /// `|I1| / |I1 u I2|`.
    pub fit_fraction: f64,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub mode: ModeConfig,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.95,
            fit_fraction: 0.8,
            alpha: 0.05,
            reps: 250,
            seed: 0,
            mode: ModeConfig::default(),
        }
    }
}

/// Split sizes `(|I1|, |I2|, |I3|)`.
pub fn split_sizes(n: usize, d: usize, config: &ConformalConfig) -> Result<(usize, usize, usize)> {
    check_prob("train_fraction", config.train_fraction)?;
    check_prob("fit_fraction", config.fit_fraction)?;
    let n12 = (config.train_fraction * n as f64).round() as usize;
    let n1 = (config.fit_fraction * n12 as f64).round() as usize;
    let (n2, n3) = (n12.saturating_sub(n1), n.saturating_sub(n12));
    if n1 < d + 1 || n2 < d + 1 || n3 < d + 1 {
        return Err(Error::InfeasibleSplit(format!(
            "n = {n} gives split sizes {n1}, {n2}, {n3}; each needs at least {}",
            d + 1
        )));
    }
    Ok((n1, n2, n3))
}

/// Residual quantiles `(xi_lo, xi_hi)`: the `floor((m + 1) alpha / 2)`-th and
/// `ceil((m + 1)(1 - alpha / 2))`-th order statistics of `m` calibration
/// residuals, clamped to the sample range.
pub fn conformal_quantiles(residuals: &[f64], alpha: f64) -> (f64, f64) {
    let mut r = residuals.to_vec();
    r.sort_unstable_by(f64::total_cmp);
    let m = r.len();
    let lo_rank = (((m + 1) as f64 * alpha / 2.0) + 1e-9).floor().max(1.0) as usize;
    let hi_rank = (((m + 1) as f64 * (1.0 - alpha / 2.0)) - 1e-9).ceil() as usize;
    (r[lo_rank.min(m) - 1], r[hi_rank.clamp(1, m) - 1])
}

/// Split conformal prediction bands around the mode estimate, repeated over
/// random splits. Reports band length and empirical coverage on `I3`.
pub fn conformal_experiment(data: &Dataset, config: &ConformalConfig) -> Result<ExperimentReport> {
    check_reps(config.reps)?;
    check_prob("alpha", config.alpha)?;
    let (n1, n2, _) = split_sizes(data.n(), data.d(), config)?;
    let outcomes: Vec<Option<(f64, f64)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(config.seed, Domain::Split, rep as u64);
            let mut perm: Vec<usize> = (0..data.n()).collect();
            perm.shuffle(&mut rng);
            let fit_set = data.subset(&perm[..n1]).ok()?;
            let process = solve_path(&fit_set, &config.mode.grid).ok()?;
            let predict = |i: usize| -> Option<f64> {
                let x = DesignPoint::new(data.row(i).to_vec()).ok()?;
                Some(estimate_mode_on_process(&process, n1, &x, &config.mode).ok()?.0.mode)
            };
            let residuals = perm[n1..n1 + n2]
                .iter()
                .map(|&i| Some(data.y()[i] - predict(i)?))
                .collect::<Option<Vec<f64>>>()?;
            let (lo, hi) = conformal_quantiles(&residuals, config.alpha);
            let test = &perm[n1 + n2..];
            let mut covered = 0usize;
            for &i in test {
                let m = predict(i)?;
                let y = data.y()[i];
                if m + lo <= y && y <= m + hi {
                    covered += 1;
                }
            }
            Some((hi - lo, covered as f64 / test.len() as f64))
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    check_failures(failures, config.reps)?;
    let ok: Vec<(f64, f64)> = outcomes.into_iter().flatten().collect();
    let lengths: Vec<f64> = ok.iter().map(|o| o.0).collect();
    let summary = Summary::of(&lengths).expect("at least one successful replicate");
    let mut report = ExperimentReport::new("conformal", config, config.reps, failures)?;
    report.intervals.push(IntervalRow {
        x: None,
        n: data.n(),
        ell: None,
        level: 1.0 - config.alpha,
        avg_length: summary.mean,
        median_length: summary.median,
        coverage: ok.iter().map(|o| o.1).sum::<f64>() / ok.len() as f64,
        count: ok.len(),
    });
    report.conformal = ok
        .iter()
        .map(|&(length, coverage)| ConformalRecord { length, coverage })
        .collect();
    Ok(report)
}
