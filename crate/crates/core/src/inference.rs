//! Confidence intervals for the conditional mode.
//!
//! Analytic intervals plug nuisance estimates into the Chernoff limit:
//! `m_hat +- s(tau_hat) (sigma / v)^(2/3) (n h^2)^(-1/3) q_{1-alpha/2}`,
//! where `sigma^2 = x' J^-1 Sigma J^-1 x / 2` and `v` estimates half the third
//! derivative of the quantile curve at `tau_hat`. Subsampling intervals avoid
//! `sigma` and `v` altogether by re-estimating on random subsets and
//! rescaling by the known rate `(l h_l^2)^(1/3)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chernoff::ChernoffTable;
use crate::dataset::{dot, Dataset, DesignPoint};
use crate::error::{check_positive, check_prob, Error, Result};
use crate::mode::{estimate_mode_on_process, snap, BandwidthChoice, ModeConfig, ModeEstimate};
use crate::qr::{solve_path, QuantileProcess};
use crate::seeding::{stream, Domain};

/// Fraction of subsets allowed to fail before subsampling gives up.
pub const MAX_FAILURE_RATE: f64 = 0.2;
pub const DEFAULT_SUBSAMPLES: usize = 250;

/// `n^-1 sum x_i x_i'`.
pub fn sigma_hat_matrix(data: &Dataset) -> DMatrix<f64> {
    let d = data.d();
    let mut m = DMatrix::zeros(d, d);
    for row in data.rows() {
        let x = DVector::from_column_slice(row);
        m.syger(1.0, &x, &x, 1.0);
    }
    m.fill_upper_triangle_with_lower_triangle();
    m / data.n() as f64
}

/// Powell's kernel estimate of `J(tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowellJ {
    pub matrix: DMatrix<f64>,
    pub bandwidth: f64,
    /// Observations with `|r_i| <= h_J`.
    pub active: usize,
    pub warning: Option<String>,
}

/// `(2 n h_J)^-1 sum 1{|y_i - x_i'beta| <= h_J} x_i x_i'`.
pub fn powell_j(data: &Dataset, beta: &[f64], h_j: f64) -> Result<PowellJ> {
    check_positive("h_J", h_j)?;
    if beta.len() != data.d() {
        return Err(Error::Dimension(format!(
            "beta has {} entries, design has {} columns",
            beta.len(),
            data.d()
        )));
    }
    let d = data.d();
    let mut m = DMatrix::zeros(d, d);
    let mut active = 0;
    for (row, &y) in data.rows().zip(data.y()) {
        if (y - dot(row, beta)).abs() <= h_j {
            let x = DVector::from_column_slice(row);
            m.syger(1.0, &x, &x, 1.0);
            active += 1;
        }
    }
    m.fill_upper_triangle_with_lower_triangle();
    let warning = (active == 0).then(|| format!("no residual within h_J = {h_j}; J is singular"));
    Ok(PowellJ {
        matrix: m / (2.0 * data.n() as f64 * h_j),
        bandwidth: h_j,
        active,
        warning,
    })
}

fn singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// Ratio of largest to smallest singular value.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (min, max) = singular_values(m);
    max / min
}

/// `x' J^-1 Sigma J^-1 x / 2`.
pub fn sigma2_hat(x: &DesignPoint, j_hat: &DMatrix<f64>, sigma_hat: &DMatrix<f64>) -> Result<f64> {
    let d = j_hat.nrows();
    x.check_dim(d)?;
    if j_hat.ncols() != d || sigma_hat.shape() != (d, d) {
        return Err(Error::Dimension("J and Sigma must be square of the design dimension".into()));
    }
    let (min, max) = singular_values(j_hat);
    if !(min > max * 1e-12) {
        return Err(Error::Singular {
            smallest_singular_value: min,
        });
    }
    let xv = DVector::from_column_slice(x.as_slice());
    let jt_inv_x = j_hat
        .transpose()
        .lu()
        .solve(&xv)
        .ok_or(Error::Singular {
            smallest_singular_value: min,
        })?;
    Ok(0.5 * sigma_hat.quadratic_form(&jt_inv_x))
}

trait QuadraticForm {
    fn quadratic_form(&self, u: &DVector<f64>) -> f64;
}

impl QuadraticForm for DMatrix<f64> {
    fn quadratic_form(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(self * u))
    }
}

/// Estimator of `v_x = Q'''_x(tau_x) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VMethod {
    /// `Delta_h^3 Q(tau_hat) / 2`, stencil `tau_hat +- h, +- 3h`.
    Delta3,
    /// Five-point rule, stencil `tau_hat +- h, +- 2h`.
    FivePoint,
    /// `-f''(m_hat | x) s(tau_hat)^4 / 2` with a kernel density derivative.
    #[default]
    Kernel,
}

/// Third divided difference `f[t0, t1, t2, t3]`.
fn third_divided_difference(t: [f64; 4], q: [f64; 4]) -> f64 {
    let d1: Vec<f64> = (0..3).map(|i| (q[i + 1] - q[i]) / (t[i + 1] - t[i])).collect();
    let d2: Vec<f64> = (0..2).map(|i| (d1[i + 1] - d1[i]) / (t[i + 2] - t[i])).collect();
    (d2[1] - d2[0]) / (t[3] - t[0])
}

/// Half the third derivative from values on `tau_hat + k h` for the given
/// offsets, after snapping each point to the grid.
fn half_third_derivative(taus: &[f64], q: &[f64], tau_hat: f64, h: f64, outer: f64) -> Result<f64> {
    check_positive("h", h)?;
    let (lo, hi) = (taus[0], taus[taus.len() - 1]);
    let slack = 1e-9;
    let targets = [tau_hat - outer * h, tau_hat - h, tau_hat + h, tau_hat + outer * h];
    if targets[0] < lo - slack || targets[3] > hi + slack {
        return Err(Error::StencilRange { tau: tau_hat });
    }
    let idx = targets.map(|t| snap(taus, t));
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::StencilRange { tau: tau_hat });
    }
    // 3! f[...] approximates Q''', halved.
    Ok(3.0 * third_divided_difference(idx.map(|i| taus[i]), idx.map(|i| q[i])))
}

/// `Delta_h^3 Q_x(tau_hat) / 2` with `Delta_h g(t) = (g(t+h) - g(t-h)) / 2h`.
pub fn v_hat_delta3(process: &QuantileProcess, x: &DesignPoint, tau_hat: f64, h: f64) -> Result<f64> {
    let q = process.curve(x)?;
    half_third_derivative(process.taus(), &q, tau_hat, h, 3.0)
}

/// Five-point rule `(Q(t+2h) - Q(t-2h) - 2{Q(t+h) - Q(t-h)}) / 2h^3`, halved
/// so that it estimates the same quantity as [`v_hat_delta3`].
pub fn v_hat_fivepoint(process: &QuantileProcess, x: &DesignPoint, tau_hat: f64, h: f64) -> Result<f64> {
    let q = process.curve(x)?;
    half_third_derivative(process.taus(), &q, tau_hat, h, 2.0)
}

/// Kernel bandwidths and the discrete/continuous split of the design columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Response bandwidth; default `n^(-1/9) sd(Y)`.
    pub b_y: Option<f64>,
    /// One bandwidth per continuous column; default `n^(-1/5) sd(X_j)`.
    pub b_x: Option<Vec<f64>>,
    /// Columns matched exactly instead of smoothed. Default: columns with at
    /// most [`DISCRETE_LEVELS`] distinct values. Constant columns are ignored.
    pub discrete: Option<Vec<bool>>,
}

pub const DISCRETE_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCurvature {
    pub v: f64,
    pub f2: f64,
    pub b_y: f64,
    pub b_x: Vec<f64>,
    /// Sum of the design-space kernel weights.
    pub weight: f64,
    pub degenerate: bool,
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

enum ColumnKind {
    Ignored,
    Discrete,
    Continuous,
}

fn column_kinds(data: &Dataset, discrete: Option<&[bool]>) -> Result<Vec<ColumnKind>> {
    if let Some(flags) = discrete {
        if flags.len() != data.d() {
            return Err(Error::Dimension(format!(
                "discrete flags have {} entries, design has {} columns",
                flags.len(),
                data.d()
            )));
        }
    }
    Ok((0..data.d())
        .map(|j| {
            let mut levels: Vec<f64> = data.column(j).collect();
            levels.sort_unstable_by(f64::total_cmp);
            levels.dedup();
            if levels.len() == 1 {
                ColumnKind::Ignored
            } else if discrete.map_or(levels.len() <= DISCRETE_LEVELS, |f| f[j]) {
                ColumnKind::Discrete
            } else {
                ColumnKind::Continuous
            }
        })
        .collect())
}

/// `v_check = -f''(m_hat | x) s^4 / 2`, with
/// `f''(y | x) = sum K1''((Y_i - y)/b_Y) K2_i / (b_Y^3 sum K2_i)`,
/// `K1` the standard normal density and `K2` a product Epanechnikov kernel
/// times exact matching on discrete columns.
pub fn v_hat_kernel(
    data: &Dataset,
    x: &DesignPoint,
    mode: f64,
    sparsity: f64,
    opts: &KernelOptions,
) -> Result<KernelCurvature> {
    x.check_dim(data.d())?;
    let n = data.n() as f64;
    let kinds = column_kinds(data, opts.discrete.as_deref())?;
    let continuous: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, ColumnKind::Continuous))
        .map(|(j, _)| j)
        .collect();
    let discrete: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, ColumnKind::Discrete))
        .map(|(j, _)| j)
        .collect();

    let b_y = match opts.b_y {
        Some(b) => b,
        None => n.powf(-1.0 / 9.0) * sd(data.y()),
    };
    check_positive("b_Y", b_y)?;
    let b_x = match &opts.b_x {
        Some(b) if b.len() != continuous.len() => {
            return Err(Error::Dimension(format!(
                "{} design bandwidths given for {} continuous columns",
                b.len(),
                continuous.len()
            )))
        }
        Some(b) => b.clone(),
        None => continuous
            .iter()
            .map(|&j| n.powf(-0.2) * sd(&data.column(j).collect::<Vec<_>>()))
            .collect(),
    };
    for &b in &b_x {
        check_positive("b_X", b)?;
    }

    let xs = x.as_slice();
    let mut numerator = 0.0;
    let mut weight = 0.0;
    for (row, &y) in data.rows().zip(data.y()) {
        if discrete.iter().any(|&j| row[j] != xs[j]) {
            continue;
        }
        let mut w = 1.0;
        for (&j, &b) in continuous.iter().zip(&b_x) {
            let u = (row[j] - xs[j]) / b;
            w *= (1.0 - u * u).max(0.0);
            if w == 0.0 {
                break;
            }
        }
        if w == 0.0 {
            continue;
        }
        let u = (y - mode) / b_y;
        numerator += w * (u * u - 1.0) * (-0.5 * u * u).exp();
        weight += w;
    }
    if weight == 0.0 {
        return Err(Error::EmptyNeighbourhood);
    }
    let phi0 = (2.0 * std::f64::consts::PI).sqrt().recip();
    let f2 = phi0 * numerator / (weight * b_y.powi(3));
    let v = -f2 * sparsity.powi(4) / 2.0;
    Ok(KernelCurvature {
        v,
        f2,
        b_y,
        b_x,
        weight,
        degenerate: !(v.abs() > 1e-12),
    })
}

/// Settings for analytic intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticOptions {
    pub alpha: f64,
    pub v_method: VMethod,
    /// Powell bandwidth on the response scale; defaults to the sparsity
    /// bandwidth mapped through the sparsity, `s_hat(tau_hat) * h`.
    pub h_j: Option<f64>,
    pub kernel: KernelOptions,
}

impl Default for AnalyticOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            v_method: VMethod::Kernel,
            h_j: None,
            kernel: KernelOptions::default(),
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Nuisance estimates entering the analytic interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub sigma2: f64,
    pub v: f64,
    pub v_method: VMethod,
    pub sparsity: f64,
    pub sigma_hat: Vec<Vec<f64>>,
    pub j_hat: Vec<Vec<f64>>,
    pub h_j: f64,
    pub j_active: usize,
    pub j_condition: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Nuisance estimates at a mode estimate computed on `process` (fitted to `data`).
pub fn nuisance_estimates(
    data: &Dataset,
    process: &QuantileProcess,
    estimate: &ModeEstimate,
    opts: &AnalyticOptions,
) -> Result<NuisanceEstimates> {
    let x = &estimate.design_point;
    let mut warnings = Vec::new();
    let h_j = match opts.h_j {
        Some(h) => h,
        None if estimate.sparsity_at_min > 0.0 => estimate.sparsity_at_min * estimate.bandwidth,
        None => {
            warnings.push("sparsity at the minimum is not positive; h_J falls back to h".to_string());
            estimate.bandwidth
        }
    };
    let beta = process.beta(process.nearest_index(estimate.tau_hat));
    let j = powell_j(data, beta, h_j)?;
    let sigma = sigma_hat_matrix(data);
    warnings.extend(j.warning.iter().cloned());
    let sigma2 = sigma2_hat(x, &j.matrix, &sigma)?;
    let v = match opts.v_method {
        VMethod::Delta3 => v_hat_delta3(process, x, estimate.tau_hat, estimate.bandwidth)?,
        VMethod::FivePoint => v_hat_fivepoint(process, x, estimate.tau_hat, estimate.bandwidth)?,
        VMethod::Kernel => {
            let k = v_hat_kernel(data, x, estimate.mode, estimate.sparsity_at_min, &opts.kernel)?;
            if k.degenerate {
                warnings.push("kernel curvature estimate is numerically zero".into());
            }
            k.v
        }
    };
    Ok(NuisanceEstimates {
        sigma2,
        v,
        v_method: opts.v_method,
        sparsity: estimate.sparsity_at_min,
        sigma_hat: matrix_rows(&sigma),
        j_condition: condition_number(&j.matrix),
        j_hat: matrix_rows(&j.matrix),
        h_j,
        j_active: j.active,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Analytic,
    Subsample,
    Simultaneous,
}

/// Settings echoed with subsampling intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSummary {
    pub ell: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub failures: usize,
    pub seed: u64,
    pub quantiles: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntervalMetadata {
    Analytic {
        nuisance: NuisanceEstimates,
        chernoff_quantile: f64,
    },
    Subsample(SubsampleSummary),
    Simultaneous {
        ell: usize,
        #[serde(rename = "B")]
        b: usize,
        failures: usize,
        seed: u64,
        nu: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalResult {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: IntervalMethod,
    pub center: f64,
    pub rate_factor: f64,
    pub tau_hat: f64,
    pub bandwidth: f64,
    pub x: DesignPoint,
    pub metadata: IntervalMetadata,
}

impl IntervalResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// `(n h^2)^(-1/3)`.
pub fn rate_factor(n: usize, h: f64) -> f64 {
    (n as f64 * h * h).powf(-1.0 / 3.0)
}

/// Analytic interval from the Chernoff quantile table.
pub fn analytic_ci(
    data: &Dataset,
    x: &DesignPoint,
    config: &ModeConfig,
    opts: &AnalyticOptions,
    table: &ChernoffTable,
) -> Result<IntervalResult> {
    x.check_dim(data.d())?;
    let process = solve_path(data, &config.grid)?;
    analytic_ci_on_process(data, &process, x, config, opts, table)
}

/// [`analytic_ci`] with an already fitted process.
pub fn analytic_ci_on_process(
    data: &Dataset,
    process: &QuantileProcess,
    x: &DesignPoint,
    config: &ModeConfig,
    opts: &AnalyticOptions,
    table: &ChernoffTable,
) -> Result<IntervalResult> {
    check_prob("alpha", opts.alpha)?;
    let (estimate, _) = estimate_mode_on_process(process, data.n(), x, config)?;
    let nuisance = nuisance_estimates(data, process, &estimate, opts)?;
    if !(nuisance.v > 0.0) {
        return Err(Error::NonPositiveCurvature(nuisance.v));
    }
    let q = table.quantile(1.0 - opts.alpha / 2.0)?;
    let rate = rate_factor(data.n(), estimate.bandwidth);
    let half = nuisance.sparsity * (nuisance.sigma2.sqrt() / nuisance.v).powf(2.0 / 3.0) * rate * q;
    Ok(IntervalResult {
        lower: estimate.mode - half,
        upper: estimate.mode + half,
        level: 1.0 - opts.alpha,
        method: IntervalMethod::Analytic,
        center: estimate.mode,
        rate_factor: rate,
        tau_hat: estimate.tau_hat,
        bandwidth: estimate.bandwidth,
        x: x.clone(),
        metadata: IntervalMetadata::Analytic {
            nuisance,
            chernoff_quantile: q,
        },
    })
}

/// Bandwidth used on each subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleBandwidth {
    /// Re-run the selection rule with size `l`, keeping the full-sample pilot.
    #[default]
    Reselect,
    /// Reuse the full-sample bandwidth `h_n`.
    FullSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub ell: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub bandwidth: SubsampleBandwidth,
    /// One bandwidth for every design point (simultaneous intervals only).
    pub shared_h: Option<f64>,
}

impl SubsampleConfig {
    /// `l = round(frac * n)` with the remaining settings at their defaults.
    pub fn with_fraction(n: usize, frac: f64, seed: u64) -> Self {
        Self {
            ell: (frac * n as f64).round() as usize,
            b: DEFAULT_SUBSAMPLES,
            alpha: 0.05,
            seed,
            bandwidth: SubsampleBandwidth::Reselect,
            shared_h: None,
        }
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        check_prob("alpha", self.alpha)?;
        if self.ell < data.d() + 1 || self.ell >= data.n() {
            return Err(Error::Domain {
                name: "ell",
                value: self.ell as f64,
                expected: "must satisfy d + 1 <= ell < n",
            });
        }
        if self.b == 0 {
            return Err(Error::Domain {
                name: "B",
                value: 0.0,
                expected: "must be at least 1",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleDistribution {
    /// `(l h_l^2)^(1/3) (m_l - m_n)` for each successful subset, in subset order.
    pub values: Vec<f64>,
    pub ell: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub failures: usize,
    pub seed: u64,
    pub m_hat: f64,
    pub h_n: f64,
    pub n: usize,
    pub tau_hat: f64,
}

/// Left-continuous inverse `inf{t : F(t) >= p}` of the empirical distribution.
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted_left_quantile(&sorted, p)
}

fn sorted_left_quantile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    // Guard against p*m landing a rounding error above an integer.
    let rank = ((p * m as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(m) - 1]
}

struct FullFit {
    estimates: Vec<ModeEstimate>,
    pilots: Vec<Option<f64>>,
}

fn full_sample_fit(data: &Dataset, points: &[DesignPoint], config: &ModeConfig) -> Result<(QuantileProcess, FullFit)> {
    let process = solve_path(data, &config.grid)?;
    let mut estimates = Vec::with_capacity(points.len());
    let mut pilots = Vec::with_capacity(points.len());
    for x in points {
        x.check_dim(data.d())?;
        let (est, plan) = estimate_mode_on_process(&process, data.n(), x, config)?;
        estimates.push(est);
        pilots.push(plan.map(|p| p.pilot));
    }
    Ok((process, FullFit { estimates, pilots }))
}

/// Mode configuration used on a subsample for one design point.
fn subsample_config(config: &ModeConfig, sub: &SubsampleConfig, est: &ModeEstimate, pilot: Option<f64>) -> ModeConfig {
    let bandwidth = match (sub.shared_h, sub.bandwidth, config.bandwidth) {
        (Some(h), _, _) => BandwidthChoice::Fixed(h),
        (None, SubsampleBandwidth::FullSample, _) => BandwidthChoice::Fixed(est.bandwidth),
        (None, SubsampleBandwidth::Reselect, BandwidthChoice::Fixed(h)) => BandwidthChoice::Fixed(h),
        (None, SubsampleBandwidth::Reselect, BandwidthChoice::Auto { .. }) => BandwidthChoice::Auto { pilot },
    };
    ModeConfig {
        bandwidth,
        ..config.clone()
    }
}

/// Re-estimates on `B` random subsets; each subset's statistics at every
/// point are returned (or `None` when the subset failed).
fn run_subsets(
    data: &Dataset,
    points: &[DesignPoint],
    full: &FullFit,
    config: &ModeConfig,
    sub: &SubsampleConfig,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let configs: Vec<ModeConfig> = full
        .estimates
        .iter()
        .zip(&full.pilots)
        .map(|(est, &pilot)| subsample_config(config, sub, est, pilot))
        .collect();
    let outcomes: Vec<Option<Vec<f64>>> = (0..sub.b as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(sub.seed, Domain::Subsample, i);
            let mut idx = index::sample(&mut rng, data.n(), sub.ell).into_vec();
            idx.sort_unstable();
            let subset = data.subset(&idx).ok()?;
            let process = solve_path(&subset, &config.grid).ok()?;
            points
                .iter()
                .zip(&configs)
                .zip(&full.estimates)
                .map(|((x, cfg), est)| {
                    let (m, _) = estimate_mode_on_process(&process, sub.ell, x, cfg).ok()?;
                    let scale = (sub.ell as f64 * m.bandwidth * m.bandwidth).cbrt();
                    Some(scale * (m.mode - est.mode))
                })
                .collect()
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures as f64 > MAX_FAILURE_RATE * sub.b as f64 {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: sub.b,
        });
    }
    Ok((outcomes.into_iter().flatten().collect(), failures))
}

/// Subsampling distribution of the rescaled mode estimate at `x`.
pub fn subsample_distribution(
    data: &Dataset,
    x: &DesignPoint,
    config: &ModeConfig,
    sub: &SubsampleConfig,
) -> Result<SubsampleDistribution> {
    sub.validate(data)?;
    let points = [x.clone()];
    let (_, full) = full_sample_fit(data, &points, config)?;
    let (values, failures) = run_subsets(data, &points, &full, config, sub)?;
    let est = &full.estimates[0];
    Ok(SubsampleDistribution {
        values: values.into_iter().map(|v| v[0]).collect(),
        ell: sub.ell,
        b: sub.b,
        failures,
        seed: sub.seed,
        m_hat: est.mode,
        h_n: est.bandwidth,
        n: data.n(),
        tau_hat: est.tau_hat,
    })
}

/// `[m - q(1 - alpha/2) / (n h^2)^(1/3), m - q(alpha/2) / (n h^2)^(1/3)]`.
pub fn subsample_ci(dist: &SubsampleDistribution, x: &DesignPoint, alpha: f64) -> Result<IntervalResult> {
    check_prob("alpha", alpha)?;
    if dist.values.is_empty() {
        return Err(Error::Dimension("empty subsampling distribution".into()));
    }
    let mut sorted = dist.values.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let q_lo = sorted_left_quantile(&sorted, alpha / 2.0);
    let q_hi = sorted_left_quantile(&sorted, 1.0 - alpha / 2.0);
    let rate = rate_factor(dist.n, dist.h_n);
    Ok(IntervalResult {
        lower: dist.m_hat - q_hi * rate,
        upper: dist.m_hat - q_lo * rate,
        level: 1.0 - alpha,
        method: IntervalMethod::Subsample,
        center: dist.m_hat,
        rate_factor: rate,
        tau_hat: dist.tau_hat,
        bandwidth: dist.h_n,
        x: x.clone(),
        metadata: IntervalMetadata::Subsample(SubsampleSummary {
            ell: dist.ell,
            b: dist.b,
            failures: dist.failures,
            seed: dist.seed,
            quantiles: [q_lo, q_hi],
        }),
    })
}

/// Simultaneous intervals `m(x^j) +- nu / (n h_j^2)^(1/3)` where `nu` is the
/// subsampled `(1 - alpha)` quantile of `max_j (l h_lj^2)^(1/3) |m_l(x^j) - m_n(x^j)|`.
pub fn simultaneous_ci(
    data: &Dataset,
    points: &[DesignPoint],
    config: &ModeConfig,
    sub: &SubsampleConfig,
) -> Result<Vec<IntervalResult>> {
    if points.is_empty() {
        return Err(Error::Dimension("no design points given".into()));
    }
    sub.validate(data)?;
    let full_config = match sub.shared_h {
        Some(h) => ModeConfig {
            bandwidth: BandwidthChoice::Fixed(h),
            ..config.clone()
        },
        None => config.clone(),
    };
    let (_, full) = full_sample_fit(data, points, &full_config)?;
    let (values, failures) = run_subsets(data, points, &full, &full_config, sub)?;
    let maxima: Vec<f64> = values
        .iter()
        .map(|v| v.iter().fold(0.0, |acc: f64, s| acc.max(s.abs())))
        .collect();
    let nu = empirical_quantile(&maxima, 1.0 - sub.alpha);
    Ok(full
        .estimates
        .iter()
        .map(|est| {
            let rate = rate_factor(data.n(), est.bandwidth);
            IntervalResult {
                lower: est.mode - nu * rate,
                upper: est.mode + nu * rate,
                level: 1.0 - sub.alpha,
                method: IntervalMethod::Simultaneous,
                center: est.mode,
                rate_factor: rate,
                tau_hat: est.tau_hat,
                bandwidth: est.bandwidth,
                x: est.design_point.clone(),
                metadata: IntervalMetadata::Simultaneous {
                    ell: sub.ell,
                    b: sub.b,
                    failures,
                    seed: sub.seed,
                    nu,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::uniform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    fn point(v: &[f64]) -> DesignPoint {
        DesignPoint::new(v.to_vec()).unwrap()
    }

    fn poly_process(f: impl Fn(f64) -> f64) -> QuantileProcess {
        let taus = uniform_grid(0.05, 0.95, 91);
        QuantileProcess::from_parts(taus.clone(), taus.iter().map(|&t| vec![f(t)]).collect()).unwrap()
    }

    #[test]
    fn sigma_hat_examples() {
        let d = Dataset::new(vec![0.0, 1.0], vec![vec![1.0], vec![1.0]], vec!["a".into()]).unwrap();
        assert_eq!(sigma_hat_matrix(&d), mat(&[&[1.0]]));
        let d = Dataset::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let s = sigma_hat_matrix(&d);
        assert!((s[(0, 0)] - 1.0 / 3.0).abs() < 1e-15 && s[(0, 1)] == 0.0);
    }

    #[test]
    fn sigma_hat_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let y = (0..50).map(|i| i as f64).collect();
        let d = Dataset::new(y, rows, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let s = sigma_hat_matrix(&d);
        assert!((&s - s.transpose()).abs().max() < 1e-12);
        assert!(s.symmetric_eigenvalues().iter().all(|&e| e > -1e-12));
    }

    #[test]
    fn powell_full_and_empty_indicator() {
        let d = Dataset::with_intercept(
            vec![0.0, 0.1, -0.1, 0.05],
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec!["x".into()],
        )
        .unwrap();
        let all = powell_j(&d, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(all.active, 4);
        assert!(all.warning.is_none());
        let expect = sigma_hat_matrix(&d) / 2.0;
        assert!((all.matrix - expect).abs().max() < 1e-14);
        let none = powell_j(&d, &[10.0, 0.0], 1.0).unwrap();
        assert_eq!(none.active, 0);
        assert!(none.warning.is_some());
        assert_eq!(none.matrix.abs().max(), 0.0);
        assert!(powell_j(&d, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn powell_uniform_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..40_000).map(|_| rng.random()).collect();
        let d = Dataset::intercept_only(y).unwrap();
        let j = powell_j(&d, &[0.5], 0.1).unwrap();
        // Binomial(n, 0.2) / (0.2 n): sd about 0.01.
        assert!((j.matrix[(0, 0)] - 1.0).abs() < 0.04, "{}", j.matrix[(0, 0)]);
    }

    #[test]
    fn sigma2_examples() {
        let e1 = point(&[1.0, 0.0]);
        let i = DMatrix::identity(2, 2);
        assert!((sigma2_hat(&e1, &i, &i).unwrap() - 0.5).abs() < 1e-15);
        assert!((sigma2_hat(&e1, &(&i * 2.0), &i).unwrap() - 0.125).abs() < 1e-15);
        let singular = mat(&[&[1.0, 1.0], &[1.0, 1.0]]);
        match sigma2_hat(&e1, &singular, &i) {
            Err(Error::Singular { smallest_singular_value }) => assert!(smallest_singular_value < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sigma2_matches_dense_solves_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            let b = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            let j = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
            let s = &b * b.transpose();
            let x = point(&[rng.random(), rng.random(), rng.random()]);
            let xv = DVector::from_column_slice(x.as_slice());
            let j_inv = j.clone().try_inverse().unwrap();
            let expect = 0.5 * (xv.transpose() * &j_inv * &s * &j_inv * &xv)[(0, 0)];
            let got = sigma2_hat(&x, &j, &s).unwrap();
            assert!((got - expect).abs() < 1e-10 * expect.abs().max(1.0));
            let scaled = sigma2_hat(&x, &(&j * 3.0), &s).unwrap();
            assert!((scaled - got / 9.0).abs() < 1e-10 * got.abs().max(1.0));
        }
    }

    #[test]
    fn v_rules_exact_on_cubics() {
        let x = point(&[1.0]);
        let cube = poly_process(|t| t.powi(3));
        for h in [0.01, 0.05, 0.1] {
            let a = v_hat_delta3(&cube, &x, 0.5, h).unwrap();
            let b = v_hat_fivepoint(&cube, &x, 0.5, h).unwrap();
            assert!((a - 3.0).abs() < 1e-8, "{a}");
            assert!((b - 3.0).abs() < 1e-8, "{b}");
        }
        let general = poly_process(|t| 2.0 - t + 4.0 * t * t - 0.7 * t.powi(3));
        let a = v_hat_delta3(&general, &x, 0.4, 0.05).unwrap();
        let b = v_hat_fivepoint(&general, &x, 0.4, 0.05).unwrap();
        assert!((a - b).abs() < 1e-8 && (a + 2.1).abs() < 1e-8);
    }

    #[test]
    fn v_rules_annihilate_low_degree() {
        let x = point(&[1.0]);
        let lin = poly_process(|t| 3.0 * t - 1.0);
        let quad = poly_process(|t| t * t);
        assert!(v_hat_delta3(&lin, &x, 0.5, 0.05).unwrap().abs() < 1e-8);
        assert!(v_hat_fivepoint(&lin, &x, 0.5, 0.05).unwrap().abs() < 1e-8);
        assert!(v_hat_fivepoint(&quad, &x, 0.5, 0.05).unwrap().abs() < 1e-8);
    }

    #[test]
    fn delta3_on_quartic() {
        let x = point(&[1.0]);
        let p = poly_process(|t| t.powi(4));
        let v = v_hat_delta3(&p, &x, 0.5, 0.05).unwrap();
        // Delta_h^3 t^4 = 24 t exactly, so v = 12 t.
        assert!((v - 6.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn v_rules_range_errors() {
        let x = point(&[1.0]);
        let p = poly_process(|t| t.powi(3));
        assert!(matches!(v_hat_delta3(&p, &x, 0.2, 0.06), Err(Error::StencilRange { .. })));
        assert!(v_hat_fivepoint(&p, &x, 0.2, 0.06).is_ok());
        assert!(matches!(v_hat_fivepoint(&p, &x, 0.9, 0.06), Err(Error::StencilRange { .. })));
    }

    #[test]
    fn kernel_gaussian_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 200_000;
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let d = Dataset::intercept_only(y).unwrap();
        let phi0 = (2.0 * std::f64::consts::PI).sqrt().recip();
        // Smoothing bias: E f''(0) = -phi(0) (1 + b^2)^(-3/2). The sampling sd
        // of f''(0) is about sqrt(0.085 / (n b^5)).
        let k = v_hat_kernel(&d, &point(&[1.0]), 0.0, 1.0 / phi0, &KernelOptions::default()).unwrap();
        let expect_f2 = -phi0 * (1.0 + k.b_y * k.b_y).powf(-1.5);
        assert!((k.f2 - expect_f2).abs() < 0.06, "{} vs {expect_f2}", k.f2);
        let opts = KernelOptions {
            b_y: Some(0.5),
            ..Default::default()
        };
        let k = v_hat_kernel(&d, &point(&[1.0]), 0.0, 1.0 / phi0, &opts).unwrap();
        let expect_f2 = -phi0 * 1.25f64.powf(-1.5);
        assert!((k.f2 - expect_f2).abs() < 0.015, "{} vs {expect_f2}", k.f2);
        let expect_v = -expect_f2 / phi0.powi(4) / 2.0;
        assert!((k.v - expect_v).abs() / expect_v < 0.05, "{} vs {expect_v}", k.v);
        // Unsmoothed limit.
        assert!((phi0.powi(-3) / 2.0 - 7.874).abs() < 1e-3);
    }

    #[test]
    fn kernel_far_mode_is_degenerate() {
        let d = Dataset::intercept_only((0..100).map(|i| i as f64 / 100.0).collect()).unwrap();
        let opts = KernelOptions {
            b_y: Some(0.01),
            ..Default::default()
        };
        let k = v_hat_kernel(&d, &point(&[1.0]), 50.0, 1.0, &opts).unwrap();
        assert!(k.degenerate && k.v.abs() < 1e-12);
    }

    #[test]
    fn kernel_empty_neighbourhood() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0]).collect();
        let d = Dataset::with_intercept((0..50).map(|i| i as f64).collect(), x, vec!["x".into()]).unwrap();
        let r = v_hat_kernel(&d, &point(&[1.0, 5.0]), 0.0, 1.0, &KernelOptions::default());
        assert!(matches!(r, Err(Error::EmptyNeighbourhood)));
    }

    #[test]
    fn left_continuous_quantile() {
        let v = [3.0, 1.0, 2.0, 2.0];
        assert_eq!(empirical_quantile(&v, 0.5), 2.0);
        assert_eq!(empirical_quantile(&v, 0.25), 1.0);
        assert_eq!(empirical_quantile(&v, 0.26), 2.0);
        assert_eq!(empirical_quantile(&v, 0.75), 2.0);
        assert_eq!(empirical_quantile(&v, 0.76), 3.0);
        assert_eq!(empirical_quantile(&v, 1e-9), 1.0);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&hundred, 0.95), 95.0);
    }

    fn dist(values: Vec<f64>) -> SubsampleDistribution {
        SubsampleDistribution {
            values,
            ell: 10,
            b: 2,
            failures: 0,
            seed: 0,
            m_hat: 1.0,
            h_n: 0.2,
            n: 100,
            tau_hat: 0.5,
        }
    }

    #[test]
    fn subsample_ci_constant_and_symmetric() {
        let x = point(&[1.0]);
        let rate = rate_factor(100, 0.2);
        let ci = subsample_ci(&dist(vec![0.3; 5]), &x, 0.05).unwrap();
        assert!((ci.lower - (1.0 - 0.3 * rate)).abs() < 1e-15);
        assert_eq!(ci.lower, ci.upper);
        let ci = subsample_ci(&dist(vec![-0.4, 0.4]), &x, 0.05).unwrap();
        assert!(((ci.lower + ci.upper) / 2.0 - 1.0).abs() < 1e-15);
        assert!(ci.lower < ci.upper);
    }

    #[test]
    fn analytic_ci_scale_equivariant() {
        use crate::chernoff::ChernoffParams;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 600;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random::<f64>()]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let u: f64 = rng.random();
                u.powi(3) / 3.0 - r[1] * (u - 1.0).powi(2)
            })
            .collect();
        let names = vec!["const".to_string(), "x2".to_string()];
        let data = Dataset::new(y.clone(), rows.clone(), names.clone()).unwrap();
        let scaled = Dataset::new(y.iter().map(|v| 2.5 * v - 1.0).collect(), rows, names).unwrap();
        let table = ChernoffTable::build(ChernoffParams {
            n_draws: 2000,
            half_width: 2.0,
            step: 0.01,
            seed: 0,
        })
        .unwrap();
        let x = point(&[1.0, 0.4]);
        let config = ModeConfig::default();
        let opts = AnalyticOptions::default();
        let a = analytic_ci(&data, &x, &config, &opts, &table).unwrap();
        let b = analytic_ci(&scaled, &x, &config, &opts, &table).unwrap();
        assert!((b.center - (2.5 * a.center - 1.0)).abs() < 1e-9);
        assert!((b.length() / a.length() - 2.5).abs() < 1e-6, "{} vs {}", a.length(), b.length());
    }

    #[test]
    fn rate_factor_scaling() {
        let r = rate_factor(500, 0.1) / rate_factor(500, 0.2);
        assert!((r - 2f64.powf(2.0 / 3.0)).abs() < 1e-12);
    }
}
