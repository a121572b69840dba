//! Sparsity estimation and conditional-mode location.
//!
//! The sparsity function `s_x(tau) = dQ_x/dtau` is estimated by differencing
//! the fitted conditional quantile curve `tau -> x'beta(tau)`; its grid
//! minimiser `tau_hat` gives the mode estimate `x'beta(tau_hat)`.
//!
//! Offsets `tau +- h` are snapped to the nearest grid point, and near the ends
//! of the grid the offsets are truncated to `min(h, tau_max - tau)` and
//! `min(h, tau - tau_min)`. Quotients divide by the distance between the grid
//! points actually used, which equals `2h` in the interior whenever `h` is a
//! multiple of the grid step.

use serde::{Deserialize, Serialize};

use crate::bandwidth::{select_bandwidth_on_process, BandwidthPlan, KmRule, DEFAULT_ALPHA};
use crate::dataset::{Dataset, DesignPoint};
use crate::error::{check_positive, Error, Result};
use crate::qr::{solve_path, uniform_grid, QuantileProcess};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_TAU_MIN: f64 = 0.05;
pub const DEFAULT_TAU_MAX: f64 = 0.95;
pub const DEFAULT_GRID_POINTS: usize = 100;

const GRID_SLACK: f64 = 1e-12;

/// Which difference quotient estimates the sparsity function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityObjective {
    /// `(Q(tau+h) - Q(tau-h)) / 2h`
    #[default]
    Centered,
    /// `[2/3 {Q(tau+h) - Q(tau-h)} - 1/12 {Q(tau+2h) - Q(tau-2h)}] / h`
    FourthOrder,
}

/// Estimated sparsity on the grid points inside `[epsilon, 1 - epsilon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityCurve {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub epsilon: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Position of each entry of `taus` in the process grid.
    pub grid_index: Vec<usize>,
}

/// Nearest grid index to `target`, ties to the lower point.
pub(crate) fn snap(taus: &[f64], target: f64) -> usize {
    let k = taus.partition_point(|&t| t < target);
    if k == 0 {
        0
    } else if k == taus.len() || target - taus[k - 1] <= taus[k] - target {
        k - 1
    } else {
        k
    }
}

/// Grid index at offset `+h` (or `-h` when `upward` is false) from grid
/// index `k`, truncated at the grid end and at least one step away unless
/// the truncated offset is zero.
pub(crate) fn offset_index(taus: &[f64], k: usize, h: f64, upward: bool) -> usize {
    let tau = taus[k];
    let last = taus.len() - 1;
    if upward {
        let reach = h.min(taus[last] - tau);
        if reach <= 0.0 {
            return k;
        }
        snap(taus, tau + reach).max(k + 1).min(last)
    } else {
        let reach = h.min(tau - taus[0]);
        if reach <= 0.0 {
            return k;
        }
        snap(taus, tau - reach).min(k.saturating_sub(1))
    }
}

fn check_curve_inputs(taus: &[f64], h: f64, epsilon: f64) -> Result<(f64, f64)> {
    check_positive("h", h)?;
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Domain {
            name: "epsilon",
            value: epsilon,
            expected: "must lie in (0, 1/2)",
        });
    }
    let (lo, hi) = (taus[0], taus[taus.len() - 1]);
    if lo > epsilon + GRID_SLACK || hi < 1.0 - epsilon - GRID_SLACK {
        return Err(Error::GridCoverage {
            tau_min: lo,
            tau_max: hi,
            epsilon,
        });
    }
    if h >= (hi - lo) / 2.0 {
        return Err(Error::BandwidthTooLarge {
            h,
            tau_min: lo,
            tau_max: hi,
        });
    }
    Ok((lo, hi))
}

/// Sparsity curve from precomputed quantile values `q[k] = Q_x(taus[k])`.
pub fn sparsity_from_values(
    taus: &[f64],
    q: &[f64],
    h: f64,
    epsilon: f64,
    objective: SparsityObjective,
) -> Result<SparsityCurve> {
    if taus.len() != q.len() || taus.len() < 2 {
        return Err(Error::Dimension("need at least two grid points with values".into()));
    }
    let (tau_min, tau_max) = check_curve_inputs(taus, h, epsilon)?;
    let mut out_taus = Vec::new();
    let mut values = Vec::new();
    let mut grid_index = Vec::new();
    for (k, &tau) in taus.iter().enumerate() {
        if tau < epsilon - GRID_SLACK || tau > 1.0 - epsilon + GRID_SLACK {
            continue;
        }
        let up = offset_index(taus, k, h, true);
        let down = offset_index(taus, k, h, false);
        let value = match objective {
            SparsityObjective::Centered => (q[up] - q[down]) / (taus[up] - taus[down]),
            SparsityObjective::FourthOrder => {
                let up2 = snap(taus, (2.0 * taus[up] - tau).min(tau_max));
                let down2 = snap(taus, (2.0 * taus[down] - tau).max(tau_min));
                let num = 2.0 / 3.0 * (q[up] - q[down]) - (q[up2] - q[down2]) / 12.0;
                let den = 2.0 / 3.0 * (taus[up] - taus[down]) - (taus[up2] - taus[down2]) / 12.0;
                num / den
            }
        };
        out_taus.push(tau);
        values.push(value);
        grid_index.push(k);
    }
    if values.is_empty() {
        return Err(Error::GridCoverage {
            tau_min,
            tau_max,
            epsilon,
        });
    }
    Ok(SparsityCurve {
        taus: out_taus,
        values,
        bandwidth: h,
        epsilon,
        tau_min,
        tau_max,
        grid_index,
    })
}

/// Edge-adjusted centered difference quotient of `x'beta(tau)`.
pub fn sparsity_curve(process: &QuantileProcess, x: &DesignPoint, h: f64, epsilon: f64) -> Result<SparsityCurve> {
    let q = process.curve(x)?;
    sparsity_from_values(process.taus(), &q, h, epsilon, SparsityObjective::Centered)
}

/// Fourth-order (five-point) variant of [`sparsity_curve`].
pub fn sparsity_curve_alt(process: &QuantileProcess, x: &DesignPoint, h: f64, epsilon: f64) -> Result<SparsityCurve> {
    let q = process.curve(x)?;
    sparsity_from_values(process.taus(), &q, h, epsilon, SparsityObjective::FourthOrder)
}

/// Grid argmin of the curve; ties go to the smallest tau.
/// Returns `(position in curve, tau_hat, value)`.
pub fn argmin_sparsity(curve: &SparsityCurve) -> (usize, f64, f64) {
    let mut best = 0;
    for (i, &v) in curve.values.iter().enumerate().skip(1) {
        if v < curve.values[best] {
            best = i;
        }
    }
    (best, curve.taus[best], curve.values[best])
}

/// `(tau_hat, s(tau_hat))`.
pub fn minimize_sparsity(curve: &SparsityCurve) -> (f64, f64) {
    let (_, tau, value) = argmin_sparsity(curve);
    (tau, value)
}

/// How the differencing bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthChoice {
    /// Pilot/final rule; `pilot` overrides the pilot bandwidth (as when
    /// subsamples reuse the full-sample pilot).
    Auto { pilot: Option<f64> },
    Fixed(f64),
}

impl Default for BandwidthChoice {
    fn default() -> Self {
        Self::Auto { pilot: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub epsilon: f64,
    pub grid: Vec<f64>,
    pub bandwidth: BandwidthChoice,
    pub objective: SparsityObjective,
    /// Level inside the bandwidth rule's normal quantile.
    pub alpha: f64,
    #[serde(default)]
    pub rule: KmRule,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            grid: uniform_grid(DEFAULT_TAU_MIN, DEFAULT_TAU_MAX, DEFAULT_GRID_POINTS),
            bandwidth: BandwidthChoice::default(),
            objective: SparsityObjective::Centered,
            alpha: DEFAULT_ALPHA,
            rule: KmRule::default(),
        }
    }
}

/// Mode estimate at one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub tau_hat: f64,
    pub mode: f64,
    #[serde(rename = "sparsity")]
    pub sparsity_at_min: f64,
    pub bandwidth: f64,
    #[serde(rename = "x")]
    pub design_point: DesignPoint,
}

/// Full pipeline: quantile process, bandwidth, sparsity, grid argmin.
pub fn estimate_mode(data: &Dataset, x: &DesignPoint, config: &ModeConfig) -> Result<ModeEstimate> {
    x.check_dim(data.d())?;
    let process = solve_path(data, &config.grid)?;
    Ok(estimate_mode_on_process(&process, data.n(), x, config)?.0)
}

/// Mode estimate on an already fitted process. `n` is the sample size the
/// process was fitted on (it enters the bandwidth rule). Also returns the
/// bandwidth plan when the bandwidth was selected automatically.
pub fn estimate_mode_on_process(
    process: &QuantileProcess,
    n: usize,
    x: &DesignPoint,
    config: &ModeConfig,
) -> Result<(ModeEstimate, Option<BandwidthPlan>)> {
    let q = process.curve(x)?;
    let (h, plan) = match config.bandwidth {
        BandwidthChoice::Fixed(h) => (h, None),
        BandwidthChoice::Auto { pilot } => {
            let plan = select_bandwidth_on_process(process, &q, n, config, pilot)?;
            (plan.final_h, Some(plan))
        }
    };
    let curve = sparsity_from_values(process.taus(), &q, h, config.epsilon, config.objective)?;
    let (pos, tau_hat, sparsity) = argmin_sparsity(&curve);
    Ok((
        ModeEstimate {
            tau_hat,
            mode: q[curve.grid_index[pos]],
            sparsity_at_min: sparsity,
            bandwidth: h,
            design_point: x.clone(),
        },
        plan,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(step: f64, lo: f64, hi: f64) -> Vec<f64> {
        let m = ((hi - lo) / step).round() as usize;
        (0..=m).map(|k| lo + step * k as f64).collect()
    }

    fn process_of(taus: &[f64], f: impl Fn(f64) -> f64) -> QuantileProcess {
        QuantileProcess::from_parts(taus.to_vec(), taus.iter().map(|&t| vec![f(t)]).collect()).unwrap()
    }

    fn one() -> DesignPoint {
        DesignPoint::new(vec![1.0]).unwrap()
    }

    #[test]
    fn identity_process_has_unit_sparsity() {
        let taus = uniform_grid(0.05, 0.95, 100);
        let p = process_of(&taus, |t| t);
        for h in [0.01, 0.037, 0.1, 0.3] {
            let c = sparsity_curve(&p, &one(), h, 0.1).unwrap();
            assert!(c.values.iter().all(|v| (v - 1.0).abs() < 1e-12), "h = {h}");
            let c = sparsity_curve_alt(&p, &one(), h, 0.1).unwrap();
            assert!(c.values.iter().all(|v| (v - 1.0).abs() < 1e-12), "h = {h}");
        }
    }

    #[test]
    fn interior_points_use_plain_centered_difference() {
        let taus = grid(0.01, 0.05, 0.95);
        let p = process_of(&taus, |t| t * t * t + (3.0 * t).sin());
        let h = 0.04;
        let c = sparsity_curve(&p, &one(), h, 0.1).unwrap();
        for (&tau, &v) in c.taus.iter().zip(&c.values) {
            if tau - h >= 0.05 - 1e-12 && tau + h <= 0.95 + 1e-12 {
                let f = |t: f64| t * t * t + (3.0 * t).sin();
                let expect = (f(tau + h) - f(tau - h)) / (2.0 * h);
                assert!((v - expect).abs() < 1e-9, "tau = {tau}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn edge_truncation_shrinks_denominator() {
        // tau = 0.9, h = 0.1, tau_max = 0.95: denominator is 0.05 + 0.1.
        let taus = grid(0.01, 0.05, 0.95);
        let p = process_of(&taus, |t| t * t);
        let c = sparsity_curve(&p, &one(), 0.1, 0.1).unwrap();
        let last = *c.values.last().unwrap();
        assert!((c.taus.last().unwrap() - 0.9).abs() < 1e-12);
        let expect = (0.95f64.powi(2) - 0.8f64.powi(2)) / 0.15;
        assert!((last - expect).abs() < 1e-12);
    }

    #[test]
    fn fourth_order_exact_on_cubic() {
        let taus = grid(0.01, 0.05, 0.95);
        let p = process_of(&taus, |t| t * t * t);
        let c = sparsity_curve_alt(&p, &one(), 0.05, 0.1).unwrap();
        let i = c.taus.iter().position(|t| (t - 0.5).abs() < 1e-9).unwrap();
        assert!((c.values[i] - 0.75).abs() < 1e-10);
    }

    #[test]
    fn fourth_order_near_edges_stays_finite() {
        let taus = grid(0.01, 0.05, 0.95);
        let p = process_of(&taus, |t| t * t * t);
        let c = sparsity_curve_alt(&p, &one(), 0.1, 0.1).unwrap();
        assert!(c.values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn case_two_population_curve() {
        let taus = uniform_grid(0.05, 0.95, 100);
        let x2 = 0.5;
        let p = QuantileProcess::from_parts(
            taus.clone(),
            taus.iter().map(|&t| vec![t.powi(3) / 3.0, -(t - 1.0).powi(2)]).collect(),
        )
        .unwrap();
        let x = DesignPoint::new(vec![1.0, x2]).unwrap();
        let h = taus[1] - taus[0];
        let c = sparsity_curve(&p, &x, h, 0.1).unwrap();
        for (&t, &v) in c.taus.iter().zip(&c.values) {
            let truth = t * t - 2.0 * (t - 1.0) * x2;
            assert!((v - truth).abs() < 2.0 * h * h, "tau {t}");
        }
        let (tau_hat, _) = minimize_sparsity(&c);
        assert!((tau_hat - x2).abs() <= h + 1e-12);
    }

    #[test]
    fn argmin_and_ties() {
        let c = SparsityCurve {
            taus: vec![0.3, 0.5, 0.7],
            values: vec![3.0, 1.0, 2.0],
            bandwidth: 0.1,
            epsilon: 0.1,
            tau_min: 0.05,
            tau_max: 0.95,
            grid_index: vec![0, 1, 2],
        };
        assert_eq!(minimize_sparsity(&c), (0.5, 1.0));
        let tie = SparsityCurve {
            taus: vec![0.4, 0.6],
            values: vec![1.0, 1.0],
            grid_index: vec![0, 1],
            ..c
        };
        assert_eq!(minimize_sparsity(&tie), (0.4, 1.0));
    }

    #[test]
    fn bandwidth_and_coverage_errors() {
        let taus = uniform_grid(0.05, 0.95, 100);
        let p = process_of(&taus, |t| t);
        assert!(matches!(
            sparsity_curve(&p, &one(), 0.45, 0.1),
            Err(Error::BandwidthTooLarge { .. })
        ));
        let narrow = uniform_grid(0.2, 0.8, 50);
        let p = process_of(&narrow, |t| t);
        assert!(matches!(
            sparsity_curve(&p, &one(), 0.05, 0.1),
            Err(Error::GridCoverage { .. })
        ));
    }

    #[test]
    fn snapping_prefers_lower_on_ties() {
        let taus = [0.1, 0.2, 0.3];
        assert_eq!(snap(&taus, 0.15), 0);
        assert_eq!(snap(&taus, 0.16), 1);
        assert_eq!(snap(&taus, 0.0), 0);
        assert_eq!(snap(&taus, 1.0), 2);
    }
}
