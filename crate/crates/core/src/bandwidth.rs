//! Bandwidth for the sparsity difference quotient.
//!
//! Starts from the tau-dependent Koenker-Machado bandwidth [`km_bandwidth`]
//! and inflates it by `n^(1/6)` so that `h ~ n^(-1/6)`. The rule is evaluated
//! first at the median (pilot) and then at the preliminary mode level (final).

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::dataset::{Dataset, DesignPoint};
use crate::error::{check_prob, Error, Result};
use crate::mode::{argmin_sparsity, sparsity_from_values, ModeConfig};
use crate::qr::{solve_path, QuantileProcess};

pub const DEFAULT_ALPHA: f64 = 0.05;

pub(crate) fn std_normal() -> Normal {
    Normal::standard()
}

/// Form of the Koenker-Machado bandwidth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmRule {
    /// `phi(q_tau)` to the first power.
    #[default]
    Linear,
    /// The Hall-Sheather form with `phi(q_tau)^2`.
    HallSheather,
}

/// `n^(-1/3) z_a^(2/3) {1.5 phi(q_tau) / (2 q_tau^2 + 1)}^(1/3)` with
/// `q_tau = Phi^-1(tau)` and `z_a = Phi^-1(1 - alpha/2)`.
pub fn km_bandwidth(tau: f64, n: usize, alpha: f64) -> Result<f64> {
    km_bandwidth_with(KmRule::Linear, tau, n, alpha)
}

/// [`km_bandwidth`] under either form of the rule.
pub fn km_bandwidth_with(rule: KmRule, tau: f64, n: usize, alpha: f64) -> Result<f64> {
    check_prob("tau", tau)?;
    check_prob("alpha", alpha)?;
    if n < 2 {
        return Err(Error::Domain {
            name: "n",
            value: n as f64,
            expected: "must be at least 2",
        });
    }
    let norm = std_normal();
    let q = norm.inverse_cdf(tau);
    let z = norm.inverse_cdf(1.0 - alpha / 2.0);
    let density = match rule {
        KmRule::Linear => norm.pdf(q),
        KmRule::HallSheather => norm.pdf(q).powi(2),
    };
    let ratio = 1.5 * density / (2.0 * q * q + 1.0);
    Ok((n as f64).powf(-1.0 / 3.0) * z.powf(2.0 / 3.0) * ratio.cbrt())
}

/// `n^(1/6) h_km(tau)`, the rate-corrected rule before capping.
pub fn scaled_bandwidth(tau: f64, n: usize, alpha: f64) -> Result<f64> {
    scaled_bandwidth_with(KmRule::Linear, tau, n, alpha)
}

pub fn scaled_bandwidth_with(rule: KmRule, tau: f64, n: usize, alpha: f64) -> Result<f64> {
    Ok((n as f64).powf(1.0 / 6.0) * km_bandwidth_with(rule, tau, n, alpha)?)
}

/// Largest admissible bandwidth on a grid: half the range minus one step.
pub fn bandwidth_cap(taus: &[f64]) -> f64 {
    let (lo, hi) = (taus[0], taus[taus.len() - 1]);
    let step = if taus.len() > 1 {
        (hi - lo) / (taus.len() - 1) as f64
    } else {
        0.0
    };
    (hi - lo) / 2.0 - step
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub pilot: f64,
    #[serde(rename = "final")]
    pub final_h: f64,
    pub tau_prelim: f64,
    pub alpha: f64,
    pub cap: f64,
    pub pilot_capped: bool,
    pub final_capped: bool,
}

impl BandwidthPlan {
    pub fn cap_hit(&self) -> bool {
        self.pilot_capped || self.final_capped
    }
}

fn capped(h: f64, cap: f64) -> (f64, bool) {
    if h > cap {
        (cap, true)
    } else {
        (h, false)
    }
}

/// Pilot bandwidth `n^(1/6) h_km(0.5)`, capped for `taus`.
pub fn pilot_bandwidth(n: usize, alpha: f64, taus: &[f64]) -> Result<f64> {
    Ok(capped(scaled_bandwidth(0.5, n, alpha)?, bandwidth_cap(taus)).0)
}

/// Pilot/final bandwidth selection at `x`.
pub fn select_bandwidth(data: &Dataset, x: &DesignPoint, config: &ModeConfig) -> Result<BandwidthPlan> {
    x.check_dim(data.d())?;
    let process = solve_path(data, &config.grid)?;
    let q = process.curve(x)?;
    select_bandwidth_on_process(&process, &q, data.n(), config, None)
}

/// Bandwidth selection on a fitted process with `q[k] = x'beta(tau_k)`.
/// `pilot` replaces the pilot computed from `n`.
pub fn select_bandwidth_on_process(
    process: &QuantileProcess,
    q: &[f64],
    n: usize,
    config: &ModeConfig,
    pilot: Option<f64>,
) -> Result<BandwidthPlan> {
    let taus = process.taus();
    let cap = bandwidth_cap(taus);
    if cap <= 0.0 {
        return Err(Error::Dimension("tau grid too short for bandwidth selection".into()));
    }
    let (pilot, pilot_capped) = match pilot {
        Some(h) => capped(h, cap),
        None => capped(scaled_bandwidth_with(config.rule, 0.5, n, config.alpha)?, cap),
    };
    let curve = sparsity_from_values(taus, q, pilot, config.epsilon, config.objective)?;
    let (_, tau_prelim, _) = argmin_sparsity(&curve);
    let (final_h, final_capped) = capped(scaled_bandwidth_with(config.rule, tau_prelim, n, config.alpha)?, cap);
    Ok(BandwidthPlan {
        pilot,
        final_h,
        tau_prelim,
        alpha: config.alpha,
        cap,
        pilot_capped,
        final_capped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::uniform_grid;

    #[test]
    fn km_at_median() {
        // n^(-1/3) * 1.959964^(2/3) * (1.5 * 0.3989423)^(1/3)
        let expect = 0.1 * 1.959964f64.powf(2.0 / 3.0) * (1.5 * 0.398_942_3f64).cbrt();
        let h = km_bandwidth(0.5, 1000, 0.05).unwrap();
        assert!((h - expect).abs() < 1e-6);
        assert!((h - 0.13198).abs() < 5e-5);
    }

    #[test]
    fn km_shape() {
        let h5 = km_bandwidth(0.5, 1000, 0.05).unwrap();
        let h9 = km_bandwidth(0.9, 1000, 0.05).unwrap();
        assert!(h9 < h5);
        for tau in [0.05, 0.2, 0.37, 0.49] {
            let a = km_bandwidth(tau, 500, 0.05).unwrap();
            let b = km_bandwidth(1.0 - tau, 500, 0.05).unwrap();
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn km_domain_errors() {
        assert!(km_bandwidth(0.0, 100, 0.05).is_err());
        assert!(km_bandwidth(0.5, 1, 0.05).is_err());
        assert!(km_bandwidth(0.5, 100, 1.0).is_err());
    }

    #[test]
    fn rate_is_minus_one_sixth() {
        for tau in [0.2, 0.5, 0.8] {
            let a = scaled_bandwidth(tau, 1000, 0.05).unwrap();
            let b = scaled_bandwidth(tau, 64_000, 0.05).unwrap();
            assert!((a / b - 64f64.powf(1.0 / 6.0)).abs() < 1e-12);
        }
        assert!(scaled_bandwidth(0.5, 1_000_000, 0.05).unwrap() < scaled_bandwidth(0.5, 1000, 0.05).unwrap());
    }

    #[test]
    fn pilot_is_capped_at_n_1000() {
        let raw = scaled_bandwidth(0.5, 1000, 0.05).unwrap();
        assert!((raw - 1000f64.powf(1.0 / 6.0) * 0.13198).abs() < 1e-3);
        let grid = uniform_grid(0.05, 0.95, 100);
        let cap = bandwidth_cap(&grid);
        assert!((cap - (0.45 - 0.9 / 99.0)).abs() < 1e-12);
        assert_eq!(pilot_bandwidth(1000, 0.05, &grid).unwrap(), raw.min(cap));
    }

    #[test]
    fn median_prelim_is_a_fixed_point() {
        // A process whose sparsity is minimised at 0.5: Q(tau) = (tau - 0.5)^3 + tau.
        let taus = uniform_grid(0.05, 0.95, 91);
        let p = QuantileProcess::from_parts(
            taus.clone(),
            taus.iter().map(|&t| vec![(t - 0.5).powi(3) + t]).collect(),
        )
        .unwrap();
        let x = DesignPoint::new(vec![1.0]).unwrap();
        let q = p.curve(&x).unwrap();
        let plan = select_bandwidth_on_process(&p, &q, 20_000, &ModeConfig::default(), None).unwrap();
        assert!((plan.tau_prelim - 0.5).abs() < 1e-12);
        assert_eq!(plan.final_h, plan.pilot);
        assert!(plan.final_h > 0.0 && plan.final_h < 0.5);
    }
}
