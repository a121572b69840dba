//! Chernoff's distribution: the law of `Z = argmax_t {B(t) - t^2}` for a
//! two-sided standard Brownian motion `B`.
//!
//! Quantiles are tabulated by Monte Carlo: each draw runs two independent
//! Gaussian random walks with `N(0, delta)` increments out to `+-T` and takes
//! the discrete argmax of the drifted path. Also provides the Gumbel norming
//! constants for the maximum of `L` independent `|Z|`, and a Kolmogorov-Smirnov
//! check of that limit.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::seeding::{stream, Domain};

pub const DEFAULT_DRAWS: usize = 200_000;
pub const DEFAULT_HALF_WIDTH: f64 = 2.5;
pub const DEFAULT_STEP: f64 = 1e-3;

/// Environment variable naming the table cache directory.
pub const CACHE_ENV: &str = "MODALREG_CACHE_DIR";

/// Simulation parameters; also the cache key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffParams {
    pub n_draws: usize,
    pub half_width: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for ChernoffParams {
    fn default() -> Self {
        Self {
            n_draws: DEFAULT_DRAWS,
            half_width: DEFAULT_HALF_WIDTH,
            step: DEFAULT_STEP,
            seed: 0,
        }
    }
}

impl ChernoffParams {
    fn validate(&self) -> Result<()> {
        check_positive("T", self.half_width)?;
        check_positive("delta", self.step)?;
        if self.step >= self.half_width {
            return Err(Error::Domain {
                name: "delta",
                value: self.step,
                expected: "must be smaller than T",
            });
        }
        if self.n_draws == 0 {
            return Err(Error::Domain {
                name: "n_draws",
                value: 0.0,
                expected: "must be at least 1",
            });
        }
        Ok(())
    }

    fn cache_key(&self) -> String {
        format!(
            "n_draws={},T={:?},delta={:?},seed={}",
            self.n_draws, self.half_width, self.step, self.seed
        )
    }
}

/// One draw of the discretised argmax. Ties keep the smallest `|t|`.
fn draw<R: rand::Rng>(rng: &mut R, steps: usize, step: f64) -> f64 {
    let sd = step.sqrt();
    let mut best_value = 0.0;
    let mut best_t = 0.0;
    for side in [1.0, -1.0] {
        let mut walk = 0.0;
        for j in 1..=steps {
            let z: f64 = StandardNormal.sample(rng);
            walk += sd * z;
            let t = j as f64 * step;
            let value = walk - t * t;
            if value > best_value {
                best_value = value;
                best_t = side * t;
            }
        }
    }
    best_t
}

fn draws_in_domain(domain: Domain, start: u64, count: usize, params: &ChernoffParams) -> Vec<f64> {
    let steps = (params.half_width / params.step).round() as usize;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(params.seed, domain, start + i);
            draw(&mut rng, steps, params.step)
        })
        .collect()
}

/// `n_draws` independent draws; reproducible for a given seed irrespective
/// of thread count.
pub fn simulate_chernoff(n_draws: usize, half_width: f64, step: f64, seed: u64) -> Result<Vec<f64>> {
    let params = ChernoffParams {
        n_draws,
        half_width,
        step,
        seed,
    };
    params.validate()?;
    Ok(draws_in_domain(Domain::Chernoff, 0, n_draws, &params))
}

/// Monte-Carlo quantile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChernoffTable {
    pub probs: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub params: ChernoffParams,
}

/// Probability levels stored in a table: 0.0005 steps, 0.0001 in the tails.
fn table_probs() -> Vec<f64> {
    let mut p: Vec<f64> = (1..10).map(|k| k as f64 * 1e-4).collect();
    p.extend((2..=1998).map(|k| k as f64 * 5e-4));
    p.extend((9991..10000).map(|k| k as f64 * 1e-4));
    p
}

/// Type-7 sample quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ChernoffTable {
    /// Simulates and tabulates.
    pub fn build(params: ChernoffParams) -> Result<Self> {
        let mut sample = simulate_chernoff(params.n_draws, params.half_width, params.step, params.seed)?;
        sample.sort_unstable_by(f64::total_cmp);
        Ok(Self::from_sorted(&sample, params))
    }

    fn from_sorted(sorted: &[f64], params: ChernoffParams) -> Self {
        let probs = table_probs();
        let quantiles = probs.iter().map(|&p| sorted_quantile(sorted, p)).collect();
        Self {
            probs,
            quantiles,
            params,
        }
    }

    /// Linear interpolation between the bracketing table entries.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        chernoff_quantile(self, p)
    }

    fn cache_file(dir: &Path, params: &ChernoffParams) -> PathBuf {
        let name = format!(
            "chernoff_{}_{}_{}_{}.csv",
            params.n_draws,
            params.half_width.to_bits(),
            params.step.to_bits(),
            params.seed
        );
        dir.join(name)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |source| Error::Io {
            path: "<table>".into(),
            source,
        };
        writeln!(w, "# {}", self.params.cache_key()).map_err(io)?;
        writeln!(w, "prob,quantile").map_err(io)?;
        for (p, q) in self.probs.iter().zip(&self.quantiles) {
            writeln!(w, "{p:?},{q:?}").map_err(io)?;
        }
        Ok(())
    }

    /// Reads a cache file; `None` when the key line does not match `params`.
    pub fn read<R: std::io::Read>(r: R, params: &ChernoffParams) -> Result<Option<Self>> {
        let mut lines = BufReader::new(r).lines();
        let io = |source| Error::Io {
            path: "<table>".into(),
            source,
        };
        let Some(first) = lines.next().transpose().map_err(io)? else {
            return Ok(None);
        };
        if first.trim_start_matches('#').trim() != params.cache_key() {
            return Ok(None);
        }
        let header = lines.next().transpose().map_err(io)?;
        if header.as_deref().map(str::trim) != Some("prob,quantile") {
            return Err(Error::Cache("missing prob,quantile header".into()));
        }
        let mut probs = Vec::new();
        let mut quantiles = Vec::new();
        for line in lines {
            let line = line.map_err(io)?;
            let (p, q) = line
                .split_once(',')
                .ok_or_else(|| Error::Cache(format!("malformed line `{line}`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Cache(format!("bad number `{s}`")))
            };
            probs.push(parse(p)?);
            quantiles.push(parse(q)?);
        }
        Ok(Some(Self {
            probs,
            quantiles,
            params: *params,
        }))
    }

    /// Loads the table from `dir` if cached, otherwise builds and stores it.
    pub fn load_or_build(dir: &Path, params: ChernoffParams) -> Result<Self> {
        params.validate()?;
        let path = Self::cache_file(dir, &params);
        if let Ok(file) = fs::File::open(&path) {
            if let Some(table) = Self::read(file, &params)? {
                return Ok(table);
            }
        }
        let table = Self::build(params)?;
        let io = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = path.with_extension("tmp");
        table.write(fs::File::create(&tmp).map_err(io)?)?;
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(table)
    }

    /// Uses [`CACHE_ENV`] when set, otherwise builds without caching.
    pub fn cached(params: ChernoffParams) -> Result<Self> {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) => Self::load_or_build(Path::new(&dir), params),
            None => Self::build(params),
        }
    }
}

/// Interpolated quantile of Chernoff's distribution.
pub fn chernoff_quantile(table: &ChernoffTable, p: f64) -> Result<f64> {
    let (lo, hi) = (table.probs[0], table.probs[table.probs.len() - 1]);
    if !(p >= lo && p <= hi) {
        return Err(Error::Domain {
            name: "p",
            value: p,
            expected: "must lie within the table range",
        });
    }
    let k = table.probs.partition_point(|&q| q < p);
    if table.probs[k] == p || k == 0 {
        return Ok(table.quantiles[k]);
    }
    let (p0, p1) = (table.probs[k - 1], table.probs[k]);
    let (q0, q1) = (table.quantiles[k - 1], table.quantiles[k]);
    Ok(q0 + (p - p0) / (p1 - p0) * (q1 - q0))
}

/// Norming constants for `max_{j <= L} |Z_j|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelConstants {
    pub a_l: f64,
    pub b_l_prime: f64,
    pub l: f64,
    pub lambda: f64,
    pub kappa: f64,
}

/// `a_L = 3 (2/3)^(1/3) (log L)^(2/3)` and
/// `b'_L = (1.5 log L)^(1/3) - [kappa (1.5 log L)^(1/3) + log log L / 3 + log(3/2) / 3 - log(2 lambda)] / a_L`.
///
/// `lambda`, `kappa` are the constants in the tail
/// `f_Z(z) ~ 2 lambda |z| exp(-2|z|^3/3 - kappa |z|)`.
pub fn gumbel_constants(l: f64, lambda: f64, kappa: f64) -> Result<GumbelConstants> {
    if !(l >= 2.0 || (l - std::f64::consts::E).abs() < 1e-12) || !l.is_finite() {
        return Err(Error::Domain {
            name: "L",
            value: l,
            expected: "must be at least 2",
        });
    }
    check_positive("lambda", lambda)?;
    check_positive("kappa", kappa)?;
    let log_l = l.ln();
    let a_l = 3.0 * (2.0f64 / 3.0).cbrt() * log_l.powf(2.0 / 3.0);
    let root = (1.5 * log_l).cbrt();
    let bracket = kappa * root + log_l.ln() / 3.0 + 1.5f64.ln() / 3.0 - (2.0 * lambda).ln();
    Ok(GumbelConstants {
        a_l,
        b_l_prime: root - bracket / a_l,
        l,
        lambda,
        kappa,
    })
}

/// Standard Gumbel distribution function `exp(-exp(-z))`.
pub fn gumbel_cdf(z: f64) -> f64 {
    (-(-z).exp()).exp()
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_unstable_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelCheck {
    pub constants: GumbelConstants,
    pub replicates: usize,
    pub ks_distance: f64,
}

/// Simulates `replicates` maxima of `l` independent `|Z|` draws, normalises
/// them with [`gumbel_constants`] and reports the KS distance to the Gumbel law.
pub fn gumbel_convergence_check(
    replicates: usize,
    l: usize,
    lambda: f64,
    kappa: f64,
    params: &ChernoffParams,
) -> Result<GumbelCheck> {
    let constants = gumbel_constants(l as f64, lambda, kappa)?;
    let maxima = simulate_abs_maxima(replicates, l, params)?;
    Ok(check_maxima(maxima, constants))
}

/// `replicates` draws of `max_{j <= l} |Z_j|`.
pub fn simulate_abs_maxima(replicates: usize, l: usize, params: &ChernoffParams) -> Result<Vec<f64>> {
    params.validate()?;
    if replicates == 0 || l == 0 {
        return Err(Error::Domain {
            name: "replicates",
            value: replicates.min(l) as f64,
            expected: "replicates and L must be positive",
        });
    }
    let steps = (params.half_width / params.step).round() as usize;
    Ok((0..(replicates * l) as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(params.seed, Domain::Gumbel, i);
            draw(&mut rng, steps, params.step).abs()
        })
        .collect::<Vec<_>>()
        .chunks(l)
        .map(|c| c.iter().cloned().fold(0.0, f64::max))
        .collect())
}

/// [`gumbel_convergence_check`] for several `L` from one simulation: each
/// replicate is a block of `max(ls)` draws and smaller `L` use a prefix of
/// the block.
pub fn gumbel_convergence_study(
    replicates: usize,
    ls: &[usize],
    lambda: f64,
    kappa: f64,
    params: &ChernoffParams,
) -> Result<Vec<GumbelCheck>> {
    let constants = ls
        .iter()
        .map(|&l| gumbel_constants(l as f64, lambda, kappa))
        .collect::<Result<Vec<_>>>()?;
    let block = ls.iter().copied().max().unwrap_or(0);
    let draws = simulate_abs_maxima(replicates * block, 1, params)?;
    Ok(ls
        .iter()
        .zip(constants)
        .map(|(&l, c)| {
            let maxima = draws
                .chunks(block)
                .map(|b| b[..l].iter().cloned().fold(0.0, f64::max))
                .collect();
            check_maxima(maxima, c)
        })
        .collect())
}

/// KS distance of pre-simulated maxima under the given norming constants.
pub fn check_maxima(maxima: Vec<f64>, constants: GumbelConstants) -> GumbelCheck {
    let mut normalised: Vec<f64> = maxima
        .iter()
        .map(|m| constants.a_l * (m - constants.b_l_prime))
        .collect();
    GumbelCheck {
        constants,
        replicates: maxima.len(),
        ks_distance: ks_distance(&mut normalised, gumbel_cdf),
    }
}

/// Asymptotic tail constants of Chernoff's density: `2 lambda = 4^(4/3) / Ai'(a1)`
/// and `kappa = -2^(1/3) a1`, where `a1 ~ -2.33811` is the largest zero of
/// the Airy function `Ai` and `Ai'(a1) ~ 0.70121`.
pub fn groeneboom_tail_constants() -> (f64, f64) {
    const AIRY_ZERO: f64 = -2.338_107_410_459_767;
    const AIRY_PRIME_AT_ZERO: f64 = 0.701_210_503_174_691_7;
    let lambda = 4f64.powf(4.0 / 3.0) / AIRY_PRIME_AT_ZERO / 2.0;
    let kappa = -2f64.cbrt() * AIRY_ZERO;
    (lambda, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ChernoffParams {
        ChernoffParams {
            n_draws: 4000,
            half_width: 2.5,
            step: 1e-2,
            seed: 11,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_chernoff(200, 2.5, 1e-2, 5).unwrap();
        let b = simulate_chernoff(200, 2.5, 1e-2, 5).unwrap();
        assert_eq!(a, b);
        let c = simulate_chernoff(200, 2.5, 1e-2, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_stability() {
        // Draw i depends only on (seed, i).
        let a = simulate_chernoff(50, 2.5, 1e-2, 5).unwrap();
        let b = simulate_chernoff(80, 2.5, 1e-2, 5).unwrap();
        assert_eq!(a[..], b[..50]);
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let s = simulate_chernoff(small().n_draws, 2.5, 1e-2, 11).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 3.0 * 0.52 / (s.len() as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn parameter_domain() {
        assert!(simulate_chernoff(10, 0.0, 1e-3, 0).is_err());
        assert!(simulate_chernoff(10, 1.0, 2.0, 0).is_err());
        assert!(simulate_chernoff(0, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn table_interpolation_and_range() {
        let table = ChernoffTable {
            probs: vec![0.1, 0.5, 0.9],
            quantiles: vec![-1.0, 0.0, 2.0],
            params: small(),
        };
        assert_eq!(chernoff_quantile(&table, 0.5).unwrap(), 0.0);
        assert!((chernoff_quantile(&table, 0.7).unwrap() - 1.0).abs() < 1e-12);
        assert!((chernoff_quantile(&table, 0.3).unwrap() + 0.5).abs() < 1e-12);
        assert!(chernoff_quantile(&table, 0.95).is_err());
        assert!(chernoff_quantile(&table, 0.05).is_err());
    }

    #[test]
    fn table_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = ChernoffParams {
            n_draws: 500,
            ..small()
        };
        let built = ChernoffTable::load_or_build(dir.path(), params).unwrap();
        let loaded = ChernoffTable::load_or_build(dir.path(), params).unwrap();
        assert_eq!(built, loaded);
        let other = ChernoffParams { seed: 99, ..params };
        let mut buf = Vec::new();
        built.write(&mut buf).unwrap();
        assert!(ChernoffTable::read(buf.as_slice(), &other).unwrap().is_none());
        assert!(String::from_utf8(buf).unwrap().lines().nth(1) == Some("prob,quantile"));
    }

    #[test]
    fn quantiles_are_monotone_and_roughly_odd() {
        let table = ChernoffTable::build(small()).unwrap();
        assert!(table.quantiles.windows(2).all(|w| w[1] >= w[0]));
        let med = table.quantile(0.5).unwrap();
        assert!(med.abs() < 0.03, "median {med}");
        let hi = table.quantile(0.9).unwrap();
        let lo = table.quantile(0.1).unwrap();
        assert!((hi + lo).abs() < 0.06, "{lo} {hi}");
    }

    #[test]
    fn gumbel_constants_closed_form() {
        let g = gumbel_constants(std::f64::consts::E, 1.0, 1.0).unwrap();
        assert!((g.a_l - 3.0 * (2.0f64 / 3.0).cbrt()).abs() < 1e-12);
        assert!((g.a_l - 2.6207).abs() < 1e-4);

        let (lambda, kappa) = (4.5, 2.9);
        for l in [2.0, 10.0, 50.0, 1000.0] {
            let a = gumbel_constants(l, lambda, kappa).unwrap();
            let b = gumbel_constants(l * l, lambda, kappa).unwrap();
            assert!((b.a_l / a.a_l - 2f64.powf(2.0 / 3.0)).abs() < 1e-12);
            let doubled = gumbel_constants(l, 2.0 * lambda, kappa).unwrap();
            assert!((doubled.b_l_prime - a.b_l_prime - 2f64.ln() / a.a_l).abs() < 1e-12);
            assert!(a.a_l > 0.0);
        }
        assert!(gumbel_constants(10.0, 1.0, 2.0).unwrap().a_l < gumbel_constants(20.0, 1.0, 2.0).unwrap().a_l);
        assert!(gumbel_constants(1.5, 1.0, 1.0).is_err());
        assert!(gumbel_constants(10.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn gumbel_reference_cdf() {
        assert!((gumbel_cdf(0.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((gumbel_cdf(0.0) - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let mut s: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                -(-u.ln()).ln()
            })
            .collect();
        let d = ks_distance(&mut s, gumbel_cdf);
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn tail_constants() {
        let (lambda, kappa) = groeneboom_tail_constants();
        assert!((lambda - 4.5276).abs() < 1e-3, "{lambda}");
        assert!((kappa - 2.9458).abs() < 1e-3, "{kappa}");
    }
}
