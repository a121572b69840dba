//! Exact linear quantile regression.
//!
//! The check-loss problem `min_b sum_i rho_tau(y_i - x_i'b)` is solved as a
//! linear program by a vertex-to-vertex simplex. A vertex is a basis of `d`
//! observations that the fitted hyperplane interpolates. From a vertex, each
//! edge releases one basic observation; the entering observation is found by
//! an exact line search over the breakpoints of the piecewise-linear loss
//! along that edge. Every pivot strictly lowers the objective, so the method
//! terminates, and the final basis satisfies the subgradient optimality
//! condition `-tau <= z_k <= 1 - tau` for all basic observations.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{dot, Dataset, DesignPoint};
use crate::error::{check_prob, Error, Result};

/// Check function `rho_tau(u) = (tau - 1{u <= 0}) u`.
#[inline]
pub fn check_loss(tau: f64, u: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Check-loss objective of `beta` on `data`.
pub fn objective(data: &Dataset, tau: f64, beta: &[f64]) -> f64 {
    data.y()
        .iter()
        .zip(data.rows())
        .map(|(&y, row)| check_loss(tau, y - dot(row, beta)))
        .sum()
}

/// Absolute tolerance under which a residual counts as an exact fit.
#[inline]
pub fn tie_tolerance(y: f64) -> f64 {
    1e-9 * (1.0 + y.abs())
}

/// Solution of the check-loss problem at one quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrFit {
    pub tau: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    /// Observations interpolated by the fit (`y_i = x_i'beta` up to the tie tolerance).
    pub active_set: Vec<usize>,
    /// Simplex pivots used for this level.
    pub pivots: usize,
}

/// Vertex simplex for the check-loss LP. Keeps its basis between calls, so
/// solving an increasing sequence of levels warm-starts each from the last.
pub struct SimplexSolver<'a> {
    data: &'a Dataset,
    basis: Vec<usize>,
    inverse: Vec<f64>,
    max_pivots: usize,
    residuals: Vec<f64>,
    skip: Vec<bool>,
    candidates: Vec<(f64, f64, usize)>,
}

impl<'a> SimplexSolver<'a> {
    /// Picks a starting basis. Fails when `X` is rank deficient.
    pub fn new(data: &'a Dataset) -> Result<Self> {
        let basis = initial_basis(data)?;
        let inverse = basis_inverse(data, &basis).ok_or(Error::RankDeficient {
            rank: data.d() - 1,
            d: data.d(),
        })?;
        Ok(Self {
            data,
            basis,
            inverse,
            max_pivots: 1000 + 50 * data.n(),
            residuals: vec![0.0; data.n()],
            skip: vec![false; data.n()],
            candidates: Vec::with_capacity(data.n()),
        })
    }

    pub fn with_max_pivots(mut self, max_pivots: usize) -> Self {
        self.max_pivots = max_pivots;
        self
    }

    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    fn beta(&self) -> Vec<f64> {
        let d = self.data.d();
        let y = self.data.y();
        (0..d)
            .map(|r| (0..d).map(|c| self.inverse[r * d + c] * y[self.basis[c]]).sum())
            .collect()
    }

    /// Solves at `tau`, starting from the current basis.
    pub fn solve(&mut self, tau: f64) -> Result<QrFit> {
        check_prob("tau", tau)?;
        let mut pivots = 0;
        let mut visited = HashSet::new();
        loop {
            let scan = self.scan(tau);
            let edge = match scan.edge {
                Some(edge) => edge,
                None if scan.zeros.is_empty() => break,
                None => match self.escape_degenerate(tau, &scan.zeros, &mut visited) {
                    Some(edge) => edge,
                    None => break,
                },
            };
            self.step(edge)?;
            pivots += 1;
            if pivots >= self.max_pivots {
                let beta = self.beta();
                return Err(Error::NoConvergence {
                    iterations: pivots,
                    objective: objective(self.data, tau, &beta),
                    beta,
                });
            }
        }
        let beta = self.beta();
        let y = self.data.y();
        let mut obj = 0.0;
        let mut active_set = Vec::new();
        for (i, row) in self.data.rows().enumerate() {
            let r = y[i] - dot(row, &beta);
            obj += check_loss(tau, r);
            if r.abs() <= tie_tolerance(y[i]) {
                active_set.push(i);
            }
        }
        Ok(QrFit {
            tau,
            beta,
            objective: obj,
            active_set,
            pivots,
        })
    }

    /// Residuals, exact-fit set and the steepest descent edge at the current vertex.
    fn scan(&mut self, tau: f64) -> Scan {
        let data = self.data;
        let d = data.d();
        let y = data.y();
        let beta = self.beta();

        // Gradient contribution of strictly positive / negative residuals,
        // and the non-basic exact fits (kinks at the current vertex).
        let mut grad = vec![0.0; d];
        let mut zeros = Vec::new();
        self.skip.iter_mut().for_each(|s| *s = false);
        for &b in &self.basis {
            self.skip[b] = true;
        }
        for (i, row) in data.rows().enumerate() {
            let r = y[i] - dot(row, &beta);
            self.residuals[i] = r;
            if self.skip[i] {
                continue;
            }
            if r.abs() <= tie_tolerance(y[i]) {
                zeros.push(i);
                self.skip[i] = true;
                continue;
            }
            let psi = if r > 0.0 { tau } else { tau - 1.0 };
            for (g, xv) in grad.iter_mut().zip(row) {
                *g += psi * xv;
            }
        }

        // Directional derivative along each of the 2d edges.
        let mut edge: Option<Edge> = None;
        for k in 0..d {
            let z: f64 = (0..d).map(|j| grad[j] * self.inverse[j * d + k]).sum();
            for sign in [1.0, -1.0] {
                let mut slope = if sign > 0.0 { 1.0 - tau - z } else { tau + z };
                for &i in &zeros {
                    let u = -sign * column_dot(data.row(i), &self.inverse, d, k);
                    slope += check_loss(tau, u);
                }
                let scale = 1e-12 * (1.0 + z.abs());
                if slope < -scale && edge.is_none_or(|e| slope < e.slope) {
                    edge = Some(Edge { slope, k, sign });
                }
            }
        }
        Scan { edge, zeros }
    }

    /// Moves along `edge` to the breakpoint where the loss stops decreasing.
    fn step(&mut self, edge: Edge) -> Result<()> {
        let data = self.data;
        let d = data.d();
        let direction: Vec<f64> = (0..d).map(|j| edge.sign * self.inverse[j * d + edge.k]).collect();

        self.candidates.clear();
        for (i, row) in data.rows().enumerate() {
            if self.skip[i] {
                continue;
            }
            let a = dot(row, &direction);
            let r = self.residuals[i];
            if a != 0.0 && (r > 0.0) == (a > 0.0) {
                self.candidates.push((r / a, a.abs(), i));
            }
        }
        self.candidates
            .sort_unstable_by(|p, q| p.0.total_cmp(&q.0).then(p.2.cmp(&q.2)));
        let mut running = edge.slope;
        let mut entering = None;
        for &(_, w, i) in &self.candidates {
            running += w;
            if running >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        // The loss is bounded below, so a descent edge always meets a breakpoint
        // that turns the slope; rounding can leave it a hair short.
        let entering = entering
            .or_else(|| self.candidates.last().map(|c| c.2))
            .ok_or(Error::Singular {
                smallest_singular_value: 0.0,
            })?;

        let previous = self.basis[edge.k];
        self.basis[edge.k] = entering;
        match basis_inverse(data, &self.basis) {
            Some(inv) => {
                self.inverse = inv;
                Ok(())
            }
            None => {
                self.basis[edge.k] = previous;
                Err(Error::Singular {
                    smallest_singular_value: 0.0,
                })
            }
        }
    }

    /// At a degenerate vertex (more than `d` exact fits) the `2d` edges of one
    /// basis need not contain a descent direction even when one exists. Swap
    /// exact-fit observations into the basis, smallest index first, until a
    /// basis with a descent edge turns up. Bases already tried are skipped.
    fn escape_degenerate(
        &mut self,
        tau: f64,
        zeros: &[usize],
        visited: &mut HashSet<Vec<usize>>,
    ) -> Option<Edge> {
        let mut key = self.basis.clone();
        key.sort_unstable();
        visited.insert(key);
        let original = (self.basis.clone(), self.inverse.clone());
        for &i in zeros {
            for k in 0..self.data.d() {
                let mut trial = original.0.clone();
                trial[k] = i;
                let mut key = trial.clone();
                key.sort_unstable();
                if !visited.insert(key) {
                    continue;
                }
                let Some(inv) = basis_inverse(self.data, &trial) else {
                    continue;
                };
                self.basis = trial;
                self.inverse = inv;
                if let Some(edge) = self.scan(tau).edge {
                    return Some(edge);
                }
            }
        }
        self.basis = original.0;
        self.inverse = original.1;
        self.scan(tau);
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    slope: f64,
    k: usize,
    sign: f64,
}

struct Scan {
    edge: Option<Edge>,
    zeros: Vec<usize>,
}

#[inline]
fn column_dot(row: &[f64], inverse: &[f64], d: usize, k: usize) -> f64 {
    (0..d).map(|j| row[j] * inverse[j * d + k]).sum()
}

/// Greedy selection of `d` well-separated independent rows (Gram-Schmidt with
/// largest-remainder pivoting).
fn initial_basis(data: &Dataset) -> Result<Vec<usize>> {
    let d = data.d();
    let n = data.n();
    let mut rem: Vec<Vec<f64>> = data.rows().map(|r| r.to_vec()).collect();
    let scale = rem
        .iter()
        .map(|r| dot(r, r))
        .fold(0.0, f64::max)
        .sqrt();
    let mut basis = Vec::with_capacity(d);
    for step in 0..d {
        let (best, norm) = (0..n)
            .filter(|i| !basis.contains(i))
            .map(|i| (i, dot(&rem[i], &rem[i]).sqrt()))
            .fold((usize::MAX, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if best == usize::MAX || norm <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient { rank: step, d });
        }
        let q: Vec<f64> = rem[best].iter().map(|v| v / norm).collect();
        for r in rem.iter_mut() {
            let c = dot(r, &q);
            for (a, b) in r.iter_mut().zip(&q) {
                *a -= c * b;
            }
        }
        basis.push(best);
    }
    Ok(basis)
}

fn basis_inverse(data: &Dataset, basis: &[usize]) -> Option<Vec<f64>> {
    let d = data.d();
    let mut flat = Vec::with_capacity(d * d);
    for &i in basis {
        flat.extend_from_slice(data.row(i));
    }
    let m = DMatrix::from_row_slice(d, d, &flat);
    let inv = m.try_inverse()?;
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = inv[(r, c)];
        }
    }
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Solves the check-loss problem at a single level.
pub fn solve_qr(data: &Dataset, tau: f64) -> Result<QrFit> {
    check_prob("tau", tau)?;
    SimplexSolver::new(data)?.solve(tau)
}

/// Per-level solver metadata kept alongside the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub objective: f64,
    pub active_set: Vec<usize>,
    pub pivots: usize,
}

/// Slope vectors on a strictly increasing grid of quantile levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileProcess {
    taus: Vec<f64>,
    betas: Vec<f64>,
    d: usize,
    fits: Vec<FitInfo>,
}

impl QuantileProcess {
    /// Assembles a process from precomputed slopes (one row per level).
    pub fn from_parts(taus: Vec<f64>, betas: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(&taus)?;
        if betas.len() != taus.len() {
            return Err(Error::Dimension("one slope vector per grid point required".into()));
        }
        let d = betas.first().map_or(0, Vec::len);
        if d == 0 || betas.iter().any(|b| b.len() != d) {
            return Err(Error::Dimension("slope vectors must share a positive length".into()));
        }
        let fits = vec![
            FitInfo {
                objective: f64::NAN,
                active_set: Vec::new(),
                pivots: 0,
            };
            taus.len()
        ];
        Ok(Self {
            taus,
            betas: betas.concat(),
            d,
            fits,
        })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn beta(&self, k: usize) -> &[f64] {
        &self.betas[k * self.d..(k + 1) * self.d]
    }

    pub fn fits(&self) -> &[FitInfo] {
        &self.fits
    }

    pub fn tau_min(&self) -> f64 {
        self.taus[0]
    }

    pub fn tau_max(&self) -> f64 {
        self.taus[self.taus.len() - 1]
    }

    /// `x' beta(tau_k)` for every grid index.
    pub fn curve(&self, x: &DesignPoint) -> Result<Vec<f64>> {
        x.check_dim(self.d)?;
        Ok((0..self.len()).map(|k| x.dot(self.beta(k))).collect())
    }

    /// Index of the grid point nearest to `tau`; ties go to the lower point.
    pub fn nearest_index(&self, tau: f64) -> usize {
        let k = self.taus.partition_point(|&t| t < tau);
        if k == 0 {
            return 0;
        }
        if k == self.taus.len() {
            return k - 1;
        }
        if tau - self.taus[k - 1] <= self.taus[k] - tau {
            k - 1
        } else {
            k
        }
    }

    /// Writes `tau,beta_1,...,beta_d` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["tau".to_string()];
        header.extend((1..=self.d).map(|j| format!("beta_{j}")));
        w.write_record(&header)?;
        for (k, tau) in self.taus.iter().enumerate() {
            let mut rec = vec![format!("{tau:?}")];
            rec.extend(self.beta(k).iter().map(|b| format!("{b:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    /// Reads the format produced by [`QuantileProcess::write_csv`].
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut taus = Vec::new();
        let mut betas = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    c.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
                        row: r + 1,
                        column: if j == 0 { "tau".into() } else { format!("beta_{j}") },
                        value: c.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            taus.push(vals[0]);
            betas.push(vals[1..].to_vec());
        }
        Self::from_parts(taus, betas)
    }
}

pub(crate) fn check_grid(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::Dimension("empty tau grid".into()));
    }
    for &t in taus {
        check_prob("tau", t)?;
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Dimension("tau grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `count` equally spaced levels on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|k| if k + 1 == count { hi } else { lo + step * k as f64 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathOptions {
    /// Carry the simplex basis from one level to the next (sequential).
    /// When off, levels are solved independently and in parallel.
    pub warm_start: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { warm_start: true }
    }
}

/// Quantile process over `taus` with warm starts.
pub fn solve_path(data: &Dataset, taus: &[f64]) -> Result<QuantileProcess> {
    solve_path_with(data, taus, PathOptions::default())
}

pub fn solve_path_with(data: &Dataset, taus: &[f64], opts: PathOptions) -> Result<QuantileProcess> {
    check_grid(taus)?;
    let annotate = |tau: f64| move |e: Error| Error::AtTau {
        tau,
        source: Box::new(e),
    };
    let fits: Vec<QrFit> = if opts.warm_start {
        let mut solver = SimplexSolver::new(data)?;
        taus.iter()
            .map(|&t| solver.solve(t).map_err(annotate(t)))
            .collect::<Result<_>>()?
    } else {
        taus.par_iter()
            .map(|&t| solve_qr(data, t).map_err(annotate(t)))
            .collect::<Result<_>>()?
    };
    let d = data.d();
    let mut betas = Vec::with_capacity(taus.len() * d);
    let mut info = Vec::with_capacity(taus.len());
    for f in fits {
        betas.extend_from_slice(&f.beta);
        info.push(FitInfo {
            objective: f.objective,
            active_set: f.active_set,
            pivots: f.pivots,
        });
    }
    Ok(QuantileProcess {
        taus: taus.to_vec(),
        betas,
        d,
        fits: info,
    })
}

/// `x' beta(tau*)` where `tau*` is the grid point nearest to `tau`.
pub fn predict_quantile(process: &QuantileProcess, x: &DesignPoint, tau: f64) -> Result<f64> {
    x.check_dim(process.d())?;
    if !(tau >= process.tau_min() && tau <= process.tau_max()) {
        return Err(Error::Domain {
            name: "tau",
            value: tau,
            expected: "must lie within the grid range",
        });
    }
    Ok(x.dot(process.beta(process.nearest_index(tau))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_median() {
        let data = Dataset::intercept_only(vec![1.0, 2.0, 3.0]).unwrap();
        let fit = solve_qr(&data, 0.5).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-12);
        assert!((fit.objective - 1.0).abs() < 1e-12);
        assert_eq!(fit.active_set, vec![1]);
    }

    #[test]
    fn intercept_only_lower_quartile() {
        // Enumerate the four one-point fits.
        let y = [1.0, 2.0, 3.0, 10.0];
        let losses: Vec<f64> = y
            .iter()
            .map(|&b| y.iter().map(|&v| check_loss(0.25, v - b)).sum())
            .collect();
        let (argmin, _) = losses
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |a, (i, &l)| if l < a.1 { (i, l) } else { a });
        assert_eq!(y[argmin], 1.0);

        let data = Dataset::intercept_only(y.to_vec()).unwrap();
        let fit = solve_qr(&data, 0.25).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tau_domain() {
        let data = Dataset::intercept_only(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(solve_qr(&data, 0.0), Err(Error::Domain { .. })));
        assert!(matches!(solve_qr(&data, 1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn rank_deficient_design() {
        let data = Dataset::new(
            vec![1.0, 2.0, 3.0],
            vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]],
            vec!["(intercept)".into(), "x".into()],
        )
        .unwrap();
        assert!(matches!(solve_qr(&data, 0.5), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn iteration_cap_reports_incumbent() {
        let y: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64).collect();
        let data = Dataset::intercept_only(y).unwrap();
        let err = SimplexSolver::new(&data)
            .unwrap()
            .with_max_pivots(1)
            .solve(0.3);
        // Either solved in one pivot or the cap error carries a finite incumbent.
        if let Err(Error::NoConvergence { beta, objective, .. }) = err {
            assert_eq!(beta.len(), 1);
            assert!(objective.is_finite());
        }
    }

    #[test]
    fn path_on_intercept_only() {
        let data = Dataset::intercept_only(vec![1.0, 2.0, 3.0, 10.0]).unwrap();
        let p = solve_path(&data, &[0.25, 0.5, 0.75]).unwrap();
        // Sample quantiles: the 0.5 level is not unique on even n; any minimiser in [2, 3].
        assert!((p.beta(0)[0] - 1.0).abs() < 1e-12);
        assert!(p.beta(1)[0] >= 2.0 - 1e-12 && p.beta(1)[0] <= 3.0 + 1e-12);
        assert!((p.beta(2)[0] - 3.0).abs() < 1e-12);
        let m = objective(&data, 0.5, p.beta(1));
        assert!((m - objective(&data, 0.5, &[2.0])).abs() < 1e-12);
    }

    #[test]
    fn singleton_path_matches_single_solve() {
        let data = Dataset::intercept_only(vec![4.0, 1.0, 7.0, 2.0, 9.0]).unwrap();
        let p = solve_path(&data, &[0.5]).unwrap();
        let f = solve_qr(&data, 0.5).unwrap();
        assert_eq!(p.beta(0), f.beta.as_slice());
    }

    #[test]
    fn grid_must_increase() {
        let data = Dataset::intercept_only(vec![4.0, 1.0, 7.0]).unwrap();
        assert!(solve_path(&data, &[0.5, 0.5]).is_err());
        assert!(solve_path(&data, &[0.6, 0.5]).is_err());
    }

    #[test]
    fn nearest_grid_rule() {
        let p = QuantileProcess::from_parts(
            vec![0.25, 0.5, 0.75],
            vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]],
        )
        .unwrap();
        let e1 = DesignPoint::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(predict_quantile(&p, &e1, 0.49).unwrap(), 2.0);
        assert_eq!(predict_quantile(&p, &e1, 0.375).unwrap(), 1.0);
        assert_eq!(predict_quantile(&p, &e1, 0.75).unwrap(), 3.0);
        assert!(predict_quantile(&p, &e1, 0.2).is_err());
        assert!(predict_quantile(&p, &e1, 0.8).is_err());
    }

    #[test]
    fn inner_product_prediction() {
        let p = QuantileProcess::from_parts(vec![0.5], vec![vec![1.0, 3.0]]).unwrap();
        let x = DesignPoint::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(predict_quantile(&p, &x, 0.5).unwrap(), 7.0);
    }

    #[test]
    fn process_csv_round_trip() {
        let p = QuantileProcess::from_parts(
            vec![0.1, 0.2],
            vec![vec![1.5, -2.0], vec![0.125, 3e-7]],
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("tau,beta_1,beta_2\n"));
        let back = QuantileProcess::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.taus(), p.taus());
        assert_eq!(back.beta(1), p.beta(1));
    }

    #[test]
    fn uniform_grid_endpoints() {
        let g = uniform_grid(0.05, 0.95, 100);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[99], 0.95);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
