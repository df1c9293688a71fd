//! Phase-type distributions.
//!
//! A [`PhaseType`] is the absorption time of a finite continuous-time Markov
//! chain: service starts in phase `j` with probability `alpha[j]`, the
//! transient generator `T` drives phase changes, and the exit vector
//! `T0 = -T e` holds the completion rate of every phase.
//!
//! Values are checked once on construction and are immutable afterwards.

use std::collections::VecDeque;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Tolerance on probability sums and row-sum identities.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Nonnegative row vector indexed by service phase.
///
/// Holds sub-probability masses such as the stationary phase law or the
/// fraction of servers with at least `k` customers whose job is in phase `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(Vec<f64>);

impl PhaseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(x) = entries.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidParameter(format!("phase vector entry {x} is negative or not finite")));
        }
        let total: f64 = entries.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!("phase vector mass {total} exceeds one")));
        }
        Ok(Self(entries))
    }

    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    /// Aggregate mass `v e`.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Entrywise power `v^{⊙d}`.
    pub fn hadamard_pow(&self, d: u32) -> Vec<f64> {
        self.0.iter().map(|x| x.powi(d as i32)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PhaseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Outflow of one phase: total rate and the cumulative law of the next move.
/// Slot `m` of `cdf` is absorption.
#[derive(Debug, Clone)]
struct Jumps {
    rate: f64,
    cdf: Vec<f64>,
}

/// A validated phase-type representation `(alpha, T)` of order `m`.
#[derive(Debug, Clone)]
pub struct PhaseType {
    alpha: Vec<f64>,
    t: DMatrix<f64>,
    exit: Vec<f64>,
    alpha_cdf: Vec<f64>,
    jumps: Vec<Jumps>,
}

impl PartialEq for PhaseType {
    fn eq(&self, other: &Self) -> bool {
        self.alpha == other.alpha && self.t == other.t
    }
}

impl PhaseType {
    /// Validates `(alpha, T)` given `T` as a list of rows.
    pub fn new(alpha: Vec<f64>, t: Vec<Vec<f64>>) -> Result<Self> {
        let m = t.len();
        if t.iter().any(|row| row.len() != m) {
            return Err(Error::Dimension("T must be square".into()));
        }
        let flat: Vec<f64> = t.into_iter().flatten().collect();
        Self::from_matrix(alpha, DMatrix::from_row_slice(m, m, &flat))
    }

    pub fn from_matrix(alpha: Vec<f64>, t: DMatrix<f64>) -> Result<Self> {
        let m = alpha.len();
        if m == 0 {
            return Err(Error::Dimension("order must be at least one".into()));
        }
        if t.nrows() != m || t.ncols() != m {
            return Err(Error::Dimension(format!("alpha has length {m} but T is {}x{}", t.nrows(), t.ncols())));
        }

        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::NotStochastic(format!("negative entry in {alpha:?}")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic(format!("entries sum to {sum}")));
        }

        for i in 0..m {
            for j in 0..m {
                let v = t[(i, j)];
                if !v.is_finite() {
                    return Err(Error::SignPattern(format!("T[{i}][{j}] is not finite")));
                }
                if i == j && v >= 0.0 {
                    return Err(Error::SignPattern(format!("diagonal T[{i}][{i}] = {v} must be < 0")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::SignPattern(format!("off-diagonal T[{i}][{j}] = {v} must be >= 0")));
                }
            }
        }

        let mut exit = Vec::with_capacity(m);
        for i in 0..m {
            let row_sum: f64 = t.row(i).iter().sum();
            let scale = -t[(i, i)];
            if row_sum > STOCHASTIC_TOL * scale {
                return Err(Error::SignPattern(format!("row {i} sums to {row_sum}; the exit rate would be negative")));
            }
            exit.push(-row_sum);
        }
        if !exit.iter().any(|&x| x > 0.0) {
            return Err(Error::SignPattern("exit vector T0 = -Te is identically zero".into()));
        }

        let ph = Self {
            alpha_cdf: cumulative(&alpha),
            jumps: (0..m)
                .map(|i| {
                    let rate = -t[(i, i)];
                    let mut w: Vec<f64> = (0..m).map(|j| if i == j { 0.0 } else { t[(i, j)] }).collect();
                    w.push(exit[i].max(0.0));
                    Jumps { rate, cdf: cumulative(&w) }
                })
                .collect(),
            alpha,
            t,
            exit,
        };
        ph.check_structure()?;
        Ok(ph)
    }

    /// `T` is invertible iff absorption is reachable from every phase; the
    /// restart generator must then be irreducible on the phases reachable
    /// from `alpha`.
    fn check_structure(&self) -> Result<()> {
        let m = self.order();
        let t_edge = |i: usize, j: usize| i != j && self.t[(i, j)] > 0.0;

        let mut absorbs: Vec<bool> = self.exit.iter().map(|&x| x > 0.0).collect();
        let mut queue: VecDeque<usize> = (0..m).filter(|&i| absorbs[i]).collect();
        while let Some(j) = queue.pop_front() {
            for i in 0..m {
                if !absorbs[i] && t_edge(i, j) {
                    absorbs[i] = true;
                    queue.push_back(i);
                }
            }
        }
        if let Some(phase) = absorbs.iter().position(|ok| !ok) {
            return Err(Error::Singular { phase });
        }

        let q_edge = |i: usize, j: usize| t_edge(i, j) || (self.exit[i] > 0.0 && self.alpha[j] > 0.0);
        let starts: Vec<usize> = (0..m).filter(|&j| self.alpha[j] > 0.0).collect();
        let reachable = bfs(m, &starts, q_edge, None);
        let members: Vec<usize> = (0..m).filter(|&i| reachable[i]).collect();
        let root = members[0];
        let forward = bfs(m, &[root], q_edge, Some(&reachable));
        let backward = bfs(m, &[root], |i, j| q_edge(j, i), Some(&reachable));
        if members.iter().all(|&i| forward[i] && backward[i]) {
            Ok(())
        } else {
            Err(Error::Reducible)
        }
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Exit vector `T0 = -T e`.
    pub fn exit(&self) -> &[f64] {
        &self.exit
    }

    /// `T` as a list of rows.
    pub fn generator_rows(&self) -> Vec<Vec<f64>> {
        (0..self.order()).map(|i| self.t.row(i).iter().copied().collect()).collect()
    }

    /// `(-T)^{-1} e`, the mean remaining service time from each phase.
    pub fn mean_time_to_absorption(&self) -> DVector<f64> {
        let m = self.order();
        (-&self.t).lu().solve(&DVector::from_element(m, 1.0)).expect("validated sub-generator is invertible")
    }

    /// Mean service time `-alpha T^{-1} e`.
    pub fn mean(&self) -> f64 {
        dot(&self.alpha, self.mean_time_to_absorption().as_slice())
    }

    /// Raw moment `E[X^n] = n! alpha (-T)^{-n} e`.
    pub fn moment(&self, n: u32) -> f64 {
        assert!(n >= 1, "moments start at n = 1");
        let m = self.order();
        let lu = (-&self.t).lu();
        let mut x = DVector::from_element(m, 1.0);
        let mut factorial = 1.0;
        for j in 1..=n {
            x = lu.solve(&x).expect("validated sub-generator is invertible");
            factorial *= f64::from(j);
        }
        factorial * dot(&self.alpha, x.as_slice())
    }

    /// Stationary law `omega` of the restart generator `T + T0 alpha`.
    ///
    /// One balance equation is replaced by `omega e = 1` and the system is
    /// solved densely.
    pub fn stationary_phase_vector(&self) -> Result<PhaseVector> {
        let m = self.order();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                // a = (T + T0 alpha)^T
                a[(j, i)] = self.t[(i, j)] + self.exit[i] * self.alpha[j];
            }
        }
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(m);
        rhs[m - 1] = 1.0;
        let omega = a.lu().solve(&rhs).ok_or(Error::Reducible)?;
        let mut entries: Vec<f64> = omega.iter().map(|&x| if x < 0.0 && x > -1e-12 { 0.0 } else { x }).collect();
        if entries.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Reducible);
        }
        let total: f64 = entries.iter().sum();
        entries.iter_mut().for_each(|x| *x /= total);
        Ok(PhaseVector(entries))
    }

    /// Service rate `mu = omega T0`; agrees with `1 / mean()`.
    pub fn service_rate(&self) -> f64 {
        let omega = self.stationary_phase_vector().expect("validated representation");
        dot(&omega, &self.exit)
    }

    /// Phase-mixing factor `theta = omega^{⊙d} e`.
    pub fn theta(&self, d: u32) -> f64 {
        if d == 1 {
            return 1.0;
        }
        let omega = self.stationary_phase_vector().expect("validated representation");
        omega.hadamard_pow(d).iter().sum()
    }

    /// Residual service time of a job found in progress: `(omega, T)`.
    pub fn residual(&self) -> PhaseType {
        let omega = self.stationary_phase_vector().expect("validated representation");
        Self::from_matrix(omega.into_inner(), self.t.clone()).expect("omega is a probability vector")
    }

    /// Draws the phase a new service starts in.
    pub fn initial_phase<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        pick(&self.alpha_cdf, rng)
    }

    /// Total outflow rate `-T[i][i]` of a phase.
    pub fn holding_rate(&self, phase: usize) -> f64 {
        self.jumps[phase].rate
    }

    /// Draws where a job leaves `phase` for; `None` means service completes.
    pub fn next_phase<R: Rng + ?Sized>(&self, phase: usize, rng: &mut R) -> Option<usize> {
        let j = pick(&self.jumps[phase].cdf, rng);
        (j < self.order()).then_some(j)
    }

    /// Exact draw by simulating the phase process until absorption.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut phase = self.initial_phase(rng);
        let mut elapsed = 0.0;
        loop {
            let hold: f64 = Exp1.sample(rng);
            elapsed += hold / self.holding_rate(phase);
            match self.next_phase(phase, rng) {
                Some(next) => phase = next,
                None => return elapsed,
            }
        }
    }

    pub fn exponential(mu: f64) -> Result<Self> {
        positive("rate", mu)?;
        Self::new(vec![1.0], vec![vec![-mu]])
    }

    /// `m` sequential phases of rate `eta`.
    pub fn erlang(m: usize, eta: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("Erlang order must be at least one".into()));
        }
        positive("rate", eta)?;
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = -eta;
            if i + 1 < m {
                t[(i, i + 1)] = eta;
            }
        }
        let mut alpha = vec![0.0; m];
        alpha[0] = 1.0;
        Self::from_matrix(alpha, t)
    }

    /// Mixture of exponentials: branch `k` has probability `weights[k]` and rate `rates[k]`.
    pub fn hyper_exponential(weights: &[f64], rates: &[f64]) -> Result<Self> {
        if weights.len() != rates.len() || weights.is_empty() {
            return Err(Error::Dimension(format!("{} weights but {} rates", weights.len(), rates.len())));
        }
        for &r in rates {
            positive("rate", r)?;
        }
        let t = DMatrix::from_diagonal(&DVector::from_iterator(rates.len(), rates.iter().map(|r| -r)));
        Self::from_matrix(weights.to_vec(), t)
    }

    /// Canonical order-2 form: `alpha = (eta, 1 - eta)`,
    /// `T = [[-xi1, xi1], [0, -xi2]]` with `0 < xi1 <= xi2`.
    pub fn coxian2(eta: f64, xi1: f64, xi2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta = {eta} outside [0, 1]")));
        }
        positive("xi1", xi1)?;
        positive("xi2", xi2)?;
        if xi1 > xi2 {
            return Err(Error::InvalidParameter(format!("xi1 = {xi1} exceeds xi2 = {xi2}")));
        }
        Self::new(vec![eta, 1.0 - eta], vec![vec![-xi1, xi1], vec![0.0, -xi2]])
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {x} must be positive")))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn pick<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    match cdf.iter().position(|&c| u < c) {
        Some(i) => i,
        // u landed in the rounding gap above the last cumulative value
        None => cdf.iter().rposition(|_| true).unwrap(),
    }
}

fn bfs(m: usize, starts: &[usize], edge: impl Fn(usize, usize) -> bool, within: Option<&[bool]>) -> Vec<bool> {
    let allowed = |j: usize| within.is_none_or(|w| w[j]);
    let mut seen = vec![false; m];
    let mut queue = VecDeque::new();
    for &s in starts {
        seen[s] = true;
        queue.push_back(s);
    }
    while let Some(i) = queue.pop_front() {
        for j in 0..m {
            if !seen[j] && allowed(j) && edge(i, j) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}
