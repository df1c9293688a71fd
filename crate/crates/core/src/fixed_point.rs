//! Closed-form fixed point of the supermarket model with PH service.
//!
//! Level `k` of the fixed point is a multiple of the stationary phase vector:
//!
//! ```text
//! pi_0 = 1,   pi_k = theta^{A_k} rho^{B_k} omega,
//! A_k = 1 + d + ... + d^{k-2},   B_k = 1 + d + ... + d^{k-1}
//! ```
//!
//! The exponents grow like `d^k`, so every magnitude is evaluated in log
//! space and flushed to zero once it falls below `1e-300`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ph::{dot, PhaseType, PhaseVector};

/// Magnitudes below this are stored as exact zeros.
pub const UNDERFLOW: f64 = 1e-300;

/// A stable supermarket model: PH service, per-server arrival rate `lambda`,
/// `d` probes per arrival.
#[derive(Debug, Clone)]
pub struct ModelParams {
    ph: PhaseType,
    lambda: f64,
    d: u32,
    omega: PhaseVector,
    mu: f64,
    theta: f64,
}

impl ModelParams {
    pub fn new(ph: PhaseType, lambda: f64, d: u32) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("d must be at least 1".into()));
        }
        let omega = ph.stationary_phase_vector()?;
        let mu = dot(&omega, ph.exit());
        let rho = lambda / mu;
        if rho >= 1.0 {
            return Err(Error::Unstable { rho });
        }
        let theta = ph.theta(d);
        Ok(Self { ph, lambda, d, omega, mu, theta })
    }

    pub fn ph(&self) -> &PhaseType {
        &self.ph
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    pub fn omega(&self) -> &PhaseVector {
        &self.omega
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn order(&self) -> usize {
        self.ph.order()
    }
}

/// `(A_k, B_k)`, evaluated as sums so that `d = 1` gives `(k - 1, k)`.
pub fn exponent_pair(k: usize, d: u32) -> (f64, f64) {
    assert!(k >= 1, "levels start at k = 1");
    let d = f64::from(d);
    let mut power = 1.0;
    let mut a = 0.0;
    for _ in 0..k - 1 {
        a += power;
        power *= d;
    }
    (a, a + power)
}

/// Scalar `theta^{A_k} rho^{B_k}` in front of `omega` at level `k`.
fn level_magnitude(params: &ModelParams, k: usize) -> f64 {
    let (a, b) = exponent_pair(k, params.d);
    let log_theta = if params.theta == 1.0 { 0.0 } else { params.theta.ln() };
    let mag = (a * log_theta + b * params.rho().ln()).exp();
    if mag < UNDERFLOW {
        0.0
    } else {
        mag
    }
}

/// Level `k >= 1` of the fixed point.
pub fn fixed_point_vector(params: &ModelParams, k: usize) -> PhaseVector {
    params.omega.scaled(level_magnitude(params, k))
}

/// When to stop tabulating levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    /// Stop before the first level with `pi_k e < tail_eps`.
    pub tail_eps: f64,
    pub max_levels: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { tail_eps: 1e-16, max_levels: 100_000 }
    }
}

impl Truncation {
    /// Exactly `k` levels regardless of magnitude.
    pub fn levels(k: usize) -> Self {
        Self { tail_eps: 0.0, max_levels: k }
    }
}

/// Levels `pi_1 .. pi_K` together with the scalars they are built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointTable {
    levels: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub theta: f64,
    pub rho: f64,
    pub mu: f64,
    pub d: u32,
}

impl FixedPointTable {
    /// Truncation depth `K`.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// `pi_k` for `1 <= k <= K`.
    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k - 1]
    }

    pub fn levels(&self) -> impl Iterator<Item = &[f64]> {
        self.levels.iter().map(Vec::as_slice)
    }

    /// `pi_k e`, the fraction of servers holding at least `k` customers.
    /// `None` past the truncation depth.
    pub fn queue_tail(&self, k: usize) -> Option<f64> {
        match k {
            0 => Some(1.0),
            k if k <= self.depth() => Some(self.levels[k - 1].iter().sum()),
            _ => None,
        }
    }

    /// `pi_1 e, ..., pi_K e`.
    pub fn tails(&self) -> Vec<f64> {
        self.levels.iter().map(|v| v.iter().sum()).collect()
    }
}

pub fn fixed_point_table(params: &ModelParams, trunc: Truncation) -> FixedPointTable {
    let mut levels = Vec::new();
    for k in 1..=trunc.max_levels {
        let v = fixed_point_vector(params, k);
        if v.total() < trunc.tail_eps {
            break;
        }
        levels.push(v.into_inner());
    }
    FixedPointTable {
        levels,
        omega: params.omega.to_vec(),
        theta: params.theta,
        rho: params.rho(),
        mu: params.mu,
        d: params.d,
    }
}

/// Left-hand sides of the stationary balance equations evaluated at the
/// closed-form fixed point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceResiduals {
    /// `-lambda pi_0^d + pi_1 T0`.
    pub level0: f64,
    /// Entry `k - 1` is the vector residual at level `k` post-multiplied by `e`.
    pub scalar: Vec<f64>,
    /// Entry `k - 1` is the componentwise residual at level `k`.
    pub vector: Vec<Vec<f64>>,
}

impl BalanceResiduals {
    pub fn max_scalar(&self) -> f64 {
        self.scalar.iter().fold(self.level0.abs(), |m, x| m.max(x.abs()))
    }

    pub fn max_vector(&self) -> f64 {
        self.vector.iter().flatten().fold(self.level0.abs(), |m, x| m.max(x.abs()))
    }
}

/// `v T` for a row vector `v`.
pub(crate) fn row_times(v: &[f64], ph: &PhaseType) -> Vec<f64> {
    let t = ph.generator();
    (0..v.len()).map(|j| (0..v.len()).map(|i| v[i] * t[(i, j)]).sum()).collect()
}

pub fn balance_residuals(table: &FixedPointTable, params: &ModelParams) -> BalanceResiduals {
    let lambda = params.lambda;
    let d = params.d;
    let ph = params.ph();
    let alpha = ph.alpha();
    let m = ph.order();
    let pi = |k: usize| -> PhaseVector {
        if k == 0 {
            PhaseVector::from_raw(vec![1.0; m])
        } else {
            fixed_point_vector(params, k)
        }
    };

    let level0 = -lambda + dot(&pi(1), ph.exit());
    let mut scalar = Vec::with_capacity(table.depth());
    let mut vector = Vec::with_capacity(table.depth());
    for k in 1..=table.depth() {
        let cur = pi(k);
        let next = pi(k + 1);
        let arrivals: Vec<f64> = if k == 1 {
            alpha.iter().map(|a| lambda * a).collect()
        } else {
            pi(k - 1).hadamard_pow(d).iter().map(|x| lambda * x).collect()
        };
        let leaving = cur.hadamard_pow(d);
        let flow = row_times(&cur, ph);
        let restart = dot(&next, ph.exit());
        let r: Vec<f64> = (0..m).map(|i| arrivals[i] - lambda * leaving[i] + flow[i] + restart * alpha[i]).collect();
        scalar.push(r.iter().sum());
        vector.push(r);
    }
    BalanceResiduals { level0, scalar, vector }
}

/// Series terms smaller than this end the sum.
const SERIES_EPS: f64 = 1e-14;

/// Mean sojourn time of a tagged arrival at the fixed point:
///
/// ```text
/// E[T_d] = rho^d theta (omega - alpha)(-T)^{-1} e
///        + alpha (-T)^{-1} e (1 + sum_{k>=1} theta^{B_k} rho^{d B_k})
/// ```
pub fn expected_sojourn(params: &ModelParams) -> f64 {
    let ph = params.ph();
    let remaining = ph.mean_time_to_absorption();
    let service = dot(ph.alpha(), remaining.as_slice());
    let residual = dot(&params.omega, remaining.as_slice());
    let d = f64::from(params.d);
    let rho = params.rho();

    let log_theta = if params.theta == 1.0 { 0.0 } else { params.theta.ln() };
    let log_rho = rho.ln();
    let mut series = 0.0;
    let mut b = 0.0;
    let mut power = 1.0;
    loop {
        b += power;
        power *= d;
        let term = (b * (log_theta + d * log_rho)).exp();
        series += term;
        if term < SERIES_EPS {
            break;
        }
    }
    rho.powf(d) * params.theta * (residual - service) + service * (1.0 + series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn erlang_params(m: usize, eta: f64, lambda: f64, d: u32) -> ModelParams {
        ModelParams::new(PhaseType::erlang(m, eta).unwrap(), lambda, d).unwrap()
    }

    #[test]
    fn exponent_pairs() {
        assert_eq!(exponent_pair(1, 7), (0.0, 1.0));
        assert_eq!(exponent_pair(3, 2), (3.0, 7.0));
        assert_eq!(exponent_pair(4, 1), (3.0, 4.0));
        assert_eq!(exponent_pair(5, 3), (40.0, 121.0));
    }

    #[test]
    fn rejects_bad_params() {
        let exp = PhaseType::exponential(1.0).unwrap();
        assert!(matches!(ModelParams::new(exp.clone(), 1.0, 2), Err(Error::Unstable { .. })));
        assert!(matches!(ModelParams::new(exp.clone(), 1.5, 2), Err(Error::Unstable { .. })));
        assert!(ModelParams::new(exp.clone(), 0.0, 2).is_err());
        assert!(ModelParams::new(exp, 0.5, 0).is_err());
    }

    #[test]
    fn first_level_is_rho_omega() {
        let ph = PhaseType::new(vec![0.5, 0.5], vec![vec![-4.0, 3.0], vec![2.0, -7.0]]).unwrap();
        let p = ModelParams::new(ph, 1.0, 2).unwrap();
        let pi1 = fixed_point_vector(&p, 1);
        assert!((pi1[0] - 0.2045).abs() < 5e-5 && (pi1[1] - 0.1591).abs() < 5e-5);
        assert!(rel(pi1.total(), p.rho()) < 1e-15);
    }

    #[test]
    fn equal_rate_hyper_exponential() {
        let ph = PhaseType::hyper_exponential(&[0.5, 0.5], &[3.0, 3.0]).unwrap();
        let p = ModelParams::new(ph, 1.0, 2).unwrap();
        let pi2 = fixed_point_vector(&p, 2);
        assert!((pi2[0] - 0.0093).abs() < 5e-5 && (pi2[1] - 0.0093).abs() < 5e-5);
    }

    #[test]
    fn erlang_closed_form() {
        // m^{(d^{k-1}+d-2)/(d-1)} (lambda/eta)^{(d^k-1)/(d-1)} / m per phase
        for (m, eta, d) in [(2usize, 5.0, 2u32), (3, 10.0, 3), (4, 9.0, 5)] {
            let p = erlang_params(m, eta, 1.0, d);
            for k in 1..=5 {
                let df = f64::from(d);
                let mf = m as f64;
                let ek = (df.powi(k as i32 - 1) + df - 2.0) / (df - 1.0);
                let bk = (df.powi(k as i32) - 1.0) / (df - 1.0);
                let want = mf.powf(ek) * (1.0 / eta).powf(bk) / mf;
                let got = fixed_point_vector(&p, k);
                if want * mf < UNDERFLOW {
                    assert_eq!(got.total(), 0.0);
                } else {
                    assert!(got.iter().all(|&x| rel(x, want) < 1e-12), "m={m} d={d} k={k}");
                }
            }
        }
    }

    #[test]
    fn exponential_table() {
        let p = ModelParams::new(PhaseType::exponential(2.75).unwrap(), 1.0, 2).unwrap();
        let table = fixed_point_table(&p, Truncation::default());
        let want = [0.3636, 0.0481, 8.408e-4, 2.571e-7, 2.402e-14];
        assert_eq!(table.depth(), 5);
        for (k, w) in want.iter().enumerate() {
            let got = table.queue_tail(k + 1).unwrap();
            assert!(rel(got, *w) < 5e-4, "k = {}: {got}", k + 1);
        }
        assert_eq!(table.queue_tail(0), Some(1.0));
        assert_eq!(table.queue_tail(6), None);
    }

    #[test]
    fn random_routing_is_geometric() {
        let p = ModelParams::new(PhaseType::exponential(1.0).unwrap(), 0.5, 1).unwrap();
        let table = fixed_point_table(&p, Truncation::levels(30));
        for k in 1..=30 {
            assert!(rel(table.queue_tail(k).unwrap(), 0.5f64.powi(k as i32)) < 1e-12);
        }
    }

    #[test]
    fn tails_underflow_to_zero() {
        let p = ModelParams::new(PhaseType::exponential(1.0).unwrap(), 0.5, 5).unwrap();
        let v = fixed_point_vector(&p, 40);
        assert_eq!(v.total(), 0.0);
    }

    #[test]
    fn residuals_for_exponential_vanish_componentwise() {
        let p = ModelParams::new(PhaseType::exponential(1.0).unwrap(), 0.9, 2).unwrap();
        let table = fixed_point_table(&p, Truncation::levels(8));
        let r = balance_residuals(&table, &p);
        assert!(r.max_vector() < 1e-10 * 0.9);
    }

    #[test]
    fn erlang_vector_residual_is_nonzero() {
        let p = erlang_params(2, 3.0, 1.0, 2);
        let table = fixed_point_table(&p, Truncation::levels(8));
        let r = balance_residuals(&table, &p);
        let rho = 2.0 / 3.0;
        let want = rho * rho / 4.0;
        assert!((r.vector[0][0] - want).abs() < 1e-14);
        assert!((r.vector[0][1] + want).abs() < 1e-14);
        assert!(r.max_scalar() < 1e-10);
    }

    #[test]
    fn sojourn_exponential_series() {
        let p = ModelParams::new(PhaseType::exponential(1.0).unwrap(), 0.9, 2).unwrap();
        let mut want = 0.0;
        for k in 0..10 {
            want += 0.9f64.powi(2i32.pow(k + 1) - 2);
        }
        assert!(rel(expected_sojourn(&p), want) < 1e-12);
        assert!((expected_sojourn(&p) - 2.6141).abs() < 1e-4);
    }

    #[test]
    fn sojourn_random_routing_is_mm1() {
        for lambda in [0.3, 0.5, 0.9] {
            let p = ModelParams::new(PhaseType::exponential(1.5).unwrap(), lambda, 1).unwrap();
            assert!(rel(expected_sojourn(&p), 1.0 / (1.5 - lambda)) < 1e-11);
        }
    }
}
