//! Mean-field dynamics of the phase-fraction vectors.
//!
//! `S_k(t)` is the row vector whose `i`-th entry is the fraction of servers
//! holding at least `k` customers with the job in service in phase `i`.
//! With `S_0 = 1` held fixed the levels evolve as
//!
//! ```text
//! dS_1/dt = lambda alpha - lambda S_1^{⊙d} + S_1 T + S_2 T0 alpha
//! dS_k/dt = lambda S_{k-1}^{⊙d} - lambda S_k^{⊙d} + S_k T + S_{k+1} T0 alpha
//! ```
//!
//! The stack is cut at depth `K` with `S_{K+1} = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_point::{fixed_point_vector, FixedPointTable, ModelParams};
use crate::ph::dot;

/// Slack on componentwise comparisons.
pub const ORDER_SLACK: f64 = 1e-9;
/// Negative components smaller than this in magnitude are integration noise.
const CLAMP_FLOOR: f64 = 1e-12;

/// Levels `S_1 .. S_K` at time `t`, stored level-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanFieldState {
    order: usize,
    data: Vec<f64>,
    pub t: f64,
}

impl MeanFieldState {
    /// All servers idle.
    pub fn empty(order: usize, depth: usize) -> Self {
        Self { order, data: vec![0.0; order * depth], t: 0.0 }
    }

    pub fn from_levels(levels: &[Vec<f64>]) -> Result<Self> {
        let order = levels.first().map_or(0, Vec::len);
        if order == 0 || levels.iter().any(|l| l.len() != order) {
            return Err(Error::Dimension("levels must be nonempty and of equal length".into()));
        }
        let state = Self { order, data: levels.concat(), t: 0.0 };
        state.check()?;
        Ok(state)
    }

    /// The closed-form fixed point cut (or zero padded) to `depth` levels.
    pub fn from_table(table: &FixedPointTable, depth: usize) -> Self {
        let order = table.omega.len();
        let mut data = vec![0.0; order * depth];
        for (k, level) in table.levels().take(depth).enumerate() {
            data[k * order..(k + 1) * order].copy_from_slice(level);
        }
        Self { order, data, t: 0.0 }
    }

    /// The closed-form fixed point evaluated level by level out to `depth`.
    pub fn fixed_point(params: &ModelParams, depth: usize) -> Self {
        let order = params.order();
        let data = (1..=depth).flat_map(|k| fixed_point_vector(params, k).into_inner()).collect();
        Self { order, data, t: 0.0 }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn depth(&self) -> usize {
        self.data.len() / self.order
    }

    /// `S_k` for `1 <= k <= K`.
    pub fn level(&self, k: usize) -> &[f64] {
        &self.data[(k - 1) * self.order..k * self.order]
    }

    /// `S_k e` for every level.
    pub fn tails(&self) -> Vec<f64> {
        self.data.chunks(self.order).map(|c| c.iter().sum()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Entries in `[0, 1]` and `S_k >= S_{k+1}` componentwise.
    pub fn check(&self) -> Result<()> {
        if let Some(x) = self.data.iter().find(|x| !(-ORDER_SLACK..=1.0 + ORDER_SLACK).contains(*x)) {
            return Err(Error::InvalidParameter(format!("fraction {x} outside [0, 1]")));
        }
        for k in 1..self.depth() {
            let (upper, lower) = (self.level(k), self.level(k + 1));
            if upper.iter().zip(lower).any(|(a, b)| b > &(a + ORDER_SLACK)) {
                return Err(Error::InvalidParameter(format!("level {} exceeds level {k}", k + 1)));
            }
        }
        Ok(())
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn derivative_into(params: &ModelParams, order: usize, s: &[f64], out: &mut [f64]) {
    let ph = params.ph();
    let alpha = ph.alpha();
    let exit = ph.exit();
    let t = ph.generator();
    let lambda = params.lambda();
    let d = params.d() as i32;
    let depth = s.len() / order;

    for k in 0..depth {
        let cur = &s[k * order..(k + 1) * order];
        let restart = if k + 1 < depth { dot(&s[(k + 1) * order..(k + 2) * order], exit) } else { 0.0 };
        for j in 0..order {
            let arrival = if k == 0 { alpha[j] } else { s[(k - 1) * order + j].powi(d) };
            let flow: f64 = (0..order).map(|i| cur[i] * t[(i, j)]).sum();
            out[k * order + j] = lambda * (arrival - cur[j].powi(d)) + flow + restart * alpha[j];
        }
    }
}

/// Rate of change of every level, laid out like [`MeanFieldState::as_slice`].
pub fn derivative(state: &MeanFieldState, params: &ModelParams) -> Vec<f64> {
    let mut out = vec![0.0; state.data.len()];
    derivative_into(params, state.order, &state.data, &mut out);
    out
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    fn step(&mut self, params: &ModelParams, order: usize, y: &mut [f64], h: f64) {
        derivative_into(params, order, y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        derivative_into(params, order, &self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        derivative_into(params, order, &self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        derivative_into(params, order, &self.tmp, &mut self.k4);
        for i in 0..y.len() {
            let v = y[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
            y[i] = if v < 0.0 && v > -CLAMP_FLOOR { 0.0 } else { v };
        }
    }
}

/// Step selection for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Initial step; `None` uses `0.01 / (lambda + mu m)`.
    pub step: Option<f64>,
    /// Accept once two successive halvings differ by less than this (sup norm at the horizon).
    pub tolerance: f64,
    pub max_halvings: u32,
    /// Spacing of recorded samples; `None` records 200 evenly spaced states.
    pub sample_every: Option<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { step: None, tolerance: 1e-8, max_halvings: 16, sample_every: None }
    }
}

pub fn default_step(params: &ModelParams) -> f64 {
    0.01 / (params.lambda() + params.mu() * params.order() as f64)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Time-ordered states, first the initial one, last the horizon.
    pub samples: Vec<MeanFieldState>,
    pub params: ModelParams,
    /// Step size of the accepted run.
    pub step: f64,
    /// Sup-norm gap between the accepted run and the one with twice the step.
    pub refinement_gap: f64,
}

impl Trajectory {
    pub fn last(&self) -> &MeanFieldState {
        self.samples.last().expect("trajectory holds at least the initial state")
    }
}

fn run_fixed(
    initial: &MeanFieldState,
    params: &ModelParams,
    horizon: f64,
    steps: usize,
    stride: usize,
) -> Result<Vec<MeanFieldState>> {
    let h = horizon / steps as f64;
    let mut y = initial.data.clone();
    let mut rk = Rk4::new(y.len());
    let mut samples = vec![initial.clone()];
    for n in 1..=steps {
        rk.step(params, initial.order, &mut y, h);
        if let Some(x) = y.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("state became {x} at t = {} (step {h})", initial.t + n as f64 * h)));
        }
        if n % stride == 0 || n == steps {
            samples.push(MeanFieldState { order: initial.order, data: y.clone(), t: initial.t + n as f64 * h });
        }
    }
    Ok(samples)
}

/// Classic fourth-order Runge–Kutta from `initial` out to `initial.t + horizon`.
///
/// The step is halved until two successive refinements agree at the horizon
/// to within `control.tolerance`.
pub fn integrate(
    initial: &MeanFieldState,
    params: &ModelParams,
    horizon: f64,
    control: StepControl,
) -> Result<Trajectory> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon = {horizon} must be positive")));
    }
    if initial.order != params.order() {
        return Err(Error::Dimension(format!("state has {} phases, model has {}", initial.order, params.order())));
    }
    initial.check()?;

    let h0 = control.step.unwrap_or_else(|| default_step(params));
    let mut steps = (horizon / h0).ceil().max(1.0) as usize;
    let sample_every = control.sample_every.unwrap_or(horizon / 200.0);
    let stride_for = |steps: usize| ((sample_every / (horizon / steps as f64)).round() as usize).max(1);

    let mut coarse = run_fixed(initial, params, horizon, steps, stride_for(steps));
    for _ in 0..control.max_halvings {
        steps *= 2;
        let fine = run_fixed(initial, params, horizon, steps, stride_for(steps));
        match (&coarse, fine) {
            (Ok(c), Ok(f)) => {
                let gap = c.last().unwrap().sup_distance(f.last().unwrap());
                if gap < control.tolerance {
                    return Ok(Trajectory {
                        samples: f,
                        params: params.clone(),
                        step: horizon / steps as f64,
                        refinement_gap: gap,
                    });
                }
                coarse = Ok(f);
            }
            (_, fine) => coarse = fine,
        }
    }
    Err(match coarse {
        Err(e) => e,
        Ok(_) => Error::Numerical(format!(
            "step halving did not reach tolerance {} after {} refinements",
            control.tolerance, control.max_halvings
        )),
    })
}

/// Smallest depth with `pi_K e < 1e-12`, the default cut for integration.
pub fn default_depth(params: &ModelParams) -> usize {
    (1..).find(|&k| fixed_point_vector(params, k).total() < 1e-12).expect("stable tails vanish")
}

/// Integrates from the empty system until the derivative's sup norm drops
/// below `tol`.
pub fn stationary_solve(params: &ModelParams, depth: usize, tol: f64) -> Result<MeanFieldState> {
    let order = params.order();
    let mut y = vec![0.0; order * depth];
    let mut rate = vec![0.0; y.len()];
    let mut rk = Rk4::new(y.len());
    let h = default_step(params);
    let max_time = 1e4 / (params.lambda() + params.mu());
    let check_every = 64;
    let mut n = 0usize;
    loop {
        if n.is_multiple_of(check_every) {
            derivative_into(params, order, &y, &mut rate);
            let sup = rate.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if sup < tol {
                return Ok(MeanFieldState { order, data: y, t: n as f64 * h });
            }
            if !sup.is_finite() {
                return Err(Error::Numerical(format!("derivative became {sup} at t = {}", n as f64 * h)));
            }
            if n as f64 * h > max_time {
                return Err(Error::Numerical(format!(
                    "no stationary point within t = {max_time:.1}; derivative sup norm still {sup:e}"
                )));
            }
        }
        rk.step(params, order, &mut y, h);
        n += 1;
    }
}

/// Lyapunov distance to the fixed point with unit weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lyapunov {
    /// `sum_k (pi_k - S_k) e`.
    pub value: f64,
    /// Levels where `S_k e` exceeds `pi_k e`.
    pub ordering_violations: usize,
}

pub fn lyapunov_distance(state: &MeanFieldState, table: &FixedPointTable) -> Result<Lyapunov> {
    if state.order != table.omega.len() {
        return Err(Error::Dimension("state and table have different orders".into()));
    }
    let pi = table.tails();
    let mut value = 0.0;
    let mut ordering_violations = 0;
    for (k, s) in state.tails().into_iter().enumerate() {
        let term = pi.get(k).copied().unwrap_or(0.0) - s;
        if term < -1e-12 {
            ordering_violations += 1;
        }
        value += term;
    }
    Ok(Lyapunov { value, ordering_violations })
}

/// `a ⪯ b`: every component of `a` is at most the matching one of `b`.
pub fn ordering_holds(a: &MeanFieldState, b: &MeanFieldState) -> Result<bool> {
    if a.order != b.order || a.data.len() != b.data.len() {
        return Err(Error::Dimension(format!("shapes differ: {}x{} vs {}x{}", a.depth(), a.order, b.depth(), b.order)));
    }
    Ok(a.data.iter().zip(&b.data).all(|(x, y)| *x <= y + ORDER_SLACK))
}
