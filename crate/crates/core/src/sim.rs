//! Discrete-event simulation of the finite supermarket model.
//!
//! `n` FCFS servers receive Poisson arrivals at total rate `n lambda`. Each
//! arrival probes `d` distinct servers uniformly at random and joins the
//! shortest of them, breaking ties uniformly. Every busy server tracks the
//! current PH phase of its job; phase changes and completions are separate
//! exponential events, so the simulation is exact.
//!
//! Replications draw from independent ChaCha streams of one master seed, so a
//! run is reproducible bit for bit whatever the thread count.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ph::PhaseType;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    /// Per-server arrival rate; the system sees `n * lambda`.
    pub lambda: f64,
    pub ph: PhaseType,
    pub horizon: f64,
    /// Statistics cover `(warmup, horizon]` only.
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
}

impl SimConfig {
    /// Defaults: `10^5 / lambda` time units (about 10^5 arrivals per
    /// server), 10% warmup, one replication.
    pub fn new(n: usize, d: usize, lambda: f64, ph: PhaseType) -> Self {
        let horizon = 1e5 / lambda;
        Self { n, d, lambda, ph, horizon, warmup: 0.1 * horizon, seed: 0, replications: 1 }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self.warmup = 0.1 * horizon;
        self
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.d > self.n {
            return Err(Error::InvalidParameter(format!("need 1 <= d <= n, got d = {}, n = {}", self.d, self.n)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.horizon.is_finite() && self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= warmup < horizon, got {} and {}",
                self.warmup, self.horizon
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        Ok(())
    }

    /// Offered load per server.
    pub fn rho(&self) -> f64 {
        self.lambda * self.ph.mean()
    }
}

/// A mean with its 95% confidence half-width. `half_width` is `None` when it
/// is unbounded (a single replication).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: Option<f64>,
}

impl Estimate {
    pub fn point(mean: f64) -> Self {
        Self { mean, half_width: None }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.half_width.is_some_and(|h| (x - self.mean).abs() <= h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    /// Mean sojourn (waiting plus service) of customers arriving after warmup.
    pub mean_response: Estimate,
    /// Entry `k` is the time-averaged fraction of servers with at least `k`
    /// customers; entry 0 is always 1.
    pub tail_fractions: Vec<Estimate>,
    /// `[k - 1][i]`: fraction with at least `k` customers and the job in phase `i`.
    pub phase_tail_fractions: Vec<Vec<f64>>,
    pub customers_served: u64,
    /// Time-averaged number of customers per server.
    pub mean_in_system: f64,
    /// `mean_in_system / (lambda * mean_response)`; 1 under Little's law.
    pub little_check: f64,
    /// `rho >= 1`: finite-horizon numbers are well defined but not stationary.
    pub overloaded: bool,
}

impl SimStats {
    pub fn tail(&self, k: usize) -> f64 {
        self.tail_fractions.get(k).map_or(0.0, |e| e.mean)
    }
}

/// `d` distinct servers out of `n`, uniformly.
pub fn sample_choices<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Vec<usize>> {
    if d > n {
        return Err(Error::InvalidParameter(format!("cannot probe {d} of {n} servers")));
    }
    Ok(rand::seq::index::sample(rng, n, d).into_vec())
}

#[derive(Debug, Clone, Copy)]
struct PhaseEvent {
    time: f64,
    seq: u64,
    server: usize,
}

impl PartialEq for PhaseEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PhaseEvent {}

impl PartialOrd for PhaseEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PhaseEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Default)]
struct Server {
    /// Arrival times, head in service.
    queue: VecDeque<f64>,
    phase: usize,
}

/// Time-integrated counter that only accrues inside the measurement window.
#[derive(Debug, Clone, Copy, Default)]
struct Accrual {
    count: i64,
    area: f64,
    stamp: f64,
}

impl Accrual {
    fn settle(&mut self, now: f64, warmup: f64) {
        let from = self.stamp.max(warmup);
        if now > from {
            self.area += self.count as f64 * (now - from);
        }
        self.stamp = now;
    }

    fn add(&mut self, delta: i64, now: f64, warmup: f64) {
        self.settle(now, warmup);
        self.count += delta;
    }
}

/// One replication in progress.
pub struct Simulation<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    now: f64,
    next_arrival: f64,
    events: BinaryHeap<Reverse<PhaseEvent>>,
    seq: u64,
    servers: Vec<Server>,
    /// `[k - 1][i]`: servers with at least `k` customers whose head is in phase `i`.
    cells: Vec<Vec<Accrual>>,
    in_system: Accrual,
    sojourn_sum: f64,
    served: u64,
    probes: Vec<usize>,
}

impl<'a> Simulation<'a> {
    /// Replication `rep` reads stream `rep` of `cfg.seed`.
    pub fn new(cfg: &'a SimConfig, rep: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        let first: f64 = Exp1.sample(&mut rng);
        Ok(Self {
            cfg,
            next_arrival: first / (cfg.n as f64 * cfg.lambda),
            rng,
            now: 0.0,
            events: BinaryHeap::new(),
            seq: 0,
            servers: vec![Server::default(); cfg.n],
            cells: Vec::new(),
            in_system: Accrual::default(),
            sojourn_sum: 0.0,
            served: 0,
            probes: Vec::with_capacity(cfg.d),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn queue_lengths(&self) -> Vec<usize> {
        self.servers.iter().map(|s| s.queue.len()).collect()
    }

    fn cell(&mut self, level: usize, phase: usize) -> &mut Accrual {
        while self.cells.len() < level {
            self.cells.push(vec![Accrual::default(); self.cfg.ph.order()]);
        }
        &mut self.cells[level - 1][phase]
    }

    fn schedule(&mut self, server: usize) {
        let phase = self.servers[server].phase;
        let hold: f64 = Exp1.sample(&mut self.rng);
        self.seq += 1;
        self.events.push(Reverse(PhaseEvent {
            time: self.now + hold / self.cfg.ph.holding_rate(phase),
            seq: self.seq,
            server,
        }));
    }

    /// Moves a server's contribution on levels `1..=len` from one phase to another.
    fn shift_phase(&mut self, len: usize, from: usize, to: usize) {
        let (now, warmup) = (self.now, self.cfg.warmup);
        for k in 1..=len {
            self.cell(k, from).add(-1, now, warmup);
            self.cell(k, to).add(1, now, warmup);
        }
    }

    fn arrive(&mut self) {
        let (n, d) = (self.cfg.n, self.cfg.d);
        self.probes.clear();
        self.probes.extend(rand::seq::index::sample(&mut self.rng, n, d).iter());
        let mut best = self.probes[0];
        let mut ties = 1u32;
        for idx in 1..self.probes.len() {
            let s = self.probes[idx];
            let (len, best_len) = (self.servers[s].queue.len(), self.servers[best].queue.len());
            if len < best_len {
                best = s;
                ties = 1;
            } else if len == best_len {
                ties += 1;
                if self.rng.random_range(0..ties) == 0 {
                    best = s;
                }
            }
        }

        let (now, warmup) = (self.now, self.cfg.warmup);
        self.in_system.add(1, now, warmup);
        self.servers[best].queue.push_back(now);
        let len = self.servers[best].queue.len();
        if len == 1 {
            self.servers[best].phase = self.cfg.ph.initial_phase(&mut self.rng);
            self.schedule(best);
        }
        let phase = self.servers[best].phase;
        self.cell(len, phase).add(1, now, warmup);

        let gap: f64 = Exp1.sample(&mut self.rng);
        self.next_arrival = now + gap / (n as f64 * self.cfg.lambda);
    }

    fn phase_end(&mut self, server: usize) {
        let (now, warmup) = (self.now, self.cfg.warmup);
        let len = self.servers[server].queue.len();
        let phase = self.servers[server].phase;
        match self.cfg.ph.next_phase(phase, &mut self.rng) {
            Some(next) => {
                self.shift_phase(len, phase, next);
                self.servers[server].phase = next;
                self.schedule(server);
            }
            None => {
                let arrived = self.servers[server].queue.pop_front().expect("busy server");
                if arrived >= warmup {
                    self.sojourn_sum += now - arrived;
                    self.served += 1;
                }
                self.in_system.add(-1, now, warmup);
                self.cell(len, phase).add(-1, now, warmup);
                if len > 1 {
                    let next = self.cfg.ph.initial_phase(&mut self.rng);
                    self.shift_phase(len - 1, phase, next);
                    self.servers[server].phase = next;
                    self.schedule(server);
                }
            }
        }
    }

    /// Processes the next event; `false` once it would fall past the horizon.
    pub fn step(&mut self) -> bool {
        let phase_time = self.events.peek().map_or(f64::INFINITY, |e| e.0.time);
        let t = phase_time.min(self.next_arrival);
        if t > self.cfg.horizon {
            return false;
        }
        self.now = t;
        if self.next_arrival <= phase_time {
            self.arrive();
        } else {
            let Reverse(ev) = self.events.pop().expect("peeked");
            self.phase_end(ev.server);
        }
        true
    }

    /// Current `[k - 1][i]` fractions from the incremental counters.
    pub fn tail_fractions_snapshot(&self) -> Vec<Vec<f64>> {
        let n = self.cfg.n as f64;
        self.cells.iter().map(|row| row.iter().map(|c| c.count as f64 / n).collect()).collect()
    }

    /// The same fractions recounted from the raw queue states.
    pub fn census(&self) -> Vec<Vec<f64>> {
        let m = self.cfg.ph.order();
        let depth = self.servers.iter().map(|s| s.queue.len()).max().unwrap_or(0);
        let mut counts = vec![vec![0usize; m]; depth];
        for s in &self.servers {
            for row in counts.iter_mut().take(s.queue.len()) {
                row[s.phase] += 1;
            }
        }
        let n = self.cfg.n as f64;
        counts.into_iter().map(|row| row.into_iter().map(|c| c as f64 / n).collect()).collect()
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    /// Closes the measurement window at the horizon.
    pub fn finish(mut self) -> SimStats {
        let (end, warmup) = (self.cfg.horizon, self.cfg.warmup);
        self.in_system.settle(end, warmup);
        for row in &mut self.cells {
            for c in row {
                c.settle(end, warmup);
            }
        }
        let window = end - warmup;
        let n = self.cfg.n as f64;
        let phase_tail_fractions: Vec<Vec<f64>> =
            self.cells.iter().map(|row| row.iter().map(|c| c.area / (window * n)).collect()).collect();
        let mut tail_fractions = vec![Estimate::point(1.0)];
        tail_fractions.extend(phase_tail_fractions.iter().map(|row| Estimate::point(row.iter().sum())));
        let mean_response = self.sojourn_sum / self.served as f64;
        let mean_in_system = self.in_system.area / (window * n);
        SimStats {
            mean_response: Estimate::point(mean_response),
            tail_fractions,
            phase_tail_fractions,
            customers_served: self.served,
            mean_in_system,
            little_check: mean_in_system / (self.cfg.lambda * mean_response),
            overloaded: self.cfg.rho() >= 1.0,
        }
    }
}

/// Runs replication `rep` of `cfg` to the horizon.
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Result<SimStats> {
    let mut sim = Simulation::new(cfg, rep)?;
    sim.run_to_end();
    Ok(sim.finish())
}

/// One replication (stream 0).
pub fn run(cfg: &SimConfig) -> Result<SimStats> {
    run_replication(cfg, 0)
}

/// All `cfg.replications` replications, in parallel, in replication order.
pub fn run_all(cfg: &SimConfig) -> Result<Vec<SimStats>> {
    cfg.validate()?;
    (0..cfg.replications).into_par_iter().map(|rep| run_replication(cfg, rep)).collect()
}

fn t_estimate(values: &[f64]) -> Estimate {
    let r = values.len();
    let mean = values.iter().sum::<f64>() / r as f64;
    if r < 2 {
        return Estimate::point(mean);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (r - 1) as f64).expect("positive dof").inverse_cdf(0.975);
    Estimate { mean, half_width: Some(t * (var / r as f64).sqrt()) }
}

/// Pools replications: means across replications with Student-t intervals.
pub fn aggregate(reps: &[SimStats]) -> Result<SimStats> {
    if reps.is_empty() {
        return Err(Error::InvalidParameter("no replications to aggregate".into()));
    }
    let over = |f: &dyn Fn(&SimStats) -> f64| -> Vec<f64> { reps.iter().map(f).collect() };
    let depth = reps.iter().map(|s| s.tail_fractions.len()).max().unwrap_or(1);
    let tail_fractions = (0..depth).map(|k| t_estimate(&over(&|s| s.tail(k)))).collect();
    let order = reps.iter().flat_map(|s| s.phase_tail_fractions.first()).map(Vec::len).max().unwrap_or(0);
    let phase_tail_fractions = (0..depth.saturating_sub(1))
        .map(|k| {
            (0..order)
                .map(|i| {
                    over(&|s| s.phase_tail_fractions.get(k).map_or(0.0, |row| row[i])).iter().sum::<f64>()
                        / reps.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(SimStats {
        mean_response: t_estimate(&over(&|s| s.mean_response.mean)),
        tail_fractions,
        phase_tail_fractions,
        customers_served: reps.iter().map(|s| s.customers_served).sum(),
        mean_in_system: over(&|s| s.mean_in_system).iter().sum::<f64>() / reps.len() as f64,
        little_check: over(&|s| s.little_check).iter().sum::<f64>() / reps.len() as f64,
        overloaded: reps.iter().any(|s| s.overloaded),
    })
}
