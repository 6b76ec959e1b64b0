use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AlgoConfig, AlgoName, Downlink, DwnMemoryMode, Participation, StepPolicy, UpdateMode};
use crate::compressors::{default_alpha, BitCost, CompressorSpec};
use crate::metrics::{record_iteration, RunTrace};
use crate::problems::{BatchSpec, Problem};
use crate::rng::{Phase, RngRoot};
use crate::{Error, ParamVector, Result};

/// Iterates beyond this norm count as diverged.
pub const DIVERGENCE_NORM: f64 = 1e100;

/// An [`AlgoConfig`] with every knob fixed for a given dimension and worker
/// count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub name: AlgoName,
    pub up: CompressorSpec,
    pub dwn: CompressorSpec,
    pub alpha_up: f64,
    pub alpha_dwn: f64,
    pub downlink: Downlink,
    pub workers: usize,
    /// Number of downlink memory groups; worker `i` belongs to group
    /// `i·G/N`.
    pub groups: usize,
    /// Single server-side memory average, with optional reset period.
    pub single_averaged: Option<Option<u64>>,
    /// Participation probability, 1 for full participation.
    pub q: f64,
}

impl Resolved {
    pub fn new(cfg: &AlgoConfig, d: usize, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        let name = cfg.name;
        let up = CompressorSpec::new(cfg.up, d)?;
        let dwn = CompressorSpec::new(cfg.dwn, d)?;
        if let Some(mode) = cfg.update_mode {
            if mode != name.update_mode() {
                let want = match name.update_mode() {
                    UpdateMode::Degraded => "degraded",
                    UpdateMode::NonDegraded => "non_degraded",
                };
                return Err(Error::config("update_mode", format!("{name} requires {want}")));
            }
        }

        let alpha_up = if name.uses_uplink_memory() { cfg.alpha_up.unwrap_or_else(|| default_alpha(&up)) } else { 0.0 };
        if !name.uses_uplink_memory() && cfg.alpha_up.is_some_and(|a| a != 0.0) {
            return Err(Error::config("alpha_up", format!("{name} keeps no uplink memory")));
        }
        let forced_dwn = match name {
            AlgoName::McmAlpha0 => Some(0.0),
            AlgoName::McmAlpha1 => Some(1.0),
            _ => None,
        };
        let alpha_dwn = match (forced_dwn, cfg.alpha_dwn) {
            (Some(f), Some(a)) if a != f => {
                return Err(Error::config("alpha_dwn", format!("{name} fixes alpha_dwn = {f}")));
            }
            (Some(f), _) => f,
            (None, Some(a)) => a,
            (None, None) => default_alpha(&dwn),
        };
        for (field, a) in [("alpha_up", alpha_up), ("alpha_dwn", alpha_dwn)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(field, format!("{a} is not in [0, 1]")));
            }
        }

        let mode = cfg.dwn_memory_mode.unwrap_or_else(|| name.default_memory_mode());
        let allowed = match name {
            AlgoName::Mcm | AlgoName::McmAlpha0 | AlgoName::McmAlpha1 | AlgoName::Artemis => {
                mode == DwnMemoryMode::Shared
            }
            AlgoName::RandMcm => matches!(mode, DwnMemoryMode::PerWorker | DwnMemoryMode::SingleAveraged { .. }),
            AlgoName::RandMcmG(g) => mode == DwnMemoryMode::Grouped { groups: g },
            _ => !matches!(mode, DwnMemoryMode::SingleAveraged { .. }),
        };
        if !allowed {
            return Err(Error::config("dwn_memory_mode", format!("{mode:?} is not available for {name}")));
        }
        let (groups, single_averaged) = match mode {
            DwnMemoryMode::Shared => (1, None),
            DwnMemoryMode::PerWorker => (workers, None),
            DwnMemoryMode::Grouped { groups } => (groups, None),
            DwnMemoryMode::SingleAveraged { reset_every } => (workers, Some(reset_every)),
        };
        if groups == 0 || groups > workers {
            return Err(Error::config("groups", format!("{groups} groups for {workers} workers")));
        }
        if let Some(Some(0)) = single_averaged {
            return Err(Error::config("reset_every", "must be at least 1"));
        }

        let q = match cfg.participation {
            Participation::Full => 1.0,
            Participation::Bernoulli { q } if q > 0.0 && q <= 1.0 => q,
            Participation::Bernoulli { q } => {
                return Err(Error::config("participation.q", format!("{q} is not in (0, 1]")));
            }
        };

        Ok(Self { name, up, dwn, alpha_up, alpha_dwn, downlink: name.downlink(), workers, groups, single_averaged, q })
    }

    pub fn group_of(&self, worker: usize) -> usize {
        worker * self.groups / self.workers
    }

    /// Whether `Υ` is meaningful, i.e. local models are rebuilt from a
    /// downlink memory.
    pub fn has_downlink_memory(&self) -> bool {
        self.downlink == Downlink::Memory
    }

    pub fn gamma_max(&self, l: f64) -> f64 {
        super::gamma_max(l, self.up.omega, self.dwn.omega, self.workers, self.downlink == Downlink::Degraded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    /// Reached at least twelve decades of excess-loss decrease.
    Converged,
    /// Finished all iterations above that level.
    Saturated,
    Diverged,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunStatus::Running => "RUNNING",
            RunStatus::Converged => "CONVERGED",
            RunStatus::Saturated => "SATURATED",
            RunStatus::Diverged => "DIVERGED",
        };
        f.write_str(s)
    }
}

/// Engine state after `k` rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoState {
    pub k: u64,
    /// Global model `w_k`.
    pub w: ParamVector,
    /// Local models `ŵ_k^i`, one row per worker.
    pub w_hat: Vec<ParamVector>,
    /// Uplink memories `h_k^i`.
    pub h: Vec<ParamVector>,
    /// Downlink memories `H_k`, one row per group.
    pub memory: Vec<ParamVector>,
    /// Downlink memories `H_{k−1}`, one row per group.
    pub memory_prev: Vec<ParamVector>,
    /// Server-side average of the per-worker memories, single-averaged mode
    /// only.
    pub memory_avg: Option<ParamVector>,
    pub bits_up: BitCost,
    pub bits_dwn: BitCost,
    pub root: RngRoot,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced,
    /// No worker participated; only `k` moved.
    Skipped,
    Diverged,
}

/// The uplink half of a round.
struct Uplink {
    aggregate: ParamVector,
    h: Vec<ParamVector>,
    bits: BitCost,
}

/// Runs one configured algorithm on one problem.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    pub problem: &'a Problem,
    pub cfg: Resolved,
    pub step_policy: StepPolicy,
    pub batch: BatchSpec,
}

impl<'a> Engine<'a> {
    pub fn new(problem: &'a Problem, cfg: &AlgoConfig, step_policy: StepPolicy, batch: BatchSpec) -> Result<Self> {
        let cfg = Resolved::new(cfg, problem.dim(), problem.num_workers())?;
        if !batch.full_batch {
            let smallest = problem.shards.iter().map(|s| s.len()).min().unwrap_or(0);
            if batch.b == 0 || batch.b > smallest {
                return Err(Error::config("batch", format!("b = {} must lie in 1..={smallest}", batch.b)));
            }
        }
        Ok(Self { problem, cfg, step_policy, batch })
    }

    /// `h_0^i` is one stochastic gradient at `w_0`; every memory starts at
    /// `w_0`, so `Υ_0 = 0`.
    pub fn init_state(&self, w0: &ParamVector, seed: u64) -> Result<AlgoState> {
        if w0.dim() != self.problem.dim() {
            return Err(Error::Dimension { expected: self.problem.dim(), got: w0.dim() });
        }
        let root = RngRoot::new(seed);
        let n = self.cfg.workers;
        let h = (0..n)
            .map(|i| {
                let mut rng = root.stream(Phase::InitGrad, i as u64, 0);
                self.problem.grad_stochastic_unchecked(i, w0, self.batch, &mut rng)
            })
            .collect();
        Ok(AlgoState {
            k: 0,
            w: w0.clone(),
            w_hat: vec![w0.clone(); n],
            h,
            memory: vec![w0.clone(); self.cfg.groups],
            memory_prev: vec![w0.clone(); self.cfg.groups],
            memory_avg: self.cfg.single_averaged.map(|_| w0.clone()),
            bits_up: BitCost(0),
            bits_dwn: BitCost(0),
            root,
            diverged: false,
        })
    }

    /// Whether worker `i` takes part in round `k` (the round that turns
    /// `w_k` into `w_{k+1}`).
    pub fn is_active(&self, root: &RngRoot, worker: usize, k: u64) -> bool {
        self.cfg.q >= 1.0 || root.stream(Phase::Participation, worker as u64, k).random::<f64>() < self.cfg.q
    }

    pub fn active_set(&self, root: &RngRoot, k: u64) -> Vec<bool> {
        (0..self.cfg.workers).map(|i| self.is_active(root, i, k)).collect()
    }

    pub fn gamma_at(&self, k: u64) -> f64 {
        self.step_policy.gamma_at(k)
    }

    /// One round with the ordinary streams.
    pub fn step(&self, state: &mut AlgoState) -> StepOutcome {
        let (next, outcome) = self.advance(state, 0, 0);
        *state = next;
        outcome
    }

    /// One round from `state` using replay slots for the uplink (gradient
    /// sampling and uplink compression) and downlink randomness. Replay 0 is
    /// the ordinary trajectory.
    pub fn advance(&self, state: &AlgoState, up_replay: u64, dwn_replay: u64) -> (AlgoState, StepOutcome) {
        let k = state.k;
        let mut next = state.clone();
        next.k = k + 1;
        let active = self.active_set(&state.root, k);
        if !active.iter().any(|a| *a) {
            next.memory_prev = state.memory.clone();
            return (next, StepOutcome::Skipped);
        }
        let gamma = self.gamma_at(k);
        let up = self.uplink(state, &active, up_replay);
        next.h = up.h;
        next.bits_up += up.bits;

        let recipients = self.active_set(&state.root, k + 1);
        let mut sent = vec![false; self.cfg.groups];
        for (i, r) in recipients.iter().enumerate() {
            if *r {
                sent[self.cfg.group_of(i)] = true;
            }
        }
        let dwn = |g: usize| state.root.replay_stream(Phase::Dwn, dwn_replay, g as u64, k + 1);
        let identity_dwn = self.cfg.dwn.is_identity();
        next.memory_prev = state.memory.clone();

        match self.cfg.downlink {
            Downlink::Degraded => {
                let (applied, bits) = self.cfg.dwn.compress(&up.aggregate, &mut dwn(0));
                next.w = state.w.clone();
                next.w.axpy(-gamma, if identity_dwn { &up.aggregate } else { &applied });
                if sent[0] {
                    next.bits_dwn += bits;
                    next.w_hat = vec![next.w.clone(); self.cfg.workers];
                }
            }
            _ => {
                next.w = state.w.clone();
                next.w.axpy(-gamma, &up.aggregate);
                self.downlink(state, &mut next, &up.aggregate, gamma, &sent, dwn_replay);
            }
        }
        if identity_dwn {
            next.w_hat.iter_mut().for_each(|row| row.clone_from(&next.w));
        }

        let bad = |v: &ParamVector| !v.is_finite() || v.norm() > DIVERGENCE_NORM;
        if bad(&next.w) || next.w_hat.iter().any(bad) {
            next.diverged = true;
            return (next, StepOutcome::Diverged);
        }
        (next, StepOutcome::Advanced)
    }

    fn uplink(&self, state: &AlgoState, active: &[bool], replay: u64) -> Uplink {
        let k = state.k;
        let d = self.problem.dim();
        let mut aggregate = ParamVector::zeros(d);
        let mut h = state.h.clone();
        let mut bits = BitCost(0);
        let mut count = 0usize;
        let memory = self.cfg.name.uses_uplink_memory();
        for i in (0..self.cfg.workers).filter(|i| active[*i]) {
            let mut grad_rng = state.root.replay_stream(Phase::Grad, replay, i as u64, k + 1);
            let g = self.problem.grad_stochastic_unchecked(i, &state.w_hat[i], self.batch, &mut grad_rng);
            let delta = if memory { g.sub(&state.h[i]) } else { g.clone() };
            let mut up_rng = state.root.replay_stream(Phase::Up, replay, i as u64, k + 1);
            let (msg, cost) = self.cfg.up.compress(&delta, &mut up_rng);
            bits += cost;
            if self.cfg.up.is_identity() {
                aggregate.add_assign(&g);
            } else if memory {
                aggregate.add_assign(&msg.add(&state.h[i]));
            } else {
                aggregate.add_assign(&msg);
            }
            if memory {
                h[i].axpy(self.cfg.alpha_up, &msg);
            }
            count += 1;
        }
        aggregate.scale_mut(1.0 / count as f64);
        Uplink { aggregate, h, bits }
    }

    /// Rebuilds local models and memories for every group whose message is
    /// delivered. `next.w` already holds `w_{k+1}`.
    fn downlink(
        &self,
        state: &AlgoState,
        next: &mut AlgoState,
        aggregate: &ParamVector,
        gamma: f64,
        sent: &[bool],
        replay: u64,
    ) {
        let k = state.k;
        let alpha = self.cfg.alpha_dwn;
        let dwn_rng = |g: usize| state.root.replay_stream(Phase::Dwn, replay, g as u64, k + 1);
        let members = |g: usize| (0..self.cfg.workers).filter(move |i| self.cfg.group_of(*i) == g);

        if let (Downlink::Memory, Some(reset)) = (self.cfg.downlink, self.cfg.single_averaged) {
            let avg = state.memory_avg.as_ref().expect("single-averaged state carries an average");
            let omega = next.w.sub(avg);
            let mut sum = ParamVector::zeros(omega.dim());
            for i in (0..self.cfg.workers).filter(|i| sent[*i]) {
                let (c, bits) = self.cfg.dwn.compress(&omega, &mut dwn_rng(i));
                next.bits_dwn += bits;
                next.w_hat[i] = state.memory[i].add(&c);
                next.memory[i].axpy(alpha, &c);
                sum.add_assign(&c);
            }
            let mut new_avg = avg.clone();
            new_avg.axpy(alpha / self.cfg.workers as f64, &sum);
            if let Some(period) = reset {
                if (k + 1).is_multiple_of(period) {
                    next.memory.iter_mut().for_each(|m| m.clone_from(&new_avg));
                    next.bits_dwn += BitCost(32 * omega.dim() as u64);
                }
            }
            next.memory_avg = Some(new_avg);
            return;
        }

        for g in (0..self.cfg.groups).filter(|g| sent[*g]) {
            let mut rng = dwn_rng(g);
            let local = match self.cfg.downlink {
                Downlink::Direct => {
                    let (c, bits) = self.cfg.dwn.compress(&next.w, &mut rng);
                    next.bits_dwn += bits;
                    c
                }
                Downlink::UpdateOnly | Downlink::Ghost => {
                    let (c, bits) = self.cfg.dwn.compress(aggregate, &mut rng);
                    next.bits_dwn += bits;
                    let base = if self.cfg.downlink == Downlink::Ghost {
                        &state.w
                    } else {
                        let first = members(g).next().expect("groups are non-empty");
                        &state.w_hat[first]
                    };
                    let mut v = base.clone();
                    v.axpy(-gamma, &c);
                    v
                }
                Downlink::Memory => {
                    let omega = next.w.sub(&state.memory[g]);
                    let (c, bits) = self.cfg.dwn.compress(&omega, &mut rng);
                    next.bits_dwn += bits;
                    next.memory[g].axpy(alpha, &c);
                    state.memory[g].add(&c)
                }
                Downlink::Degraded => unreachable!("degraded rounds are handled by the caller"),
            };
            for i in members(g) {
                next.w_hat[i] = local.clone();
            }
        }
    }

    /// Redraws the downlink half of the round that produced `state`, using
    /// replay slot `replay`: memories are rewound to `H_{k−1}` and local
    /// models and `H_k` are rebuilt from the same `w_k`. Memory downlinks
    /// with per-group memories only.
    pub fn redo_downlink(&self, state: &AlgoState, replay: u64) -> Result<AlgoState> {
        if !self.cfg.has_downlink_memory() || self.cfg.single_averaged.is_some() {
            return Err(Error::Precondition(format!("{} has no per-group downlink memory to replay", self.cfg.name)));
        }
        if state.k == 0 {
            return Err(Error::Precondition("no round to replay at k = 0".into()));
        }
        let mut before = state.clone();
        before.k = state.k - 1;
        before.memory = state.memory_prev.clone();
        let mut next = before.clone();
        next.k = state.k;
        next.w = state.w.clone();
        let recipients = self.active_set(&state.root, state.k);
        let mut sent = vec![false; self.cfg.groups];
        for (i, r) in recipients.iter().enumerate() {
            if *r {
                sent[self.cfg.group_of(i)] = true;
            }
        }
        let zero = ParamVector::zeros(state.w.dim());
        self.downlink(&before, &mut next, &zero, 0.0, &sent, replay);
        if self.cfg.dwn.is_identity() {
            next.w_hat.iter_mut().for_each(|row| row.clone_from(&next.w));
        }
        // The caller's H_{k−1} is unknown here, so keep the rewound value.
        next.memory_prev = state.memory_prev.clone();
        next.bits_dwn = state.bits_dwn;
        Ok(next)
    }

    /// The aggregated uplink message `ĝ` of the next round under replay
    /// slot `replay`.
    pub fn uplink_aggregate(&self, state: &AlgoState, replay: u64) -> ParamVector {
        let active = vec![true; self.cfg.workers];
        self.uplink(state, &active, replay).aggregate
    }

    /// Runs `iterations` rounds from `w0`, recording `k = 0..=iterations`.
    /// Diverged runs stop early and keep the records made so far.
    pub fn run(&self, w0: &ParamVector, seed: u64, iterations: u64) -> Result<RunTrace> {
        self.run_with(w0, seed, iterations, false)
    }

    pub fn run_with(&self, w0: &ParamVector, seed: u64, iterations: u64, keep_iterates: bool) -> Result<RunTrace> {
        let mut state = self.init_state(w0, seed)?;
        let mut trace = RunTrace::new(self.cfg.name.to_string(), seed);
        trace.warning = self.step_policy.warning();
        trace.records.push(record_iteration(self.problem, &self.cfg, &state, self.gamma_at(0)));
        if keep_iterates {
            trace.iterates.push(state.w.clone());
        }
        for _ in 0..iterations {
            if self.step(&mut state) == StepOutcome::Diverged {
                trace.status = RunStatus::Diverged;
                trace.final_w = state.w;
                return Ok(trace);
            }
            trace.records.push(record_iteration(self.problem, &self.cfg, &state, self.gamma_at(state.k)));
            if keep_iterates {
                trace.iterates.push(state.w.clone());
            }
        }
        let first = trace.records.first().map(|r| r.excess_loss).unwrap_or(0.0);
        let last = trace.records.last().map(|r| r.excess_loss).unwrap_or(0.0);
        trace.status =
            if last <= 1e-12 * first.max(f64::MIN_POSITIVE) { RunStatus::Converged } else { RunStatus::Saturated };
        trace.final_w = state.w;
        Ok(trace)
    }
}
