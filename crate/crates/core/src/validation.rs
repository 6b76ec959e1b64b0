//! Monte-Carlo certification of compressors and of the engine's one-step
//! moment inequalities.
//!
//! Every check compares a sample mean against a bound with a slack of a few
//! standard errors and returns a [`Report`]. Reports are deterministic given
//! the seed and trial count.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoConfig, AlgoName, AlgoState, Downlink, Engine, GammaPolicy, StepPolicy};
use crate::compressors::{Compressor, CompressorKind, CompressorSpec};
use crate::metrics;
use crate::problems::{synth_problem, BatchSpec, Family, Hetero, Problem, SynthOptions};
use crate::rng::{Phase, RngRoot};
use crate::stats::{simultaneous_z, Running, RunningVec};
use crate::{Error, ParamVector, Result};

/// Family-wise error level for per-coordinate unbiasedness tests.
const FAMILY_ALPHA: f64 = 1e-3;
const UNBIASED_Z: f64 = 4.0;
const BOUND_Z: f64 = 3.0;
const VARIANCE_MARGIN: f64 = 1.02;
pub const MIN_MOMENT_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check: String,
    pub status: CheckStatus,
    /// Worst measured statistic (a mean, ratio or z-score).
    pub statistic: f64,
    /// The bound it was compared with, slack excluded.
    pub bound: f64,
    pub stderr: f64,
    pub detail: String,
}

impl Report {
    fn not_applicable(check: &str, why: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            status: CheckStatus::NotApplicable,
            statistic: 0.0,
            bound: 0.0,
            stderr: 0.0,
            detail: why.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync + Send) -> Vec<R> {
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Unbiasedness (per coordinate) and the variance ratio
/// `E||C(v) − v||²/||v||² ≤ ω` on 20 random Gaussian vectors.
pub fn check_compressor_moments<C: Compressor + Sync>(
    compressor: &C,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<Report> {
    const VECTORS: usize = 20;
    if trials < MIN_MOMENT_TRIALS {
        return Err(Error::Precondition(format!("moment checks need at least {MIN_MOMENT_TRIALS} trials")));
    }
    let root = RngRoot::new(seed);
    let vectors: Vec<ParamVector> = (0..VECTORS)
        .map(|j| {
            let mut rng = root.stream(Phase::Probe, j as u64, 0);
            ParamVector::from_vec_unchecked((0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        })
        .collect();
    let z_max = simultaneous_z(VECTORS * d, FAMILY_ALPHA, UNBIASED_Z);
    let omega = compressor.omega();
    let per_vector = par_map(&vectors, |j, v| {
        let mut rng = root.stream(Phase::Probe, j as u64, 1);
        let mut coords = RunningVec::new(d);
        let mut ratio = Running::new();
        let norm_sq = v.norm_sq();
        for _ in 0..trials {
            let c = compressor.apply(v, &mut rng);
            ratio.push(c.dist_sq(v) / norm_sq);
            coords.push(c.as_slice());
        }
        (coords.max_z(v.as_slice()), ratio)
    });
    let worst_z = per_vector.iter().map(|(z, _)| *z).fold(0.0, f64::max);
    let (worst_ratio, worst_se) =
        per_vector
            .iter()
            .map(|(_, r)| (r.mean(), r.stderr()))
            .fold((0.0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
    let bound = omega * VARIANCE_MARGIN;
    let unbiased = worst_z <= z_max;
    let bounded = worst_ratio <= bound;
    Ok(Report {
        check: "moments".into(),
        status: if unbiased && bounded { CheckStatus::Pass } else { CheckStatus::Fail },
        statistic: worst_ratio,
        bound,
        stderr: worst_se,
        detail: format!(
            "d={d}, ω={omega:.4}, worst unbiasedness z={worst_z:.2} (limit {z_max:.2}), worst variance ratio {worst_ratio:.4}"
        ),
    })
}

/// Mean over workers of `E||g_i(x_i) − ∇F(x_i)||²` for a batch, i.e. the
/// smallest `σ²/b` satisfying the noise assumption at these points.
fn noise_about_global(problem: &Problem, points: &[ParamVector], batch: BatchSpec) -> f64 {
    let n = problem.num_workers();
    let b = if batch.full_batch { f64::INFINITY } else { batch.b as f64 };
    (0..n)
        .map(|i| {
            let x = &points[i.min(points.len() - 1)];
            let local = problem.grad_worker_unchecked(i, x);
            let global = problem.grad_full_unchecked(x);
            problem.sigma_sq_worker(i, x) / b + local.dist_sq(&global)
        })
        .sum::<f64>()
        / n as f64
}

/// Mean over workers of `E||g_i(x_i) − ∇F_i(x_i)||²` for a batch.
fn noise_about_local(problem: &Problem, points: &[ParamVector], batch: BatchSpec) -> f64 {
    if batch.full_batch {
        return 0.0;
    }
    let n = problem.num_workers();
    (0..n).map(|i| problem.sigma_sq_worker(i, &points[i.min(points.len() - 1)])).sum::<f64>()
        / (n as f64 * batch.b as f64)
}

/// Second moment of the compressed aggregate without uplink memory,
/// `E||(1/N) Σ C_up(g_i(ŵ))||² ≤ (1 + ω_up/N)||∇F(ŵ)||² + σ²(1 + ω_up)/(Nb)`,
/// with `σ²/b` measured exactly at `ŵ`.
pub fn check_grad_sto_lemma(
    problem: &Problem,
    up: &CompressorSpec,
    batch: BatchSpec,
    w_hat: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<Report> {
    if w_hat.dim() != problem.dim() {
        return Err(Error::Dimension { expected: problem.dim(), got: w_hat.dim() });
    }
    let n = problem.num_workers();
    let root = RngRoot::new(seed);
    let mut second = Running::new();
    for t in 0..trials {
        let mut agg = ParamVector::zeros(problem.dim());
        for i in 0..n {
            let mut g_rng = root.replay_stream(Phase::Grad, t as u64, i as u64, 0);
            let g = problem.grad_stochastic_unchecked(i, w_hat, batch, &mut g_rng);
            let mut c_rng = root.replay_stream(Phase::Up, t as u64, i as u64, 0);
            agg.add_assign(&up.compress(&g, &mut c_rng).0);
        }
        agg.scale_mut(1.0 / n as f64);
        second.push(agg.norm_sq());
    }
    let grad_sq = problem.grad_full_unchecked(w_hat).norm_sq();
    let sigma_over_b = noise_about_global(problem, std::slice::from_ref(w_hat), batch);
    let nf = n as f64;
    let bound = (1.0 + up.omega / nf) * grad_sq + sigma_over_b * (1.0 + up.omega) / nf;
    let stat = second.mean();
    let ok = stat <= bound * (1.0 + 1e-12) + BOUND_Z * second.stderr();
    Ok(Report {
        check: "grad_sto".into(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        statistic: stat,
        bound,
        stderr: second.stderr(),
        detail: format!("N={n}, ω_up={:.4}, ||∇F(ŵ)||²={grad_sq:.6e}, σ²/b={sigma_over_b:.6e}", up.omega),
    })
}

/// Engine states after `stride, 2·stride, …` rounds.
pub fn sample_states(
    engine: &Engine<'_>,
    w0: &ParamVector,
    seed: u64,
    count: usize,
    stride: u64,
) -> Result<Vec<AlgoState>> {
    let mut state = engine.init_state(w0, seed)?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        for _ in 0..stride.max(1) {
            engine.step(&mut state);
            if state.diverged {
                return Err(Error::Precondition("trajectory diverged while sampling states".into()));
            }
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// One-step control of `Υ`: from each state, redraw the downlink that built
/// `ŵ_k, H_k` and the following uplink, and compare the mean of `Υ_{k+1}`
/// with `(1 − α/2)Υ_k + 2γ²(1/α + ω_up/N)E||∇F(ŵ_k)||² + 2γ²σ²(1 + ω_up)/(Nb)`.
/// Requires `γ ≤ 1/(8ω_dwn L)` and `α_dwn ≤ 1/(8ω_dwn)`.
pub fn check_contraction(engine: &Engine<'_>, states: &[AlgoState], trials: usize) -> Result<Report> {
    const CHECK: &str = "contraction";
    let cfg = &engine.cfg;
    if cfg.downlink != Downlink::Memory || cfg.single_averaged.is_some() {
        return Ok(Report::not_applicable(CHECK, "needs a per-group downlink memory"));
    }
    let problem = engine.problem;
    let (omega_up, omega_dwn) = (cfg.up.omega, cfg.dwn.omega);
    let l = problem.l;
    let alpha = cfg.alpha_dwn;
    for s in states {
        let gamma = engine.gamma_at(s.k);
        if omega_dwn > 0.0
            && (gamma > 1.0 / (8.0 * omega_dwn * l) * (1.0 + 1e-12) || alpha > 1.0 / (8.0 * omega_dwn) * (1.0 + 1e-12))
        {
            return Ok(Report::not_applicable(
                CHECK,
                format!("γ={gamma:.3e}, α_dwn={alpha:.3e} outside γ ≤ 1/(8ω_dwn L), α_dwn ≤ 1/(8ω_dwn)"),
            ));
        }
        if s.k == 0 {
            return Err(Error::Precondition("states must follow at least one round".into()));
        }
    }
    let nf = cfg.workers as f64;
    let results = par_map(states, |_, s| -> Result<(f64, f64, f64, f64)> {
        let gamma = engine.gamma_at(s.k);
        let ups_prev = metrics::upsilon(cfg, s);
        let mut excess = Running::new();
        let mut raw = Running::new();
        for r in 1..=trials as u64 {
            let redrawn = engine.redo_downlink(s, r)?;
            let (after, _) = engine.advance(&redrawn, r, r);
            let ups_next = metrics::upsilon(cfg, &after);
            let grad_sq = mean_over_workers(&redrawn.w_hat, |x| problem.grad_full_unchecked(x).norm_sq());
            let sigma_over_b = noise_about_global(problem, &redrawn.w_hat, engine.batch);
            let rhs_random = 2.0 * gamma * gamma * (1.0 / alpha.max(f64::MIN_POSITIVE) + omega_up / nf) * grad_sq
                + 2.0 * gamma * gamma * sigma_over_b * (1.0 + omega_up) / nf;
            let rhs_random = if omega_dwn == 0.0 { 0.0 } else { rhs_random };
            excess.push(ups_next - rhs_random);
            raw.push(ups_next);
        }
        let bound = (1.0 - alpha / 2.0) * ups_prev;
        Ok((excess.mean() - bound, excess.stderr(), raw.mean(), bound))
    });
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    let mut failures = 0;
    for r in results {
        let (gap, se, mean, bound) = r?;
        if gap > BOUND_Z * se + 1e-12 * bound.abs().max(f64::MIN_POSITIVE) {
            failures += 1;
        }
        if gap - BOUND_Z * se > worst.0 - BOUND_Z * worst.1 {
            worst = (gap, se, mean, bound);
        }
    }
    Ok(Report {
        check: CHECK.into(),
        status: if failures == 0 { CheckStatus::Pass } else { CheckStatus::Fail },
        statistic: worst.0,
        bound: 0.0,
        stderr: worst.1,
        detail: format!(
            "{failures} of {} states violate the bound; worst state E[Υ_(k+1)]={:.6e}, contraction term {:.6e}",
            states.len(),
            worst.2,
            worst.3
        ),
    })
}

fn mean_over_workers(rows: &[ParamVector], f: impl Fn(&ParamVector) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

/// For quadratics the downlink perturbation averages out of the gradient:
/// `E[∇F(ŵ_k)] = ∇F(w_k)` over redrawn downlinks.
pub fn check_quadratic_unbiased_grad(engine: &Engine<'_>, state: &AlgoState, trials: usize) -> Result<Report> {
    const CHECK: &str = "quadratic_unbiased";
    let problem = engine.problem;
    if !problem.family.is_quadratic() {
        return Ok(Report::not_applicable(CHECK, "the identity holds for quadratic objectives only"));
    }
    let target = problem.grad_full_unchecked(&state.w);
    let d = problem.dim();
    let mut per_worker: Vec<RunningVec> = vec![RunningVec::new(d); engine.cfg.workers];
    for r in 1..=trials as u64 {
        let redrawn = engine.redo_downlink(state, r)?;
        for (acc, x) in per_worker.iter_mut().zip(&redrawn.w_hat) {
            acc.push(problem.grad_full_unchecked(x).as_slice());
        }
    }
    let z_max = simultaneous_z(engine.cfg.workers * d, FAMILY_ALPHA, UNBIASED_Z);
    let worst = per_worker.iter().map(|acc| acc.max_z(target.as_slice())).fold(0.0, f64::max);
    Ok(Report {
        check: CHECK.into(),
        status: if worst <= z_max { CheckStatus::Pass } else { CheckStatus::Fail },
        statistic: worst,
        bound: z_max,
        stderr: 1.0,
        detail: format!("worst per-coordinate z-score over {} workers", engine.cfg.workers),
    })
}

/// One-step control of the uplink memories:
/// `E[Ξ_{k+1}] ≤ (1 − α_up)Ξ_k + (2α_up L/N)·(1/N)Σ_i⟨∇F_i(ŵ^i) − ∇F_i(w*), ŵ^i − w*⟩
/// + 2σ²α_up/(Nb)`, with `L = max_i L_i`. Requires `α_up(1 + ω_up) ≤ 1`.
pub fn check_xi_recursion(engine: &Engine<'_>, states: &[AlgoState], trials: usize) -> Result<Report> {
    const CHECK: &str = "xi_recursion";
    let cfg = &engine.cfg;
    let problem = engine.problem;
    let a = cfg.alpha_up;
    if a * (1.0 + cfg.up.omega) > 1.0 + 1e-12 {
        return Ok(Report::not_applicable(CHECK, format!("α_up(1 + ω_up) = {:.4} > 1", a * (1.0 + cfg.up.omega))));
    }
    if !cfg.name.uses_uplink_memory() || cfg.q < 1.0 {
        return Ok(Report::not_applicable(CHECK, "needs uplink memories under full participation"));
    }
    let nf = cfg.workers as f64;
    let l = problem.l_worker_max;
    let results = par_map(states, |_, s| {
        let xi_prev = metrics::xi(problem, s);
        let mut coupling = 0.0;
        for (i, x) in s.w_hat.iter().enumerate() {
            let g = problem.grad_worker_unchecked(i, x).sub(&problem.grad_at_opt[i]);
            coupling += g.dot(&x.sub(&problem.w_star));
        }
        coupling /= nf;
        let sigma_over_b = noise_about_local(problem, &s.w_hat, engine.batch);
        let bound = (1.0 - a) * xi_prev + 2.0 * a * l / nf * coupling + 2.0 * sigma_over_b * a / nf;
        let mut next_xi = Running::new();
        for r in 1..=trials as u64 {
            let (after, _) = engine.advance(s, r, 0);
            next_xi.push(metrics::xi(problem, &after));
        }
        (next_xi.mean(), next_xi.stderr(), bound, xi_prev)
    });
    let mut failures = 0;
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    for (mean, se, bound, _) in &results {
        let slack = BOUND_Z * se + 1e-12 * bound.abs();
        if *mean > bound + slack {
            failures += 1;
        }
        let rel = (mean - bound) / bound.abs().max(f64::MIN_POSITIVE);
        if rel > worst.0 {
            worst = (rel, *se, *bound);
        }
    }
    Ok(Report {
        check: CHECK.into(),
        status: if failures == 0 { CheckStatus::Pass } else { CheckStatus::Fail },
        statistic: worst.0,
        bound: 0.0,
        stderr: worst.1,
        detail: format!(
            "{failures} of {} states violate the bound; statistic is the worst relative excess",
            results.len()
        ),
    })
}

/// Names accepted by [`run_suite`].
pub const SUITE: [&str; 5] = ["moments", "grad_sto", "contraction", "quadratic_unbiased", "xi_recursion"];

/// Options for the canonical validation suite.
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Draws per vector in the moment checks.
    pub moment_trials: usize,
    /// Replays per state in the engine checks.
    pub replay_trials: usize,
    pub only: Option<String>,
    /// Replaces the quantizer in the moment check with a biased operator, to
    /// exercise the failure path.
    pub inject_biased_compressor: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 2024, moment_trials: 100_000, replay_trials: 10_000, only: None, inject_biased_compressor: false }
    }
}

/// Quantizer that shrinks its output, so it is biased.
pub struct Shrunk(pub CompressorSpec, pub f64);

impl Compressor for Shrunk {
    fn omega(&self) -> f64 {
        self.0.omega
    }

    fn apply(&self, v: &ParamVector, rng: &mut crate::rng::Stream) -> ParamVector {
        self.0.compress(v, rng).0.scaled(self.1)
    }
}

/// Runs the checks on small canonical problems.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<Report>> {
    if let Some(name) = &opts.only {
        if !SUITE.contains(&name.as_str()) {
            return Err(Error::Unknown { what: "validation check", name: name.clone() });
        }
    }
    let wants = |name: &str| opts.only.as_deref().is_none_or(|o| o == name);
    let moment_trials = opts.moment_trials.max(MIN_MOMENT_TRIALS);
    let trials = opts.replay_trials.max(1);
    let q1 = CompressorKind::Quantize { s: 1 };
    let mut reports = Vec::new();

    if wants("moments") {
        for kind in
            [CompressorKind::Identity, q1, CompressorKind::Quantize { s: 4 }, CompressorKind::Sparsify { p: 0.1 }]
        {
            let spec = CompressorSpec::new(kind, 20)?;
            let mut r = if opts.inject_biased_compressor && kind == q1 {
                check_compressor_moments(&Shrunk(spec, 0.9), 20, moment_trials, opts.seed)?
            } else {
                check_compressor_moments(&spec, 20, moment_trials, opts.seed)?
            };
            r.check = format!("moments[{kind}]");
            reports.push(r);
        }
    }

    let quad = synth_problem(
        Family::Quadratic,
        10,
        10,
        4,
        Hetero::None,
        opts.seed,
        SynthOptions { noise_std: 0.0, condition: 4.0 },
    )?;
    let w0 = ParamVector::zeros(10);

    if wants("grad_sto") {
        let lsr = synth_problem(
            Family::Lsr,
            10,
            50,
            4,
            Hetero::None,
            opts.seed,
            SynthOptions { noise_std: 0.5, condition: 2.0 },
        )?;
        let up = CompressorSpec::new(q1, 10)?;
        let probe = ParamVector::from_vec_unchecked(vec![1.0; 10]);
        reports.push(check_grad_sto_lemma(&lsr, &up, BatchSpec::minibatch(5), &probe, trials, opts.seed)?);
    }

    if wants("contraction") || wants("quadratic_unbiased") {
        let dwn = CompressorSpec::new(q1, 10)?;
        let omega = dwn.omega;
        let cfg = AlgoConfig::new(AlgoName::Mcm, q1, q1).with_alpha_dwn(1.0 / (8.0 * omega));
        let gamma = 1.0 / (8.0 * omega * quad.l);
        let policy = StepPolicy::new(gamma, GammaPolicy::Constant { gamma })?;
        let engine = Engine::new(&quad, &cfg, policy, BatchSpec::full())?;
        let states =
            sample_states(&engine, &w0.add(&ParamVector::from_vec_unchecked(vec![1.0; 10])), opts.seed, 20, 5)?;
        if wants("contraction") {
            reports.push(check_contraction(&engine, &states, trials)?);
        }
        if wants("quadratic_unbiased") {
            reports.push(check_quadratic_unbiased_grad(&engine, &states[0], trials)?);
        }
    }

    if wants("xi_recursion") {
        let het = synth_problem(
            Family::Lsr,
            10,
            40,
            5,
            Hetero::ShiftedMeans { delta: 0.5 },
            opts.seed,
            SynthOptions { noise_std: 0.0, condition: 1.0 },
        )?;
        let cfg = AlgoConfig::new(AlgoName::Mcm, q1, q1);
        let policy = StepPolicy::new(1.0 / het.l, GammaPolicy::Constant { gamma: 1.0 / (2.0 * het.l) })?;
        let engine = Engine::new(&het, &cfg, policy, BatchSpec::full())?;
        let states = sample_states(&engine, &ParamVector::zeros(10), opts.seed, 20, 5)?;
        reports.push(check_xi_recursion(&engine, &states, trials)?);
    }
    Ok(reports)
}
