//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mcm_core::algorithms::{DwnMemoryMode, GammaPolicy, Participation, StepPolicy};
use mcm_core::compressors::{bit_cost, CompressorKind, CompressorSpec};
use mcm_core::experiment::{
    run_experiment, AlgoEntry, AlgoResult, Batch, ExperimentConfig, ExperimentResult, GammaSpec, ProblemBlock,
    RunOptions,
};
use mcm_core::validation::{
    check_compressor_moments, check_contraction, check_xi_recursion, sample_states, CheckStatus,
};
use mcm_core::{AlgoConfig, AlgoName, BatchSpec, Engine, Family, Hetero, ParamVector, RunStatus};
use serde_json::Value;

const Q1: CompressorKind = CompressorKind::Quantize { s: 1 };

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn block(family: Family, d: usize, n: usize, hetero: Hetero, noise_std: f64, condition: f64) -> ProblemBlock {
    ProblemBlock { family, d, n_per_worker: n, workers: 20, seed: 1, hetero, noise_std, condition }
}

fn experiment(
    problem: ProblemBlock,
    algorithms: Vec<AlgoEntry>,
    iterations: u64,
    seeds: u64,
    batch: BatchSpec,
    gamma: GammaSpec,
) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        algorithms,
        iterations,
        seeds: (1..=seeds).collect(),
        batch: Batch(batch),
        gamma,
        up: Q1,
        dwn: Q1,
        w0: None,
        output_dir: "unused".into(),
    }
}

fn run(cfg: &ExperimentConfig) -> ExperimentResult {
    run_experiment(cfg, &RunOptions::default()).expect("experiment runs")
}

fn named(name: &str) -> AlgoEntry {
    AlgoEntry::named(name.parse().expect("known algorithm"))
}

fn level(a: &AlgoResult) -> f64 {
    a.summary.saturation_level.unwrap_or(f64::INFINITY)
}

/// Stochastic least squares shared by the saturation comparisons.
fn noisy_lsr() -> ProblemBlock {
    block(Family::Lsr, 20, 200, Hetero::None, 1.0, 100.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = experiment(
        block(Family::Lsr, 20, 200, Hetero::None, 0.0, 1.0),
        vec![named("MCM")],
        2000,
        5,
        BatchSpec::full(),
        GammaSpec::TimesGammaMax(1.0),
    );
    let problem = cfg.problem.build().unwrap();
    let r = run(&cfg);
    let mcm = &r.algorithms[0];
    let logs = &mcm.summary.mean_log10;
    let decades = logs[0] - logs[2000];
    let mean_v = |k: usize| mcm.traces.iter().map(|t| t.records[k].lyapunov).sum::<f64>() / 5.0;
    let rate = (mean_v(2000) / mean_v(1500)).powf(1.0 / 500.0);
    let gamma = mcm.gamma_max;
    let bound = 1.0 - gamma * problem.mu / 2.0;
    let elapsed = start.elapsed();
    outcome(
        decades >= 6.0 && rate <= bound && within(elapsed, 30),
        format!("decrease {decades:.2} decades (need 6), V rate {rate:.6} vs {bound:.6}, {elapsed:.1?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = experiment(
        noisy_lsr(),
        vec![named("MCM"), named("Diana"), named("Artemis")],
        600,
        5,
        BatchSpec::minibatch(50),
        GammaSpec::OverL(1.0),
    );
    let r = run(&cfg);
    let (mcm, diana, artemis) = (level(&r.algorithms[0]), level(&r.algorithms[1]), level(&r.algorithms[2]));
    let elapsed = start.elapsed();
    outcome(
        (mcm - diana).abs() <= 0.3 && artemis >= mcm + 0.3 && within(elapsed, 120),
        format!("saturation MCM {mcm:.3}, Diana {diana:.3}, Artemis {artemis:.3}, {elapsed:.1?}"),
    )
}

fn criterion_3() -> Outcome {
    let cfg = experiment(
        noisy_lsr(),
        vec![named("MCM"), named("MCM_alpha0"), named("MCM_alpha1")],
        600,
        5,
        BatchSpec::minibatch(50),
        GammaSpec::OverL(1.0),
    );
    let r = run(&cfg);
    let mcm = &r.algorithms[0];
    let sat_mcm = level(mcm);
    let gap_to = |t: &mcm_core::RunTrace, reference: f64| match (t.status, t.saturation_level()) {
        (RunStatus::Diverged, _) => f64::INFINITY,
        (_, Some(a)) => a - reference,
        _ => f64::NEG_INFINITY,
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for ablation in &r.algorithms[1..] {
        let worst = ablation.traces.iter().map(|t| gap_to(t, sat_mcm)).fold(f64::INFINITY, f64::min);
        let paired = ablation
            .traces
            .iter()
            .zip(&mcm.traces)
            .map(|(t, m)| gap_to(t, m.saturation_level().unwrap_or(f64::INFINITY)))
            .fold(f64::INFINITY, f64::min);
        pass &= worst >= 1.0;
        parts.push(format!("{} smallest seed gap {worst:.2} (same-seed {paired:.2})", ablation.label));
    }
    outcome(pass, format!("sat(MCM) {sat_mcm:.3}; {}", parts.join(", ")))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let grid = [
        (CompressorKind::Identity, 10),
        (CompressorKind::Identity, 301),
        (Q1, 10),
        (Q1, 100),
        (Q1, 301),
        (CompressorKind::Quantize { s: 2 }, 20),
        (CompressorKind::Quantize { s: 4 }, 10),
        (CompressorKind::Quantize { s: 8 }, 100),
        (CompressorKind::Sparsify { p: 0.1 }, 69),
        (CompressorKind::Sparsify { p: 0.5 }, 10),
        (CompressorKind::Sparsify { p: 0.25 }, 100),
        (CompressorKind::Sparsify { p: 1.0 }, 5),
    ];
    let failed: Vec<String> = grid
        .iter()
        .filter_map(|&(kind, d)| {
            let spec = CompressorSpec::new(kind, d).unwrap();
            let r = check_compressor_moments(&spec, d, 100_000, 7).unwrap();
            (!r.passed()).then(|| format!("{kind} d={d}: {}", r.detail))
        })
        .collect();
    let elapsed = start.elapsed();
    outcome(
        failed.is_empty() && within(elapsed, 60),
        if failed.is_empty() { format!("{} configurations, {elapsed:.1?}", grid.len()) } else { failed.join("; ") },
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let problem = block(Family::Quadratic, 10, 10, Hetero::None, 0.0, 4.0);
    let problem = ProblemBlock { workers: 4, ..problem }.build().unwrap();
    let omega = CompressorSpec::new(Q1, 10).unwrap().omega;
    let gamma = 1.0 / (8.0 * omega * problem.l);
    let cfg = AlgoConfig::new(AlgoName::Mcm, Q1, Q1).with_alpha_dwn(1.0 / (8.0 * omega));
    let policy = StepPolicy::new(gamma, GammaPolicy::Constant { gamma }).unwrap();
    let engine = Engine::new(&problem, &cfg, policy, BatchSpec::full()).unwrap();
    let w0 = ParamVector::new(vec![1.0; 10]).unwrap();
    let states = sample_states(&engine, &w0, 3, 20, 5).unwrap();
    let r = check_contraction(&engine, &states, 10_000).unwrap();
    let elapsed = start.elapsed();
    outcome(
        r.status == CheckStatus::Pass && within(elapsed, 120),
        format!("{:?}: {} ({} states), {elapsed:.1?}", r.status, r.detail, states.len()),
    )
}

fn criterion_6() -> Outcome {
    let cfg = experiment(noisy_lsr(), vec![], 200, 1, BatchSpec::minibatch(50), GammaSpec::OverL(1.0));
    let problem = cfg.problem.build().unwrap();
    let w0 = ParamVector::zeros(20);
    let id = CompressorKind::Identity;
    let trajectory = |name: AlgoName| {
        let algo = AlgoConfig::new(name, id, id);
        let policy = StepPolicy::new(1.0 / problem.l, GammaPolicy::Constant { gamma: 1.0 / problem.l }).unwrap();
        let engine = Engine::new(&problem, &algo, policy, BatchSpec::minibatch(50)).unwrap();
        engine.run_with(&w0, 11, 200, true).unwrap().iterates
    };
    let reference = trajectory(AlgoName::Sgd);
    let mut worst = (0.0f64, String::new());
    for name in AlgoName::ALL_FIXED.into_iter().chain([AlgoName::RandMcmG(4)]) {
        let w = trajectory(name);
        if w.len() != reference.len() {
            return outcome(false, format!("{name} stopped after {} iterates", w.len()));
        }
        let dev = w
            .iter()
            .zip(&reference)
            .map(|(a, b)| a.dist_sq(b).sqrt() / b.norm().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if dev >= worst.0 {
            worst = (dev, name.to_string());
        }
    }
    outcome(worst.0 <= 1e-12, format!("largest relative deviation {:.2e} ({})", worst.0, worst.1))
}

fn criterion_7() -> Outcome {
    let cfg = experiment(
        block(Family::Quadratic, 20, 20, Hetero::None, 0.0, 10.0),
        vec![named("MCM"), named("RandMCM"), named("RandMCM_G(1)"), named("RandMCM_G(20)")],
        1000,
        10,
        BatchSpec::full(),
        GammaSpec::TimesGammaMax(1.0),
    );
    let r = run(&cfg);
    let final_mean =
        |a: &AlgoResult| a.traces.iter().map(|t| t.records.last().unwrap().excess_loss).sum::<f64>() / 10.0;
    let same = |a: &AlgoResult, b: &AlgoResult| {
        a.traces.iter().zip(&b.traces).all(|(x, y)| x.records == y.records && x.final_w == y.final_w)
    };
    let (mcm, rand) = (final_mean(&r.algorithms[0]), final_mean(&r.algorithms[1]));
    let g1 = same(&r.algorithms[0], &r.algorithms[2]);
    let gn = same(&r.algorithms[1], &r.algorithms[3]);
    outcome(
        rand <= mcm && g1 && gn,
        format!("final excess Rand-MCM {rand:.3e} vs MCM {mcm:.3e}; G=1 matches MCM: {g1}; G=N matches Rand-MCM: {gn}"),
    )
}

fn criterion_8() -> Outcome {
    let cfg = experiment(
        block(Family::Lsr, 20, 200, Hetero::ShiftedMeans { delta: 0.1 }, 0.0, 1.0),
        vec![named("MCM")],
        5000,
        1,
        BatchSpec::full(),
        GammaSpec::TimesGammaMax(1.0),
    );
    let problem = cfg.problem.build().unwrap();
    let prepared = cfg.prepare(&problem).unwrap().remove(0);
    let engine = Engine::new(&problem, &prepared.config, prepared.policy, BatchSpec::full()).unwrap();
    let expected_alpha = 1.0 / (2.0 * (1.0 + engine.cfg.up.omega));
    let trace = engine.run(&ParamVector::zeros(20), 1, 5000).unwrap();
    let xi0 = trace.records[0].xi;
    let hit = trace.records.iter().position(|r| r.xi < 1e-6 * xi0);
    let states = sample_states(&engine, &ParamVector::zeros(20), 1, 20, 5).unwrap();
    let report = check_xi_recursion(&engine, &states, 10_000).unwrap();
    outcome(
        problem.hetero_b_sq > 0.0
            && (engine.cfg.alpha_up - expected_alpha).abs() < 1e-15
            && hit.is_some()
            && report.status == CheckStatus::Pass,
        format!(
            "B² {:.2e}, Ξ below 1e-6·Ξ₀ at k={}, recursion {:?}: {}",
            problem.hetero_b_sq,
            hit.map_or("never".into(), |k| k.to_string()),
            report.status,
            report.detail
        ),
    )
}

fn criterion_9() -> Outcome {
    let pp = Some(Participation::Bernoulli { q: 0.5 });
    let reset = (4.0 * 20f64.sqrt()).round() as u64;
    let mut rand = named("RandMCM");
    rand.participation = pp;
    let mut with_reset = rand.clone();
    with_reset.label = Some("single-reset".into());
    with_reset.dwn_memory_mode = Some(DwnMemoryMode::SingleAveraged { reset_every: Some(reset) });
    let mut no_reset = with_reset.clone();
    no_reset.label = Some("single-no-reset".into());
    no_reset.dwn_memory_mode = Some(DwnMemoryMode::SingleAveraged { reset_every: None });
    let cfg = experiment(
        noisy_lsr(),
        vec![rand, with_reset, no_reset],
        600,
        5,
        BatchSpec::minibatch(50),
        GammaSpec::OverL(1.0),
    );
    let r = run(&cfg);
    let (base, reset_level, free_level) = (level(&r.algorithms[0]), level(&r.algorithms[1]), level(&r.algorithms[2]));
    outcome(
        (reset_level - base).abs() <= 0.5 && free_level >= base + 0.5,
        format!("Rand-MCM {base:.3}, reset every {reset} {reset_level:.3}, never reset {free_level:.3}"),
    )
}

fn criterion_10() -> Outcome {
    let (d, n, k) = (100usize, 20usize, 100u64);
    let problem = block(Family::Lsr, d, 200, Hetero::None, 1.0, 1.0).build().unwrap();
    let bits = |name: AlgoName| {
        let (up, dwn) = name.preset_compressors(Q1, Q1);
        let algo = AlgoConfig::new(name, up, dwn);
        let policy =
            StepPolicy::new(1.0 / problem.l, GammaPolicy::Constant { gamma: 1.0 / (2.0 * problem.l) }).unwrap();
        let engine = Engine::new(&problem, &algo, policy, BatchSpec::minibatch(50)).unwrap();
        let last = *engine.run(&ParamVector::zeros(d), 5, k).unwrap().records.last().unwrap();
        (last.bits_up_cum, last.bits_dwn_cum)
    };
    let quantized = bit_cost(Q1, d).0;
    let dense = bit_cost(CompressorKind::Identity, d).0;
    let (mcm_up, mcm_dwn) = bits(AlgoName::Mcm);
    let (diana_up, diana_dwn) = bits(AlgoName::Diana);
    let exact = mcm_up == k * n as u64 * quantized
        && diana_up == k * n as u64 * quantized
        && mcm_dwn == k * quantized
        && diana_dwn == k * dense;
    let ratio = mcm_dwn as f64 / diana_dwn as f64;
    outcome(
        exact && ratio <= 0.1,
        format!("counters match closed form: {exact}; MCM/Diana downlink bits {mcm_dwn}/{diana_dwn} = {ratio:.3} (need ≤ 0.1)"),
    )
}

fn hand_gamma_max(l: f64, up: f64, dwn: f64, n: f64) -> f64 {
    let inv = |x: f64| if x == 0.0 { f64::INFINITY } else { 1.0 / x };
    let a = inv(2.0 * l * (1.0 + up / n));
    let b = inv(8.0 * l * dwn);
    let c = inv(8.0 * 2f64.sqrt() * l * dwn * (8.0 * dwn + up / n).sqrt());
    a.min(b).min(c)
}

fn cli_gamma_max(l: f64, up: f64, dwn: f64, n: usize) -> Option<f64> {
    let out = Command::new(env!("CARGO_BIN_EXE_mcm"))
        .args(["gamma-max", "--l", &l.to_string(), "--omega-up", &up.to_string(), "--omega-dwn", &dwn.to_string()])
        .args(["--workers", &n.to_string()])
        .output()
        .ok()?;
    let rows: Value = serde_json::from_slice(&out.stdout).ok()?;
    rows[0]["gamma_max"].as_f64()
}

fn criterion_11() -> Outcome {
    let sets =
        [(1.0, 0.0, 0.0, 20), (2.5, 1.0, 1.0, 20), (0.3, 10.0, 3.0, 4), (7.0, 64.0, 64.0, 20), (1.0, 256.0, 256.0, 20)];
    let mut worst = 0.0f64;
    for (l, up, dwn, n) in sets {
        let Some(got) = cli_gamma_max(l, up, dwn, n) else {
            return outcome(false, format!("gamma-max failed for L={l} ω=({up},{dwn}) N={n}"));
        };
        let want = hand_gamma_max(l, up, dwn, n as f64);
        worst = worst.max(((got - want) / want).abs());
    }
    let degenerate = cli_gamma_max(1.0, 0.0, 0.0, 20) == Some(0.5);
    let ratios: Vec<f64> = [64.0, 256.0]
        .iter()
        .map(|&w| {
            cli_gamma_max(1.0, 4.0 * w, 4.0 * w, 20).unwrap_or(f64::NAN)
                / cli_gamma_max(1.0, w, w, 20).unwrap_or(f64::NAN)
        })
        .collect();
    let ratios_ok = ratios.iter().all(|r| (r * 8.0 - 1.0).abs() <= 0.1);
    outcome(
        worst <= 1e-12 && degenerate && ratios_ok,
        format!(
            "largest relative error {worst:.1e}; ω=0 gives 1/(2L): {degenerate}; ratios {:.4} {:.4}",
            ratios[0], ratios[1]
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 11] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
    ];
    let mut failures = 0;
    for (i, check) in criteria.iter().enumerate() {
        let o = check();
        failures += usize::from(!o.pass);
        println!("criterion {}: {} - {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
