use mcm_core::algorithms::{GammaPolicy, StepPolicy};
use mcm_core::compressors::CompressorKind;
use mcm_core::experiment::{run_experiment, AlgoEntry, Batch, ExperimentConfig, GammaSpec, ProblemBlock, RunOptions};
use mcm_core::metrics::{lyapunov, lyapunov_heterogeneous, phi, record_iteration, PhiParams, PhiVariant};
use mcm_core::problems::synth_problem;
use mcm_core::rng::{Phase, RngRoot};
use mcm_core::{AlgoConfig, AlgoName, BatchSpec, Engine, Family, Hetero, ParamVector, SynthOptions};
use proptest::prelude::*;

const Q1: CompressorKind = CompressorKind::Quantize { s: 1 };
const VARIANTS: [PhiVariant; 5] =
    [PhiVariant::Base, PhiVariant::Ghost, PhiVariant::Heterog, PhiVariant::Noncvx, PhiVariant::RandQuadratic];

fn params(gamma: f64, up: f64, dwn: f64) -> PhiParams {
    PhiParams { gamma, l: 1.0, omega_up: up, omega_dwn: dwn, workers: 20, alpha_dwn: 0.1, c: 1.0, k: 100.0 }
}

#[test]
fn lyapunov_by_hand() {
    let p =
        synth_problem(Family::Lsr, 2, 10, 2, Hetero::None, 3, SynthOptions { noise_std: 0.2, condition: 1.0 }).unwrap();
    let cfg = AlgoConfig::new(AlgoName::RandMcm, Q1, Q1);
    let policy = StepPolicy::new(1.0, GammaPolicy::Constant { gamma: 0.1 }).unwrap();
    let e = Engine::new(&p, &cfg, policy, BatchSpec::minibatch(2)).unwrap();
    let mut s = e.init_state(&ParamVector::new(vec![0.7, -0.4]).unwrap(), 5).unwrap();
    for _ in 0..4 {
        e.step(&mut s);
    }
    let omega = 2f64.sqrt().min(2.0);
    let ups: f64 = s.memory_prev.iter().map(|h| s.w.dist_sq(h)).sum::<f64>() / 2.0;
    let want = s.w.dist_sq(&p.w_star) + 32.0 * 0.1 * p.l * omega * omega * ups;
    let r = record_iteration(&p, &e.cfg, &s, 0.1);
    assert!((r.upsilon - ups).abs() <= 1e-15 * ups.max(1.0));
    assert!((r.lyapunov - want).abs() <= 1e-13 * want);
    assert_eq!(lyapunov(&p, &e.cfg, &s.w, ups, 0.1), r.lyapunov);

    let (a_up, a_dwn) = (e.cfg.alpha_up, e.cfg.alpha_dwn);
    let c2 = 4.0 * omega / a_dwn;
    let c1 = 2.0 * omega * (1.0 + 8.0 * 0.1 * p.l * omega / a_dwn) / a_up;
    let het = s.w.dist_sq(&p.w_star) + 0.01 * c1 * r.xi + 0.1 * p.l * c2 * ups;
    assert!((lyapunov_heterogeneous(&p, &e.cfg, &s, 0.1) - het).abs() <= 1e-13 * het);
}

#[test]
fn heterogeneous_lyapunov_without_compression_is_the_distance() {
    let p =
        synth_problem(Family::Lsr, 3, 10, 2, Hetero::ShiftedMeans { delta: 0.3 }, 3, SynthOptions::default()).unwrap();
    let cfg = AlgoConfig::new(AlgoName::Sgd, CompressorKind::Identity, CompressorKind::Identity);
    let e =
        Engine::new(&p, &cfg, StepPolicy::new(1.0, GammaPolicy::Constant { gamma: 0.1 }).unwrap(), BatchSpec::full())
            .unwrap();
    let mut s = e.init_state(&ParamVector::new(vec![0.7, -0.4, 0.2]).unwrap(), 5).unwrap();
    e.step(&mut s);
    assert_eq!(lyapunov_heterogeneous(&p, &e.cfg, &s, 0.1), s.w.dist_sq(&p.w_star));
}

#[test]
fn initial_memory_error_uses_the_first_draw() {
    let p =
        synth_problem(Family::Lsr, 3, 20, 4, Hetero::ShiftedMeans { delta: 0.4 }, 2, SynthOptions::default()).unwrap();
    let cfg = AlgoConfig::new(AlgoName::Mcm, Q1, Q1);
    let policy = StepPolicy::new(1.0, GammaPolicy::Constant { gamma: 0.1 }).unwrap();
    let batch = BatchSpec::minibatch(4);
    let e = Engine::new(&p, &cfg, policy, batch).unwrap();
    let w0 = ParamVector::new(vec![0.5, 0.1, -0.2]).unwrap();
    let seed = 31;
    let r = record_iteration(&p, &e.cfg, &e.init_state(&w0, seed).unwrap(), 0.1);
    let root = RngRoot::new(seed);
    let want: f64 = (0..4)
        .map(|i| {
            let g = p.grad_stochastic(i, &w0, batch, &mut root.stream(Phase::InitGrad, i as u64, 0)).unwrap();
            g.dist_sq(&p.grad_at_opt[i])
        })
        .sum::<f64>()
        / 16.0;
    assert!((r.xi - want).abs() <= 1e-14 * want);
    assert_eq!(r.upsilon, 0.0);
}

#[test]
fn optimum_with_exact_memories_has_zero_diagnostics() {
    let p =
        synth_problem(Family::Lsr, 3, 20, 4, Hetero::ShiftedMeans { delta: 0.4 }, 2, SynthOptions::default()).unwrap();
    let cfg = AlgoConfig::new(AlgoName::Mcm, Q1, Q1);
    let policy = StepPolicy::new(1.0, GammaPolicy::Constant { gamma: 0.1 }).unwrap();
    let e = Engine::new(&p, &cfg, policy, BatchSpec::full()).unwrap();
    let mut s = e.init_state(&p.w_star, 0).unwrap();
    s.h = p.grad_at_opt.clone();
    let r = record_iteration(&p, &e.cfg, &s, 0.1);
    assert!(r.excess_loss.abs() < 1e-12);
    assert_eq!(r.xi, 0.0);
}

#[test]
fn phi_examples() {
    assert_eq!(phi(PhiVariant::Base, &params(0.3, 0.0, 0.0)).unwrap(), 1.0);
    assert_eq!(phi(PhiVariant::Base, &params(1.0 / 64.0, 1.0, 1.0)).unwrap(), 4.0);
    let (n, up, gamma, dwn, k) = (20.0, 3.0, 0.5, 2.0, 5.0);
    let term = |c: f64| {
        let p = PhiParams { gamma, l: 1.0, omega_up: up, omega_dwn: dwn, workers: 20, alpha_dwn: 0.1, c, k };
        phi(PhiVariant::RandQuadratic, &p).unwrap() / (1.0 + up) - 1.0
    };
    let ratio = term(n) / term(1.0);
    let want = (1.0 / n + up / n) / (1.0 + up / n);
    assert!((ratio - want).abs() <= 1e-13);
}

proptest! {
    #[test]
    fn phi_is_monotone(gamma in 0.0f64..1.0, up in 0.0f64..50.0, dwn in 0.0f64..50.0, step in 0.0f64..2.0) {
        for v in VARIANTS {
            let here = phi(v, &params(gamma, up, dwn)).unwrap();
            prop_assert!(phi(v, &params(gamma + step, up, dwn)).unwrap() >= here);
            prop_assert!(phi(v, &params(gamma, up + step, dwn)).unwrap() >= here);
            prop_assert!(phi(v, &params(gamma, up, dwn + step)).unwrap() >= here);
        }
    }
}

#[test]
fn summaries_are_reproducible() {
    let cfg = ExperimentConfig {
        problem: ProblemBlock {
            family: Family::Lsr,
            d: 6,
            n_per_worker: 40,
            workers: 5,
            seed: 3,
            hetero: Hetero::None,
            noise_std: 0.5,
            condition: 2.0,
        },
        algorithms: vec![AlgoEntry::named(AlgoName::Mcm), AlgoEntry::named(AlgoName::Diana)],
        iterations: 80,
        seeds: vec![1, 2, 3, 4, 5],
        batch: Batch(BatchSpec::minibatch(8)),
        gamma: GammaSpec::OverL(0.5),
        up: Q1,
        dwn: Q1,
        w0: None,
        output_dir: "unused".into(),
    };
    let a = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let b = run_experiment(&cfg, &RunOptions { jobs: Some(1), ..RunOptions::default() }).unwrap();
    for (x, y) in a.algorithms.iter().zip(&b.algorithms) {
        assert_eq!(x.summary, y.summary);
        assert!(x.summary.std_log10.iter().all(|s| *s >= 0.0));
        let csv: Vec<String> = x.traces.iter().map(|t| t.to_csv()).collect();
        assert_eq!(csv, y.traces.iter().map(|t| t.to_csv()).collect::<Vec<_>>());
    }
}
