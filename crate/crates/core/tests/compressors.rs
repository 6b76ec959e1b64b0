use mcm_core::compressors::{bit_cost, quantize_s, sparsify_p, CompressorKind, CompressorSpec};
use mcm_core::rng::{Phase, RngRoot};
use mcm_core::stats::{simultaneous_z, Running, RunningVec};
use mcm_core::ParamVector;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

const M: u64 = 100_000;

fn kinds() -> impl Strategy<Value = CompressorKind> {
    prop_oneof![
        Just(CompressorKind::Identity),
        (1u32..16).prop_map(|s| CompressorKind::Quantize { s }),
        (0.05f64..=1.0).prop_map(|p| CompressorKind::Sparsify { p }),
    ]
}

fn vectors() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..40)
}

fn stream(seed: u64) -> mcm_core::rng::Stream {
    RngRoot::new(seed).stream(Phase::Probe, 0, 0)
}

/// Monte-Carlo mean per coordinate and mean of `||C(v) − v||²/||v||²`.
fn moments(spec: &CompressorSpec, v: &ParamVector, seed: u64) -> (RunningVec, Running) {
    let root = RngRoot::new(seed);
    let mut coords = RunningVec::new(v.dim());
    let mut ratio = Running::new();
    for t in 0..M {
        let c = spec.compress(v, &mut root.stream(Phase::Probe, 0, t)).0;
        coords.push(c.as_slice());
        ratio.push(c.dist_sq(v) / v.norm_sq());
    }
    (coords, ratio)
}

fn random_unit(d: usize, seed: u64) -> ParamVector {
    let mut rng = stream(seed);
    let v = ParamVector::new((0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
    v.scaled(1.0 / v.norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_is_a_fixed_point(kind in kinds(), d in 1usize..50, seed in any::<u64>()) {
        let spec = CompressorSpec::new(kind, d).unwrap();
        let (out, _) = spec.compress(&ParamVector::zeros(d), &mut stream(seed));
        prop_assert!(out.is_zero());
    }

    #[test]
    fn quantization_is_positively_homogeneous(v in vectors(), s in 1u32..10, c in 0.01f64..100.0, seed in any::<u64>()) {
        let v = ParamVector::new(v).unwrap();
        let plain = quantize_s(&v, s, &mut stream(seed));
        let scaled = quantize_s(&v.scaled(c), s, &mut stream(seed));
        for (a, b) in scaled.iter().zip(plain.iter()) {
            prop_assert!((a - c * b).abs() <= 1e-9 * (1.0 + (c * b).abs()));
        }
    }

    #[test]
    fn fixed_stream_is_deterministic(kind in kinds(), v in vectors(), seed in any::<u64>()) {
        let v = ParamVector::new(v).unwrap();
        let spec = CompressorSpec::new(kind, v.dim()).unwrap();
        prop_assert_eq!(spec.compress(&v, &mut stream(seed)), spec.compress(&v, &mut stream(seed)));
    }

    #[test]
    fn outputs_keep_support_and_sign(v in vectors(), s in 1u32..10, p in 0.05f64..=1.0, seed in any::<u64>()) {
        let v = ParamVector::new(v).unwrap();
        for out in [quantize_s(&v, s, &mut stream(seed)), sparsify_p(&v, p, &mut stream(seed))] {
            for (o, x) in out.iter().zip(v.iter()) {
                prop_assert!(*o == 0.0 || o.signum() == x.signum());
            }
        }
    }

    #[test]
    fn bit_costs_grow_with_dimension(kind in kinds(), d in 1usize..5000) {
        prop_assert!(bit_cost(kind, d) <= bit_cost(kind, d + 1));
        let sparse = matches!(kind, CompressorKind::Sparsify { .. });
        prop_assert!(bit_cost(kind, d).0 > 0 || sparse);
    }
}

#[test]
fn quantize_four_levels_is_unbiased() {
    let spec = CompressorSpec::quantize(4, 10).unwrap();
    let v = random_unit(10, 5).scaled(3.0);
    let (coords, ratio) = moments(&spec, &v, 1);
    assert!(coords.max_z(v.as_slice()) <= 4.0);
    assert!(ratio.mean() <= spec.omega * 1.02);
}

#[test]
fn sparsify_half_doubles_kept_coordinates() {
    let spec = CompressorSpec::sparsify(0.5, 3).unwrap();
    let v = ParamVector::new(vec![2.0, 0.0, 2.0]).unwrap();
    let (coords, ratio) = moments(&spec, &v, 2);
    assert!(coords.max_z(v.as_slice()) <= 4.0);
    // Each kept coordinate is 4, so the ratio is exactly 1/p − 1 in mean.
    assert!((ratio.mean() - 1.0).abs() <= 4.0 * ratio.stderr());
}

#[test]
fn variance_ratios_at_large_dimension() {
    let q = CompressorSpec::quantize(1, 301).unwrap();
    assert!((q.omega - 17.35).abs() < 0.01);
    let (_, ratio) = moments(&q, &random_unit(301, 3), 3);
    assert!(ratio.mean() <= 17.7, "ratio {}", ratio.mean());

    let s = CompressorSpec::sparsify(0.1, 69).unwrap();
    let (coords, ratio) = moments(&s, &random_unit(69, 4), 4);
    assert!(ratio.mean() <= 9.18, "ratio {}", ratio.mean());
    assert!(coords.max_z(random_unit(69, 4).as_slice()) <= simultaneous_z(69, 1e-3, 4.0));
}

#[test]
fn closed_form_bit_examples() {
    assert_eq!(bit_cost(CompressorKind::Quantize { s: 1 }, 100).0, (32.0 * 10.0 * 100f64.log2()).ceil() as u64);
    assert_eq!(bit_cost(CompressorKind::Quantize { s: 1 }, 100).0, 2127);
    assert_eq!(bit_cost(CompressorKind::Sparsify { p: 0.1 }, 100).0, 10 * (32 + 7));
    assert_eq!(bit_cost(CompressorKind::Identity, 7).0, 224);
}
