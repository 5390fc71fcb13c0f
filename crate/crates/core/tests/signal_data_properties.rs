mod common;

use common::*;
use proptest::prelude::*;
use tinyhr::bench::metrics::{f1_accuracy, mae, rmse};
use tinyhr::bench::LatencyStats;
use tinyhr::data::{assign_splits, split_sizes, Split};
use tinyhr::signal::{
    baseline_correct, downsample, normalize, synth_frame, synth_trace, Frame, SynthParams,
};

fn frame() -> impl Strategy<Value = Frame> {
    prop::collection::vec(-100.0f64..100.0, 2..300).prop_map(|s| Frame::new(s, 12.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn normalize_is_idempotent_and_spans_the_unit_interval(f in frame()) {
        let once = normalize(&f);
        let twice = normalize(&once);
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let lo = once.samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = once.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo.abs() <= 1e-9);
        prop_assert!(hi == 0.0 || (hi - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn downsampling_composes(f in frame(), a in 1usize..5, b in 1usize..5) {
        let direct = downsample(&f, a * b).unwrap();
        let staged = downsample(&downsample(&f, a).unwrap(), b).unwrap();
        prop_assert_eq!(&direct.samples, &staged.samples);
        prop_assert!((direct.rate_hz - staged.rate_hz).abs() <= 1e-12);
    }

    #[test]
    fn detrending_is_a_projection(f in frame()) {
        let once = baseline_correct(&f).unwrap();
        let twice = baseline_correct(&once).unwrap();
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        let (slope, intercept) = line_fit(&once.samples);
        prop_assert!(slope.abs() <= 1e-9);
        prop_assert!(intercept.abs() <= 1e-7);
    }

    #[test]
    fn metrics_match_the_reference_formulas(
        pt in (1usize..200).prop_flat_map(|n| (prop::collection::vec(-300.0f64..300.0, n), prop::collection::vec(-300.0f64..300.0, n)))
    ) {
        let (p, t) = pt;
        let m = mae(&p, &t).unwrap();
        let r = rmse(&p, &t).unwrap();
        prop_assert!((m - mae_oracle(&p, &t)).abs() <= 1e-12 * (1.0 + m));
        prop_assert!((r - rmse_oracle(&p, &t)).abs() <= 1e-12 * (1.0 + r));
        prop_assert!(r + 1e-12 >= m);
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn classification_metrics_match_the_reference(
        pt in (1usize..200).prop_flat_map(|n| (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)))
    ) {
        let (p, t) = pt;
        let (f1, acc) = f1_accuracy(&p, &t).unwrap();
        let (f1_ref, acc_ref) = f1_accuracy_oracle(&p, &t);
        prop_assert!((f1 - f1_ref).abs() <= 1e-12);
        prop_assert!((acc - acc_ref).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&f1) && (0.0..=1.0).contains(&acc));
    }

    #[test]
    fn splits_partition_with_the_declared_sizes(n in 10usize..3000, seed in any::<u64>()) {
        let a = assign_splits(n, seed);
        prop_assert_eq!(a.len(), n);
        let count = |s: Split| a.iter().filter(|&&x| x == s).count();
        let (train, val, test) = split_sizes(n);
        prop_assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (train, val, test));
        prop_assert!((train as f64 - 0.7 * n as f64).abs() <= 1.0 + 1e-9);
        prop_assert!((val as f64 - 0.15 * n as f64).abs() <= 1.0);
        prop_assert_eq!(assign_splits(n, seed), a);
    }

    #[test]
    fn latency_percentiles_are_ordered(samples in prop::collection::vec(0u64..10_000_000, 1..500)) {
        let s = LatencyStats::from_samples(&samples);
        prop_assert!(s.p50_ns <= s.p95_ns && s.p95_ns <= s.max_ns);
        prop_assert_eq!(s.max_ns, *samples.iter().max().unwrap());
    }

    #[test]
    fn generator_is_a_function_of_its_parameters(hr in 40.0f64..180.0, seed in any::<u64>(), noise in 0.0f64..0.3) {
        let p = SynthParams { noise_sigma: noise, ..SynthParams::clean(hr, seed) };
        let bits = |f: &Frame| f.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&synth_frame(&p).unwrap()), bits(&synth_frame(&p).unwrap()));
    }
}

#[test]
fn baseline_residual_of_a_tilted_sine_is_flat() {
    let x: Vec<f64> = (0..69)
        .map(|i| {
            let t = i as f64 / 12.0;
            (std::f64::consts::TAU * 1.2 * t).sin() + 0.5 * t
        })
        .collect();
    let out = baseline_correct(&Frame::new(x, 12.0)).unwrap();
    assert!(line_fit(&out.samples).0.abs() < 1e-9);
}

#[test]
fn truth_matches_a_brute_force_count_on_the_source_waveform() {
    let mut worst: f64 = 0.0;
    for i in 0..300u64 {
        let hr = 40.0 + 140.0 * (i as f64 / 299.0);
        let trace = synth_trace(&SynthParams::clean(hr, 1000 + i)).unwrap();
        let maxima = brute_force_maxima(&trace.source);
        let Some(est) = rate_from_maxima(&maxima, tinyhr::signal::SOURCE_RATE_HZ) else {
            continue;
        };
        worst = worst.max((est - trace.frame.hr_truth.unwrap()).abs());
    }
    assert!(worst <= 1.0, "worst disagreement {worst} BPM");
}
