mod common;

use permsep::bsseval::{decompose, score, score_decomposition, CLIP_DB};
use permsep::dsp::Waveform;
use permsep::permutation::Permutation;
use proptest::prelude::*;
use rand::Rng;

fn w(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, 8000).unwrap()
}

fn mixed_estimate(rng: &mut rand_chacha::ChaCha8Rng, s: &[Waveform; 2]) -> Waveform {
    let len = s[0].len();
    let (a, b) = (rng.gen_range(0.2..1.5), rng.gen_range(-0.8..0.8));
    let noise = rng.gen_range(0.0..0.3);
    w((0..len)
        .map(|n| a * s[0].samples[n] + b * s[1].samples[n] + noise * rng.gen_range(-1.0..1.0))
        .collect())
}

#[test]
fn orthonormal_case() {
    let mut a = vec![0.0; 16];
    let mut b = vec![0.0; 16];
    a[0] = 1.0;
    b[1] = 1.0;
    let est = w(vec![1.0, 0.5]
        .into_iter()
        .chain(std::iter::repeat(0.0).take(14))
        .collect());
    let d = decompose(&est, &[w(a), w(b)], 0).unwrap();
    let s = score_decomposition(&d);
    let expected = 10.0 * 4f64.log10();
    assert!((s.sdr_db - expected).abs() < 1e-12);
    assert!((s.sir_db - expected).abs() < 1e-12);
    assert_eq!(s.sar_db, CLIP_DB);
}

#[test]
fn matches_exact_oracle() {
    let mut rng = common::rng(31);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let len = rng.gen_range(64..256);
        let s = [
            common::random_waveform(&mut rng, len),
            common::random_waveform(&mut rng, len),
        ];
        let est = mixed_estimate(&mut rng, &s);
        for target in 0..2 {
            let got = score_decomposition(&decompose(&est, &s, target).unwrap());
            let want = common::exact_bss_scores(&est.samples, &s[0].samples, &s[1].samples, target);
            for (g, e) in [got.sdr_db, got.sir_db, got.sar_db].iter().zip(want) {
                worst = worst.max((g - e).abs());
            }
        }
    }
    assert!(worst < 1e-6, "worst {worst} dB");
}

#[test]
fn assignment_routes_estimates_to_targets() {
    let mut rng = common::rng(32);
    let s = [
        common::random_waveform(&mut rng, 128),
        common::random_waveform(&mut rng, 128),
    ];
    let swapped = [s[1].clone(), s[0].clone()];
    let scores = score(&swapped, &s, &Permutation::new(vec![1, 0]).unwrap()).unwrap();
    assert!(scores.per_source.iter().all(|x| x.sdr_db == CLIP_DB));
    let wrong = score(&swapped, &s, &Permutation::identity(2)).unwrap();
    assert!(wrong.mean_sdr() < 0.0);
}

#[test]
fn mismatched_lengths_are_rejected() {
    let s = [w(vec![1.0; 10]), w(vec![0.5; 10])];
    assert!(decompose(&w(vec![1.0; 9]), &s, 0).is_err());
    assert!(decompose(&w(vec![1.0; 10]), &[w(vec![0.0; 10]), w(vec![1.0; 10])], 0).is_err());
}

#[test]
fn collinear_sources_are_regularized() {
    let a = w((0..32).map(|n| (n as f64 * 0.3).sin()).collect());
    let b = a.scaled(2.0);
    let est = a.scaled(0.7);
    let d = decompose(&est, &[a, b], 0).unwrap();
    assert!(d.regularized);
    assert!(score_decomposition(&d).sdr_db.is_finite());
}

proptest! {
    #[test]
    fn decomposition_is_additive(seed in 0u64..10_000, len in 16usize..300) {
        let mut rng = common::rng(seed);
        let s = [common::random_waveform(&mut rng, len), common::random_waveform(&mut rng, len)];
        let est = mixed_estimate(&mut rng, &s);
        let d = decompose(&est, &s, 0).unwrap();
        let scale = est.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for n in 0..len {
            let sum = d.s_target[n] + d.e_interf[n] + d.e_artif[n];
            prop_assert!((sum - est.samples[n]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn scores_are_scale_invariant(seed in 0u64..10_000, gain in 0.01f64..100.0) {
        let mut rng = common::rng(seed);
        let s = [common::random_waveform(&mut rng, 200), common::random_waveform(&mut rng, 200)];
        let est = mixed_estimate(&mut rng, &s);
        let a = score_decomposition(&decompose(&est, &s, 1).unwrap());
        let b = score_decomposition(&decompose(&est.scaled(gain), &s, 1).unwrap());
        prop_assert!((a.sdr_db - b.sdr_db).abs() < 1e-8);
        prop_assert!((a.sir_db - b.sir_db).abs() < 1e-8);
        prop_assert!((a.sar_db - b.sar_db).abs() < 1e-8);
    }
}
