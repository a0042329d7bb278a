mod common;

use std::collections::BTreeSet;
use std::path::Path;

use permsep::dsp::{self, Waveform};
use permsep::mixgen::{
    build_dataset, generate_example, manifest_path, mix_pair, speech_activity_trim, synth_speaker,
    CorpusSource, DatasetConfig, DatasetManifest, Split,
};
use permsep::Error;
use rand::Rng;

fn tone(len: usize, freq: f64, amp: f64) -> Waveform {
    Waveform::new(
        (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 8000.0).sin())
            .collect(),
        8000,
    )
    .unwrap()
}

#[test]
fn gap_at_minus_sixty_db_is_removed() {
    let utt = synth_speaker(2, 1.0, 5).unwrap();
    let trimmed_alone = speech_activity_trim(&utt).unwrap().waveform.len();
    let mut samples = utt.samples[..4000].to_vec();
    let peak_rms = 0.1 * 10f64.sqrt();
    samples.extend(tone(4000, 440.0, peak_rms * 1e-3).samples);
    samples.extend(&utt.samples[4000..]);
    let w = Waveform::new(samples, 8000).unwrap();
    let out = speech_activity_trim(&w).unwrap();
    let removed = w.len() as i64 - out.waveform.len() as i64;
    let natural = utt.len() as i64 - trimmed_alone as i64;
    // the gap is cut up to one frame of overlap on each side
    assert!(
        (removed - natural - 4000).abs() <= 2 * 256,
        "removed {removed}, natural {natural}"
    );
}

#[test]
fn measured_sir_matches_request_over_1000_pairs() {
    let mut rng = common::rng(3);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let (la, lb) = (rng.gen_range(200..600), rng.gen_range(200..600));
        let gain = rng.gen_range(0.1..3.0);
        let a = common::random_waveform(&mut rng, la);
        let b = common::random_waveform(&mut rng, lb).scaled(gain);
        let sir = rng.gen_range(0.0..5.0);
        let m = mix_pair(&a, &b, sir).unwrap();
        let [qm, q0, q1] = m.quantized();
        let stored = permsep::mixgen::Mixture::from_quantized(&q0, &q1, 8000, sir).unwrap();
        assert_eq!(qm.len(), q0.len(), "pair {i}");
        worst = worst.max((stored.measured_sir_db() - sir).abs());
    }
    assert!(worst < 0.1, "worst deviation {worst} dB");
}

#[test]
fn interferer_scale_closed_form() {
    let a = tone(800, 500.0, 2f64.sqrt());
    let b = tone(800, 700.0, 2f64.sqrt());
    // equal powers at 0 dB: the interferer keeps its scale before the joint peak limit
    let m = mix_pair(&a, &b, 0.0).unwrap();
    let ratio = m.sources[1].power() / m.sources[0].power();
    assert!((ratio - 1.0).abs() < 1e-12);
}

fn small_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        train: 20,
        dev: 5,
        test: 5,
        utterance_secs: 0.4,
        seed,
        ..DatasetConfig::default()
    }
}

#[test]
fn dataset_is_byte_identical_and_speaker_disjoint() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config(7);
    let ma = build_dataset(&cfg, a.path()).unwrap();
    build_dataset(&cfg, b.path()).unwrap();
    assert_eq!(common::read_tree(a.path()), common::read_tree(b.path()));

    assert_eq!(ma.train.examples.len(), 20);
    assert_eq!(ma.dev.examples.len(), 5);
    assert_eq!(ma.test.examples.len(), 5);
    let speakers = |m: &DatasetManifest| -> BTreeSet<String> {
        m.examples
            .iter()
            .flat_map(|e| e.speaker_ids.clone())
            .collect()
    };
    let test = speakers(&ma.test);
    assert!(test.is_disjoint(&speakers(&ma.train)));
    assert!(test.is_disjoint(&speakers(&ma.dev)));

    for split in Split::ALL {
        let path = manifest_path(a.path(), split);
        let m = DatasetManifest::load(&path).unwrap();
        for ex in m.load_examples(&path).unwrap() {
            let mix = &ex.mix;
            assert!(common::on_16bit_grid(&mix.mixture.samples));
            for n in 0..mix.mixture.len() {
                assert_eq!(
                    mix.mixture.samples[n] - mix.sources[0].samples[n] - mix.sources[1].samples[n],
                    0.0
                );
            }
            assert!((mix.measured_sir_db() - mix.requested_sir_db).abs() < 0.1);
        }
    }
}

#[test]
fn different_seed_changes_the_data() {
    let a = generate_example(&small_config(1), Split::Train, 0).unwrap();
    let b = generate_example(&small_config(2), Split::Train, 0).unwrap();
    assert_ne!(a.mix, b.mix);
}

#[test]
fn sir_distribution_is_uniform() {
    let cfg = DatasetConfig {
        utterance_secs: 0.05,
        ..small_config(11)
    };
    let sirs: Vec<f64> = (0..1000)
        .map(|i| {
            generate_example(&cfg, Split::Train, i)
                .unwrap()
                .mix
                .requested_sir_db
        })
        .collect();
    assert!(sirs.iter().all(|s| (0.0..=5.0).contains(s)));
    let p = common::ks_uniform_p_value(&sirs, 0.0, 5.0);
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn ks_oracle_rejects_a_skewed_sample() {
    let skewed: Vec<f64> = (0..1000)
        .map(|i| 5.0 * (i as f64 / 1000.0).powi(2))
        .collect();
    assert!(common::ks_uniform_p_value(&skewed, 0.0, 5.0) < 1e-6);
}

fn write_corpus(dir: &Path, speakers: usize, rate: u32) {
    for s in 0..speakers {
        let sd = dir.join(format!("spk{s:02}"));
        std::fs::create_dir_all(&sd).unwrap();
        for u in 0..2 {
            let w = synth_speaker(s as u32, 0.5, u).unwrap();
            let w = Waveform {
                sample_rate: rate,
                ..w
            };
            dsp::write_wav(&sd.join(format!("u{u}.wav")), &w).unwrap();
        }
    }
}

#[test]
fn wav_corpus_is_ingested() {
    let corpus = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 6, 8000);
    let out = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        source: CorpusSource::WavDir {
            path: corpus.path().to_path_buf(),
            test_speakers: 2,
        },
        ..small_config(4)
    };
    let m = build_dataset(&cfg, out.path()).unwrap();
    let test: BTreeSet<_> = m
        .test
        .examples
        .iter()
        .flat_map(|e| e.speaker_ids.clone())
        .collect();
    assert_eq!(
        test,
        BTreeSet::from(["spk04".to_string(), "spk05".to_string()])
    );
}

#[test]
fn unreadable_wavs_are_listed() {
    let corpus = tempfile::tempdir().unwrap();
    write_corpus(corpus.path(), 4, 8000);
    let bad1 = corpus.path().join("spk00").join("broken.wav");
    let bad2 = corpus.path().join("spk01").join("wrong_rate.wav");
    std::fs::write(&bad1, b"not a wav").unwrap();
    dsp::write_wav(&bad2, &Waveform::zeros(100, 16000)).unwrap();
    let cfg = DatasetConfig {
        source: CorpusSource::WavDir {
            path: corpus.path().to_path_buf(),
            test_speakers: 2,
        },
        ..small_config(4)
    };
    let out = tempfile::tempdir().unwrap();
    match build_dataset(&cfg, out.path()) {
        Err(Error::Ingestion { files }) => {
            assert_eq!(files.len(), 2);
            assert!(files.contains(&bad1) && files.contains(&bad2));
        }
        other => panic!("expected ingestion error, got {other:?}"),
    }
    let missing = DatasetConfig {
        source: CorpusSource::WavDir {
            path: corpus.path().join("nope"),
            test_speakers: 2,
        },
        ..small_config(4)
    };
    assert!(matches!(
        build_dataset(&missing, out.path()),
        Err(Error::Ingestion { .. })
    ));
}
