//! Two-talker mixture datasets.
//!
//! Utterances come from a WAV corpus (`<dir>/<speaker>/*.wav`) or from the
//! built-in pseudo-speech generator. Each utterance is silence-trimmed, the
//! longer of a pair is cut to the shorter, the interferer is scaled to a
//! uniformly drawn SIR and the two are summed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{self, dequantize, quantize, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Largest mixture peak kept without rescaling. Slightly below 1 so that the
/// mixture of two 16-bit sources is itself representable in 16 bits.
pub const PEAK_LIMIT: f64 = 32766.0 / 32768.0;

const SAD_FRAME_SECS: f64 = 0.032;
const SAD_HOP_SECS: f64 = 0.016;
const SAD_THRESHOLD_DB: f64 = -40.0;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable seed derivation from a parent seed and a sequence of tags.
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(parent), |acc, &t| {
        splitmix64(acc ^ splitmix64(t))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrimResult {
    pub waveform: Waveform,
    /// The input had no frame with non-zero energy.
    pub all_silent: bool,
}

/// Removes 32 ms frames (16 ms hop) whose RMS lies more than 40 dB below the
/// loudest frame, keeping every sample covered by at least one active frame.
pub fn speech_activity_trim(w: &Waveform) -> Result<TrimResult> {
    if w.is_empty() {
        return Err(Error::Domain("cannot trim an empty waveform".into()));
    }
    let frame = ((SAD_FRAME_SECS * w.sample_rate as f64).round() as usize).max(1);
    let hop = ((SAD_HOP_SECS * w.sample_rate as f64).round() as usize).max(1);
    let starts: Vec<usize> = (0..)
        .map(|k| k * hop)
        .take_while(|&s| s < w.len())
        .collect();
    let rms: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let seg = &w.samples[s..(s + frame).min(w.len())];
            (seg.iter().map(|x| x * x).sum::<f64>() / seg.len() as f64).sqrt()
        })
        .collect();
    let peak = rms.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        log::warn!("speech activity trim: input is entirely silent");
        return Ok(TrimResult {
            waveform: Waveform::zeros(0, w.sample_rate),
            all_silent: true,
        });
    }
    let threshold = peak * 10f64.powf(SAD_THRESHOLD_DB / 20.0);
    let mut keep = vec![false; w.len()];
    for (&s, &r) in starts.iter().zip(&rms) {
        if r >= threshold {
            keep[s..(s + frame).min(w.len())]
                .iter_mut()
                .for_each(|k| *k = true);
        }
    }
    let samples = w
        .samples
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&x, _)| x)
        .collect();
    Ok(TrimResult {
        waveform: Waveform {
            samples,
            sample_rate: w.sample_rate,
        },
        all_silent: false,
    })
}

/// A target and an interferer summed at a requested SIR.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub sources: [Waveform; 2],
    pub requested_sir_db: f64,
}

impl Mixture {
    /// `10 log10(P_target / P_interferer)` of the stored sources.
    pub fn measured_sir_db(&self) -> f64 {
        10.0 * (self.sources[0].power() / self.sources[1].power()).log10()
    }

    /// 16-bit form in which the mixture is exactly the integer sum of the sources.
    pub fn quantized(&self) -> [Vec<i16>; 3] {
        let q0: Vec<i16> = self.sources[0]
            .samples
            .iter()
            .map(|&x| quantize(x))
            .collect();
        let q1: Vec<i16> = self.sources[1]
            .samples
            .iter()
            .map(|&x| quantize(x))
            .collect();
        let qm = q0
            .iter()
            .zip(&q1)
            .map(|(&a, &b)| (a as i32 + b as i32).clamp(i16::MIN as i32, i16::MAX as i32) as i16)
            .collect();
        [qm, q0, q1]
    }

    /// Rebuilds a mixture from persisted 16-bit sources.
    pub fn from_quantized(
        q0: &[i16],
        q1: &[i16],
        sample_rate: u32,
        requested_sir_db: f64,
    ) -> Result<Self> {
        if q0.len() != q1.len() {
            return Err(Error::Structure("source lengths differ".into()));
        }
        let s0: Vec<f64> = q0.iter().map(|&q| dequantize(q)).collect();
        let s1: Vec<f64> = q1.iter().map(|&q| dequantize(q)).collect();
        let mix = s0.iter().zip(&s1).map(|(a, b)| a + b).collect();
        Ok(Self {
            mixture: Waveform {
                samples: mix,
                sample_rate,
            },
            sources: [
                Waveform {
                    samples: s0,
                    sample_rate,
                },
                Waveform {
                    samples: s1,
                    sample_rate,
                },
            ],
            requested_sir_db,
        })
    }
}

/// Cuts both signals to the shorter length and scales `b` so that
/// `10 log10(P_a / P_b) = sir_db`.
pub fn mix_pair(a: &Waveform, b: &Waveform, sir_db: f64) -> Result<Mixture> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateSource("empty input".into()));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::Structure(format!(
            "sample rates differ: {} vs {}",
            a.sample_rate, b.sample_rate
        )));
    }
    if !sir_db.is_finite() {
        return Err(Error::Domain(format!("SIR {sir_db} is not finite")));
    }
    let len = a.len().min(b.len());
    let a = a.truncated(len);
    let b = b.truncated(len);
    let (pa, pb) = (a.power(), b.power());
    if pa == 0.0 || pb == 0.0 {
        return Err(Error::DegenerateSource("zero-power source".into()));
    }
    let gain = (pa / (pb * 10f64.powf(sir_db / 10.0))).sqrt();
    let mut s0 = a;
    let mut s1 = b.scaled(gain);
    let peak = s0
        .samples
        .iter()
        .zip(&s1.samples)
        .fold(0.0f64, |m, (x, y)| m.max((x + y).abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        s0 = s0.scaled(g);
        s1 = s1.scaled(g);
    }
    let mixture = Waveform {
        samples: s0
            .samples
            .iter()
            .zip(&s1.samples)
            .map(|(x, y)| x + y)
            .collect(),
        sample_rate: s0.sample_rate,
    };
    Ok(Mixture {
        mixture,
        sources: [s0, s1],
        requested_sir_db: sir_db,
    })
}

/// Lowest f0 of the disjoint per-speaker pitch band.
fn f0_band(speaker: u32) -> (f64, f64) {
    let lo = 85.0 + 11.0 * speaker as f64;
    (lo, lo + 8.0)
}

fn formants(speaker: u32) -> (f64, f64) {
    (
        420.0 + 45.0 * speaker as f64,
        1250.0 + 70.0 * speaker as f64,
    )
}

/// Deterministic pseudo-speech: voiced syllables built from a harmonic stack with
/// a speaker-specific pitch band and formant envelope, drifting f0, syllabic
/// amplitude modulation and short pauses. Normalized to an RMS of 0.1.
pub fn synth_speaker(speaker: u32, duration_secs: f64, seed: u64) -> Result<Waveform> {
    synth_speaker_at(speaker, duration_secs, seed, DEFAULT_SAMPLE_RATE)
}

pub fn synth_speaker_at(
    speaker: u32,
    duration_secs: f64,
    seed: u64,
    sample_rate: u32,
) -> Result<Waveform> {
    if !(duration_secs > 0.0 && duration_secs.is_finite()) {
        return Err(Error::Domain(format!(
            "duration {duration_secs} must be positive"
        )));
    }
    let sr = sample_rate as f64;
    let len = (duration_secs * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[speaker as u64, 0x5ea4]));
    let (f0_lo, f0_hi) = f0_band(speaker);
    let f0_base = rng.gen_range(f0_lo..f0_hi);
    let (f1, f2) = formants(speaker);
    let nyquist = sr / 2.0;
    let max_harmonics = 40;

    let mut out = vec![0.0; len];
    let mut phases = vec![0.0f64; max_harmonics];
    let mut n = 0usize;
    let mut drift = 0.0f64;
    while n < len {
        let syl = ((rng.gen_range(0.12..0.30) * sr) as usize).min(len - n);
        let vowel1 = f1 * rng.gen_range(0.94..1.06);
        let vowel2 = f2 * rng.gen_range(0.95..1.05);
        let vibrato_rate = rng.gen_range(3.0..6.0);
        let vibrato_depth = rng.gen_range(0.01..0.03);
        let level = rng.gen_range(0.6..1.0);
        let glide = rng.gen_range(-0.08..0.08);
        for i in 0..syl {
            let tau = i as f64 / syl as f64;
            drift = (drift + rng.gen_range(-1.0..1.0) * 2e-4).clamp(-0.03, 0.03);
            let t = (n + i) as f64 / sr;
            let f0 = f0_base
                * (1.0 + glide * (tau - 0.5) + drift)
                * (1.0 + vibrato_depth * (2.0 * std::f64::consts::PI * vibrato_rate * t).sin());
            let env = level * (std::f64::consts::PI * tau).sin().powf(0.7);
            let mut v = 0.0;
            for (k, phase) in phases.iter_mut().enumerate() {
                let fk = f0 * (k + 1) as f64;
                if fk >= nyquist * 0.95 {
                    break;
                }
                *phase += 2.0 * std::f64::consts::PI * fk / sr;
                let amp = (-((fk - vowel1) / 180.0).powi(2)).exp()
                    + 0.5 * (-((fk - vowel2) / 260.0).powi(2)).exp()
                    + 0.08 / (k + 1) as f64;
                v += amp * phase.sin();
            }
            out[n + i] = env * v;
        }
        n += syl;
        if n < len && rng.gen_bool(0.25) {
            n += ((rng.gen_range(0.05..0.15) * sr) as usize).min(len - n);
        }
        for p in &mut phases {
            *p %= 2.0 * std::f64::consts::PI;
        }
    }
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.1 / rms);
    }
    Waveform::new(out, sample_rate)
}

/// Magnitude-weighted mean frequency of a waveform, in Hz.
pub fn spectral_centroid(w: &Waveform) -> Result<f64> {
    let spec = dsp::stft_frames(w, 256)?;
    let (mag, _) = dsp::magnitude_phase(&spec);
    let bin_hz = w.sample_rate as f64 / spec.geometry.frame_len as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for row in mag.values.rows() {
        for (k, &m) in row.iter().enumerate() {
            num += k as f64 * bin_hz * m;
            den += m;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic {
        /// Speakers available to train and dev.
        train_speakers: u32,
        /// Held-out speakers used only by test.
        test_speakers: u32,
    },
    WavDir {
        path: PathBuf,
        /// The last `test_speakers` speaker directories (sorted by name) are held out.
        test_speakers: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub sir_min_db: f64,
    pub sir_max_db: f64,
    /// Each utterance is cut to at most this length after silence trimming.
    pub utterance_secs: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub source: CorpusSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train: 20,
            dev: 5,
            test: 5,
            sir_min_db: 0.0,
            sir_max_db: 5.0,
            utterance_secs: 2.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 7,
            source: CorpusSource::Synthetic {
                train_speakers: 12,
                test_speakers: 4,
            },
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sir_min_db.is_finite()
            && self.sir_max_db.is_finite()
            && self.sir_min_db <= self.sir_max_db)
        {
            return Err(Error::Config(
                "SIR range must be finite with min <= max".into(),
            ));
        }
        if self.utterance_secs.is_nan() || self.utterance_secs <= 0.0 {
            return Err(Error::Config("utterance length must be positive".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        match &self.source {
            CorpusSource::Synthetic {
                train_speakers,
                test_speakers,
            } => {
                if *train_speakers < 2 || (self.test > 0 && *test_speakers < 2) {
                    return Err(Error::Config(
                        "each speaker pool needs at least two speakers".into(),
                    ));
                }
            }
            CorpusSource::WavDir { test_speakers, .. } => {
                if self.test > 0 && *test_speakers < 2 {
                    return Err(Error::Config(
                        "test pool needs at least two speakers".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub mixture: PathBuf,
    pub sources: [PathBuf; 2],
    pub requested_sir_db: f64,
    pub speaker_ids: [String; 2],
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub examples: Vec<ManifestEntry>,
    pub global_seed: u64,
    pub sample_rate: u32,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureExample {
    pub id: String,
    pub mix: Mixture,
    pub speaker_ids: [String; 2],
    pub seed: u64,
}

pub fn manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("manifest_{}.json", split.as_str()))
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads every example of a manifest stored at `path`.
    pub fn load_examples(&self, path: &Path) -> Result<Vec<MixtureExample>> {
        let base = path.parent().unwrap_or(Path::new("."));
        self.examples
            .iter()
            .map(|e| load_example(base, e, self.sample_rate))
            .collect()
    }
}

pub fn load_example(
    base: &Path,
    entry: &ManifestEntry,
    sample_rate: u32,
) -> Result<MixtureExample> {
    let (qm, _) = dsp::read_wav_i16(&base.join(&entry.mixture), Some(sample_rate))?;
    let (q0, _) = dsp::read_wav_i16(&base.join(&entry.sources[0]), Some(sample_rate))?;
    let (q1, _) = dsp::read_wav_i16(&base.join(&entry.sources[1]), Some(sample_rate))?;
    let additive = qm.len() == q0.len()
        && q0.len() == q1.len()
        && qm
            .iter()
            .zip(q0.iter().zip(&q1))
            .all(|(&m, (&a, &b))| m as i32 == a as i32 + b as i32);
    if !additive {
        return Err(Error::Structure(format!(
            "example {}: mixture is not the sum of its sources",
            entry.id
        )));
    }
    Ok(MixtureExample {
        id: entry.id.clone(),
        mix: Mixture::from_quantized(&q0, &q1, sample_rate, entry.requested_sir_db)?,
        speaker_ids: entry.speaker_ids.clone(),
        seed: entry.seed,
    })
}

/// Speaker pools for one corpus, with the test pool disjoint from the rest.
enum Pools {
    Synthetic {
        train: Vec<u32>,
        test: Vec<u32>,
    },
    Wav {
        speakers: BTreeMap<String, Vec<PathBuf>>,
        train: Vec<String>,
        test: Vec<String>,
    },
}

fn synthetic_pools(train_speakers: u32, test_speakers: u32) -> (Vec<u32>, Vec<u32>) {
    // held-out speakers are spread across the pitch range rather than at one end
    let total = train_speakers + test_speakers;
    let test: Vec<u32> = (0..test_speakers)
        .map(|j| ((2 * j + 1) as f64 * total as f64 / (2 * test_speakers) as f64) as u32)
        .collect();
    let train = (0..total).filter(|i| !test.contains(i)).collect();
    (train, test)
}

fn scan_corpus(dir: &Path, sample_rate: u32) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let entries = std::fs::read_dir(dir).map_err(|_| Error::Ingestion {
        files: vec![dir.to_path_buf()],
    })?;
    let mut speakers = BTreeMap::new();
    let mut bad = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&path)
            .map_err(|e| Error::io(&path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        for f in &files {
            if dsp::read_wav_i16(f, Some(sample_rate)).is_err() {
                bad.push(f.clone());
            }
        }
        if !files.is_empty() {
            speakers.insert(name, files);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion { files: bad });
    }
    Ok(speakers)
}

fn draw_pair<T: Clone>(rng: &mut ChaCha8Rng, pool: &[T]) -> (T, T) {
    let picked: Vec<&T> = pool.choose_multiple(rng, 2).collect();
    (picked[0].clone(), picked[1].clone())
}

fn prepare_utterance(w: &Waveform, max_len: usize, what: &str) -> Result<Waveform> {
    let trimmed = speech_activity_trim(w)?;
    if trimmed.all_silent || trimmed.waveform.is_empty() {
        return Err(Error::DegenerateSource(format!("{what} is silent")));
    }
    Ok(trimmed.waveform.truncated(max_len))
}

/// Generates one example of a split; a pure function of config, split and index.
pub fn generate_example(
    config: &DatasetConfig,
    split: Split,
    index: usize,
) -> Result<MixtureExample> {
    let pools = build_pools(config)?;
    generate_with_pools(config, &pools, split, index)
}

fn build_pools(config: &DatasetConfig) -> Result<Pools> {
    Ok(match &config.source {
        CorpusSource::Synthetic {
            train_speakers,
            test_speakers,
        } => {
            let (train, test) = synthetic_pools(*train_speakers, *test_speakers);
            Pools::Synthetic { train, test }
        }
        CorpusSource::WavDir {
            path,
            test_speakers,
        } => {
            let speakers = scan_corpus(path, config.sample_rate)?;
            let names: Vec<String> = speakers.keys().cloned().collect();
            if names.len() < test_speakers + 2 {
                return Err(Error::Config(format!(
                    "corpus has {} speakers; need at least {} ({} held out)",
                    names.len(),
                    test_speakers + 2,
                    test_speakers
                )));
            }
            let cut = names.len() - test_speakers;
            Pools::Wav {
                train: names[..cut].to_vec(),
                test: names[cut..].to_vec(),
                speakers,
            }
        }
    })
}

fn generate_with_pools(
    config: &DatasetConfig,
    pools: &Pools,
    split: Split,
    index: usize,
) -> Result<MixtureExample> {
    let seed = derive_seed(config.seed, &[split.tag(), index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = (config.utterance_secs * config.sample_rate as f64).round() as usize;
    let sir = if config.sir_max_db > config.sir_min_db {
        rng.gen_range(config.sir_min_db..config.sir_max_db)
    } else {
        config.sir_min_db
    };
    let (a, b, ids) = match pools {
        Pools::Synthetic { train, test } => {
            let pool = if split == Split::Test { test } else { train };
            let (sa, sb) = draw_pair(&mut rng, pool);
            // extra length makes up for what the silence trim removes
            let secs = config.utterance_secs * 1.4;
            let a = synth_speaker_at(sa, secs, rng.gen(), config.sample_rate)?;
            let b = synth_speaker_at(sb, secs, rng.gen(), config.sample_rate)?;
            (a, b, [format!("syn{sa:03}"), format!("syn{sb:03}")])
        }
        Pools::Wav {
            speakers,
            train,
            test,
        } => {
            let pool = if split == Split::Test { test } else { train };
            let (sa, sb) = draw_pair(&mut rng, pool);
            let fa = speakers[&sa].choose(&mut rng).expect("non-empty speaker");
            let fb = speakers[&sb].choose(&mut rng).expect("non-empty speaker");
            let a = dsp::read_wav(fa, Some(config.sample_rate))?;
            let b = dsp::read_wav(fb, Some(config.sample_rate))?;
            (a, b, [sa, sb])
        }
    };
    let a = prepare_utterance(&a, max_len, &ids[0])?;
    let b = prepare_utterance(&b, max_len, &ids[1])?;
    let mix = mix_pair(&a, &b, sir)?;
    Ok(MixtureExample {
        id: format!("{}_{index:05}", split.as_str()),
        mix,
        speaker_ids: ids,
        seed,
    })
}

/// Per-split manifests written by [`build_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifests {
    pub train: DatasetManifest,
    pub dev: DatasetManifest,
    pub test: DatasetManifest,
}

impl DatasetManifests {
    pub fn get(&self, split: Split) -> &DatasetManifest {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Writes WAV triplets under `out_dir/<split>/` and one manifest per split.
pub fn build_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifests> {
    config.validate()?;
    if !out_dir.is_dir() {
        return Err(Error::io(
            out_dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "output directory does not exist",
            ),
        ));
    }
    let pools = build_pools(config)?;
    let hash = config.hash();
    let mut manifests = Vec::new();
    for split in Split::ALL {
        let dir = out_dir.join(split.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries = Vec::new();
        for index in 0..config.count(split) {
            let ex = generate_with_pools(config, &pools, split, index)?;
            let [qm, q0, q1] = ex.mix.quantized();
            let rel = |suffix: &str| {
                PathBuf::from(split.as_str()).join(format!("{}_{suffix}.wav", ex.id))
            };
            let entry = ManifestEntry {
                mixture: rel("mix"),
                sources: [rel("s1"), rel("s2")],
                id: ex.id.clone(),
                requested_sir_db: ex.mix.requested_sir_db,
                speaker_ids: ex.speaker_ids.clone(),
                seed: ex.seed,
            };
            dsp::write_wav_i16(&out_dir.join(&entry.mixture), &qm, config.sample_rate)?;
            dsp::write_wav_i16(&out_dir.join(&entry.sources[0]), &q0, config.sample_rate)?;
            dsp::write_wav_i16(&out_dir.join(&entry.sources[1]), &q1, config.sample_rate)?;
            entries.push(entry);
        }
        let manifest = DatasetManifest {
            split,
            examples: entries,
            global_seed: config.seed,
            sample_rate: config.sample_rate,
            config_hash: hash.clone(),
        };
        manifest.save(&manifest_path(out_dir, split))?;
        manifests.push(manifest);
    }
    let mut it = manifests.into_iter();
    Ok(DatasetManifests {
        train: it.next().unwrap(),
        dev: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, amp: f64) -> Waveform {
        Waveform::new(
            (0..len).map(|n| amp * (0.3 * n as f64).sin()).collect(),
            8000,
        )
        .unwrap()
    }

    #[test]
    fn trim_removes_padding_silence() {
        let speech = tone(4000, 0.5);
        let mut padded = vec![0.0; 8000];
        padded.extend(&speech.samples);
        padded.extend(vec![0.0; 8000]);
        let out = speech_activity_trim(&Waveform::new(padded, 8000).unwrap()).unwrap();
        assert!(!out.all_silent);
        // active frames may reach one frame into the padding on either side
        assert!(out.waveform.len() >= 4000 && out.waveform.len() <= 4000 + 2 * 256);
    }

    #[test]
    fn trim_keeps_constant_tone() {
        let w = tone(5000, 0.3);
        assert_eq!(speech_activity_trim(&w).unwrap().waveform, w);
    }

    #[test]
    fn trim_reports_all_silent() {
        let out = speech_activity_trim(&Waveform::zeros(1000, 8000)).unwrap();
        assert!(out.all_silent);
        assert!(out.waveform.is_empty());
    }

    #[test]
    fn trim_removes_quiet_gap() {
        let loud = tone(8000, 0.5);
        let quiet = tone(4000, 0.5 * 1e-3);
        let mut samples = loud.samples.clone();
        samples.extend(&quiet.samples);
        samples.extend(&loud.samples);
        let out = speech_activity_trim(&Waveform::new(samples, 8000).unwrap()).unwrap();
        let removed = 20000 - out.waveform.len();
        assert!(
            removed <= 4000 && removed >= 4000 - 2 * 256,
            "removed {removed}"
        );
    }

    #[test]
    fn mix_scale_examples() {
        let a = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], 8000).unwrap();
        let b = Waveform::new(vec![-1.0, -1.0, 1.0, 1.0], 8000).unwrap();
        let m = mix_pair(&a, &b, 0.0).unwrap();
        // peak 2 exceeds the limit, so everything is scaled jointly
        let g = PEAK_LIMIT / 2.0;
        assert_eq!(m.sources[0].samples[0], g);
        assert_eq!(m.sources[1].samples[0], -g);

        let t = Waveform::new(vec![0.1, -0.1, 0.1, -0.1], 8000).unwrap();
        let m = mix_pair(&t, &a, 5.0).unwrap();
        let rms = m.sources[1].power().sqrt();
        assert!((rms - 0.1 * 10f64.powf(-5.0 / 20.0)).abs() < 1e-15);
        assert!((rms - 0.05623).abs() < 1e-5);
    }

    #[test]
    fn mix_truncates_and_rejects_degenerate() {
        let m = mix_pair(&tone(100, 0.1), &tone(60, 0.1), 2.0).unwrap();
        assert_eq!(m.mixture.len(), 60);
        assert!(matches!(
            mix_pair(&tone(10, 0.1), &Waveform::zeros(10, 8000), 0.0),
            Err(Error::DegenerateSource(_))
        ));
    }

    #[test]
    fn synth_is_deterministic_and_sized() {
        let a = synth_speaker(3, 1.0, 42).unwrap();
        let b = synth_speaker(3, 1.0, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8000);
        assert_ne!(a, synth_speaker(3, 1.0, 43).unwrap());
    }

    #[test]
    fn synth_centroids_separate_speakers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pairs = 0;
        while pairs < 20 {
            let (i, j) = (rng.gen_range(0..16u32), rng.gen_range(0..16u32));
            if i.abs_diff(j) < 2 {
                continue;
            }
            let ci = spectral_centroid(&synth_speaker(i, 1.0, rng.gen()).unwrap()).unwrap();
            let cj = spectral_centroid(&synth_speaker(j, 1.0, rng.gen()).unwrap()).unwrap();
            assert!((ci - cj).abs() > 20.0, "{i}:{ci} {j}:{cj}");
            assert_eq!(ci < cj, i < j);
            pairs += 1;
        }
    }

    #[test]
    fn synthetic_pools_are_disjoint() {
        let (train, test) = synthetic_pools(12, 4);
        assert_eq!(train.len(), 12);
        assert_eq!(test.len(), 4);
        assert!(test.iter().all(|t| !train.contains(t)));
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
    }
}
