//! Experiment configuration, evaluation, run reports and sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bsseval;
use crate::dsp;
use crate::error::{Error, Result};
use crate::losses::{self, LossMode, Normalization};
use crate::mixgen::{
    self, config_hash, derive_seed, manifest_path, CorpusSource, DatasetConfig, DatasetManifests,
    Split,
};
use crate::permutation::{error_table, Permutation, Reduction};
use crate::separator::{self, InputTransform, Mode, SeparatorConfig, SeparatorModel};
use crate::trainer::{self, EpochRecord, PreparedExample, TrainConfig, TrainData, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub sir_min_db: f64,
    pub sir_max_db: f64,
    pub utterance_secs: f64,
    pub sample_rate: u32,
    pub source: CorpusSource,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            train: d.train,
            dev: d.dev,
            test: d.test,
            sir_min_db: d.sir_min_db,
            sir_max_db: d.sir_max_db,
            utterance_secs: d.utterance_secs,
            sample_rate: d.sample_rate,
            source: d.source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub frame_ms: f64,
    pub shift: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            frame_ms: 8.0,
            shift: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub sources: usize,
    pub softmax: bool,
    pub input_transform: InputTransform,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = SeparatorConfig::default();
        Self {
            hidden: c.hidden,
            sources: c.sources,
            softmax: c.softmax,
            input_transform: c.input_transform,
        }
    }
}

/// Training options; the seed comes from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub cv_improvement_threshold: f64,
    pub dropout: f64,
    pub loss_mode: LossMode,
    pub gamma_init: f64,
    pub reduction: Reduction,
    pub normalization: Normalization,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay_factor: t.lr_decay_factor,
            cv_improvement_threshold: t.cv_improvement_threshold,
            dropout: t.dropout,
            loss_mode: t.loss_mode,
            gamma_init: t.gamma_init,
            reduction: t.reduction,
            normalization: t.normalization,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Score ideal ratio masks instead of the network.
    pub oracle: bool,
    /// Also write both permutation errors of every example.
    pub export_error_pairs: bool,
}

/// One sweep arm: a loss mode with its gamma (or gamma initialization).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArm {
    pub loss_mode: LossMode,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub arms: Vec<SweepArm>,
    pub seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            arms: vec![
                SweepArm {
                    loss_mode: LossMode::Pit,
                    gamma: 0.0,
                },
                SweepArm {
                    loss_mode: LossMode::SoftminConst,
                    gamma: 2.0,
                },
                SweepArm {
                    loss_mode: LossMode::SoftminTrainable,
                    gamma: 1.0,
                },
            ],
            seeds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub out_dir: PathBuf,
    /// Dataset location; `<out_dir>/data` when absent.
    pub data_dir: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            data_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub io: IoSection,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_config().validate()?;
        if self.features.shift != 0.5 {
            return Err(Error::Config(format!(
                "frame shift {} is not supported; only 0.5",
                self.features.shift
            )));
        }
        dsp::frame_len_from_ms(self.features.frame_ms, self.data.sample_rate)?;
        self.separator_config()?.validate()?;
        self.train_config(self.seed).validate()?;
        if self.sweep.seeds == 0 {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, leaving out the `io` paths.
    pub fn hash(&self) -> String {
        config_hash(&Self {
            io: IoSection::default(),
            ..self.clone()
        })
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            train: self.data.train,
            dev: self.data.dev,
            test: self.data.test,
            sir_min_db: self.data.sir_min_db,
            sir_max_db: self.data.sir_max_db,
            utterance_secs: self.data.utterance_secs,
            sample_rate: self.data.sample_rate,
            seed: self.seed,
            source: self.data.source.clone(),
        }
    }

    pub fn bins(&self) -> Result<usize> {
        Ok(dsp::frame_len_from_ms(self.features.frame_ms, self.data.sample_rate)? / 2 + 1)
    }

    pub fn separator_config(&self) -> Result<SeparatorConfig> {
        Ok(SeparatorConfig {
            bins: self.bins()?,
            hidden: self.model.hidden,
            sources: self.model.sources,
            softmax: self.model.softmax,
            dropout: self.train.dropout,
            input_transform: self.model.input_transform,
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lr_decay_factor: t.lr_decay_factor,
            cv_improvement_threshold: t.cv_improvement_threshold,
            dropout: t.dropout,
            loss_mode: t.loss_mode,
            gamma_init: t.gamma_init,
            seed,
            reduction: t.reduction,
            normalization: t.normalization,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.io
            .data_dir
            .clone()
            .unwrap_or_else(|| self.io.out_dir.join("data"))
    }

    /// A small synthetic setup that trains in seconds.
    pub fn toy() -> Self {
        Self {
            data: DataSection {
                train: 12,
                dev: 4,
                test: 4,
                utterance_secs: 0.5,
                ..DataSection::default()
            },
            model: ModelSection {
                hidden: 8,
                ..ModelSection::default()
            },
            train: TrainSection {
                epochs: 3,
                learning_rate: 0.01,
                ..TrainSection::default()
            },
            ..Self::default()
        }
    }
}

/// Generates the dataset into [`ExperimentConfig::data_dir`].
pub fn generate(cfg: &ExperimentConfig) -> Result<DatasetManifests> {
    let dir = cfg.data_dir();
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(Error::io(
                parent,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "output directory does not exist",
                ),
            ));
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    mixgen::build_dataset(&cfg.dataset_config(), &dir)
}

pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<PreparedExample>> {
    trainer::load_split(
        &manifest_path(&cfg.data_dir(), split),
        cfg.features.frame_ms,
    )
}

pub fn load_train_data(cfg: &ExperimentConfig) -> Result<TrainData> {
    Ok(TrainData {
        train: load_split(cfg, Split::Train)?,
        dev: load_split(cfg, Split::Dev)?,
    })
}

/// Model initialization seed for a run seed.
pub fn init_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, &[0x1417])
}

pub fn new_model(cfg: &ExperimentConfig, run_seed: u64) -> Result<SeparatorModel> {
    SeparatorModel::init(cfg.separator_config()?, init_seed(run_seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub slot: usize,
    pub speaker: String,
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
    pub baseline_sdr_db: f64,
    pub baseline_sir_db: f64,
    pub baseline_sar_db: f64,
    /// Output assigned to this slot.
    pub output: usize,
    pub config_hash: String,
}

/// Scores every example: the minimum-error assignment is selected on the
/// magnitudes, each output is inverted with the mixture phase and scored
/// against its assigned source. Rows are per example and source slot.
pub fn evaluate(
    model: Option<&SeparatorModel>,
    examples: &[PreparedExample],
    speakers: &BTreeMap<String, [String; 2]>,
    hash: &str,
) -> Result<Vec<ExampleScore>> {
    let mut rows = Vec::new();
    for ex in examples {
        let outputs = match model {
            Some(m) => {
                if ex.mixture.num_bins() != m.config.bins {
                    return Err(Error::Structure(format!(
                        "example {} has {} bins, model expects {}",
                        ex.id,
                        ex.mixture.num_bins(),
                        m.config.bins
                    )));
                }
                separator::forward(m, &ex.mixture, Mode::Eval, 0)?.0
            }
            None => separator::ideal_ratio_outputs(&ex.mixture, &ex.sources)?,
        };
        let table = error_table(&ex.sources, &outputs, Reduction::Sum)?;
        let z = losses::select_test_permutation(&table);
        let estimates = separator::reconstruct(&outputs, &ex.phase, ex.geometry())?;
        let scores = bsseval::score(&estimates, &ex.source_waveforms, &z)?;
        let n = ex.source_waveforms.len();
        let baseline = bsseval::score(
            &vec![ex.mixture_waveform.clone(); n],
            &ex.source_waveforms,
            &Permutation::identity(n),
        )?;
        let inverse = z.inverse();
        for slot in 0..n {
            let s = &scores.per_source[slot];
            let b = &baseline.per_source[slot];
            rows.push(ExampleScore {
                id: ex.id.clone(),
                slot,
                speaker: speakers
                    .get(&ex.id)
                    .and_then(|p| p.get(slot).cloned())
                    .unwrap_or_default(),
                sdr_db: s.sdr_db,
                sir_db: s.sir_db,
                sar_db: s.sar_db,
                baseline_sdr_db: b.sdr_db,
                baseline_sir_db: b.sir_db,
                baseline_sar_db: b.sar_db,
                output: inverse.mapping()[slot],
                config_hash: hash.to_string(),
            });
        }
    }
    Ok(rows)
}

pub fn speaker_ids(cfg: &ExperimentConfig, split: Split) -> Result<BTreeMap<String, [String; 2]>> {
    let manifest = mixgen::DatasetManifest::load(&manifest_path(&cfg.data_dir(), split))?;
    Ok(manifest
        .examples
        .into_iter()
        .map(|e| (e.id, e.speaker_ids))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotSummary {
    pub slot: usize,
    pub sdr: Stat,
    pub sir: Stat,
    pub sar: Stat,
    pub baseline_sdr: Stat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub examples: usize,
    pub slots: Vec<SlotSummary>,
    /// Mean over examples and slots.
    pub mean_sdr: f64,
    pub mean_baseline_sdr: f64,
}

pub fn summarize(rows: &[ExampleScore]) -> SplitSummary {
    let slots = rows.iter().map(|r| r.slot + 1).max().unwrap_or(0);
    let pick = |slot: usize, f: fn(&ExampleScore) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.slot == slot).map(f).collect()
    };
    let examples = rows.iter().filter(|r| r.slot == 0).count();
    SplitSummary {
        examples,
        slots: (0..slots)
            .map(|s| SlotSummary {
                slot: s,
                sdr: Stat::of(&pick(s, |r| r.sdr_db)),
                sir: Stat::of(&pick(s, |r| r.sir_db)),
                sar: Stat::of(&pick(s, |r| r.sar_db)),
                baseline_sdr: Stat::of(&pick(s, |r| r.baseline_sdr_db)),
            })
            .collect(),
        mean_sdr: Stat::of(&rows.iter().map(|r| r.sdr_db).collect::<Vec<_>>()).mean,
        mean_baseline_sdr: Stat::of(&rows.iter().map(|r| r.baseline_sdr_db).collect::<Vec<_>>())
            .mean,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub loss_mode: LossMode,
    pub gamma_init: f64,
    pub seeds: Vec<u64>,
    pub splits: BTreeMap<String, SplitSummary>,
    pub gamma_trajectory: Vec<f64>,
    pub flip_rates: Vec<f64>,
    pub final_gamma: Option<f64>,
}

impl RunReport {
    pub fn new(hash: &str, tc: &TrainConfig, records: &[EpochRecord]) -> Self {
        Self {
            config_hash: hash.to_string(),
            loss_mode: tc.loss_mode,
            gamma_init: tc.gamma_init,
            seeds: vec![tc.seed],
            splits: BTreeMap::new(),
            gamma_trajectory: records.iter().map(|r| r.gamma).collect(),
            flip_rates: records.iter().map(|r| r.flip_rate).collect(),
            final_gamma: records.last().map(|r| r.gamma),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Combines reports of the same configuration; differing hashes are refused.
pub fn merge_summaries(reports: &[RunReport], split: &str) -> Result<SplitSummary> {
    if let Some(first) = reports.first() {
        if reports.iter().any(|r| r.config_hash != first.config_hash) {
            return Err(Error::Structure(
                "refusing to aggregate reports with different config hashes".into(),
            ));
        }
    }
    let summaries: Vec<&SplitSummary> =
        reports.iter().filter_map(|r| r.splits.get(split)).collect();
    let slots = summaries.iter().map(|s| s.slots.len()).max().unwrap_or(0);
    let over = |f: &dyn Fn(&SplitSummary) -> f64| {
        Stat::of(&summaries.iter().map(|s| f(s)).collect::<Vec<_>>())
    };
    Ok(SplitSummary {
        examples: summaries.iter().map(|s| s.examples).sum(),
        slots: (0..slots)
            .map(|k| SlotSummary {
                slot: k,
                sdr: over(&|s| s.slots[k].sdr.mean),
                sir: over(&|s| s.slots[k].sir.mean),
                sar: over(&|s| s.slots[k].sar.mean),
                baseline_sdr: over(&|s| s.slots[k].baseline_sdr.mean),
            })
            .collect(),
        mean_sdr: over(&|s| s.mean_sdr).mean,
        mean_baseline_sdr: over(&|s| s.mean_baseline_sdr).mean,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| trainer::csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| trainer::csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| trainer::csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| trainer::csv_error(path, e))
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: SeparatorModel,
    pub records: Vec<EpochRecord>,
    pub report: RunReport,
    pub test_scores: Vec<ExampleScore>,
}

/// Trains one run and evaluates it on `test`.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    tc: &TrainConfig,
    data: &TrainData,
    test: &[PreparedExample],
    speakers: &BTreeMap<String, [String; 2]>,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let hash = cfg.hash();
    let model = new_model(cfg, tc.seed)?;
    let mut t = Trainer::new(model, tc.clone(), data)?;
    t.config_hash = hash.clone();
    trainer::run(&mut t, data, out_dir)?;
    let test_scores = evaluate(Some(&t.model), test, speakers, &hash)?;
    let mut report = RunReport::new(&hash, &t.config, &t.records);
    report
        .splits
        .insert(Split::Test.as_str().into(), summarize(&test_scores));
    Ok(RunOutcome {
        model: t.model,
        records: t.records,
        report,
        test_scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub loss_mode: LossMode,
    pub gamma: f64,
    pub seed: u64,
    pub final_gamma: f64,
    pub sdr_spk1: f64,
    pub sdr_spk2: f64,
    pub sir_spk1: f64,
    pub sir_spk2: f64,
    pub sar_spk1: f64,
    pub sar_spk2: f64,
    pub mean_sdr: f64,
    pub mean_baseline_sdr: f64,
    pub max_flip_rate: f64,
    pub config_hash: String,
}

/// Means over seeds of one arm; one row per arm in the order given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTableRow {
    pub loss_mode: LossMode,
    pub gamma: f64,
    pub runs: usize,
    pub sdr_spk1: f64,
    pub sdr_spk2: f64,
    pub sir_spk1: f64,
    pub sir_spk2: f64,
    pub sar_spk1: f64,
    pub sar_spk2: f64,
    pub mean_sdr: f64,
    pub mean_final_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub table: Vec<SweepTableRow>,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunReport>,
    pub baseline_sdr: f64,
}

/// Worker count for sweeps: `PERMSEP_THREADS` if set, else the available cores.
pub fn sweep_workers(jobs: usize) -> usize {
    let cap = std::env::var("PERMSEP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

pub fn sweep_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.sweep.seeds as u64).map(|i| cfg.seed + i).collect()
}

/// Trains and evaluates every arm for every seed. Each run is serial and
/// deterministic; runs are spread over [`sweep_workers`] threads and
/// collected in (arm, seed) order.
pub fn sweep(
    cfg: &ExperimentConfig,
    data: &TrainData,
    test: &[PreparedExample],
    speakers: &BTreeMap<String, [String; 2]>,
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    let seeds = sweep_seeds(cfg);
    let jobs: Vec<(SweepArm, u64)> = cfg
        .sweep
        .arms
        .iter()
        .flat_map(|a| seeds.iter().map(move |&s| (*a, s)))
        .collect();
    let run_one = |(arm, seed): (SweepArm, u64)| -> Result<RunOutcome> {
        let mut tc = cfg.train_config(seed);
        tc.loss_mode = arm.loss_mode;
        tc.gamma_init = arm.gamma;
        let dir = match out_dir {
            Some(d) => {
                let dir = d.join(format!("{}_g{}_s{}", arm.loss_mode, arm.gamma, seed));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                Some(dir)
            }
            None => None,
        };
        log::info!(
            "sweep run {} gamma {} seed {}",
            arm.loss_mode,
            arm.gamma,
            seed
        );
        train_and_evaluate(cfg, &tc, data, test, speakers, dir.as_deref())
    };

    let workers = sweep_workers(jobs.len());
    let mut results: Vec<Option<Result<RunOutcome>>> = (0..jobs.len()).map(|_| None).collect();
    if workers <= 1 {
        for (slot, job) in results.iter_mut().zip(&jobs) {
            *slot = Some(run_one(*job));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let r = run_one(jobs[i]);
                    done.lock().expect("sweep results")[i] = Some(r);
                });
            }
        });
    }

    let hash = cfg.hash();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for ((arm, seed), r) in jobs.iter().zip(results) {
        let out = r.expect("every job ran")?;
        let test_summary = &out.report.splits[Split::Test.as_str()];
        let slot = |k: usize| test_summary.slots.get(k).cloned().unwrap_or_default();
        rows.push(SweepRow {
            loss_mode: arm.loss_mode,
            gamma: arm.gamma,
            seed: *seed,
            final_gamma: out.report.final_gamma.unwrap_or(arm.gamma),
            sdr_spk1: slot(0).sdr.mean,
            sdr_spk2: slot(1).sdr.mean,
            sir_spk1: slot(0).sir.mean,
            sir_spk2: slot(1).sir.mean,
            sar_spk1: slot(0).sar.mean,
            sar_spk2: slot(1).sar.mean,
            mean_sdr: test_summary.mean_sdr,
            mean_baseline_sdr: test_summary.mean_baseline_sdr,
            max_flip_rate: out.report.flip_rates.iter().copied().fold(0.0, f64::max),
            config_hash: hash.clone(),
        });
        runs.push(out.report);
    }
    let table = cfg
        .sweep
        .arms
        .iter()
        .map(|arm| {
            let sel: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.loss_mode == arm.loss_mode && r.gamma == arm.gamma)
                .collect();
            let mean = |f: fn(&SweepRow) -> f64| {
                Stat::of(&sel.iter().map(|r| f(r)).collect::<Vec<_>>()).mean
            };
            SweepTableRow {
                loss_mode: arm.loss_mode,
                gamma: arm.gamma,
                runs: sel.len(),
                sdr_spk1: mean(|r| r.sdr_spk1),
                sdr_spk2: mean(|r| r.sdr_spk2),
                sir_spk1: mean(|r| r.sir_spk1),
                sir_spk2: mean(|r| r.sir_spk2),
                sar_spk1: mean(|r| r.sar_spk1),
                sar_spk2: mean(|r| r.sar_spk2),
                mean_sdr: mean(|r| r.mean_sdr),
                mean_final_gamma: mean(|r| r.final_gamma),
            }
        })
        .collect();
    let baseline_sdr = rows.first().map_or(0.0, |r| r.mean_baseline_sdr);
    Ok(SweepReport {
        config_hash: hash,
        seeds,
        table,
        rows,
        runs,
        baseline_sdr,
    })
}
