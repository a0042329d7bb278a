//! Epoch loop: forward, permutation errors, objective, backward, Adam.
//!
//! Updates are per utterance in a seeded shuffled order. The objective is
//! maximized by minimizing its negation; in trainable mode gamma is the last
//! coordinate of the optimized vector and is projected back to `>= 0` after
//! every step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Geometry, MagSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::losses::{self, GammaParam, LossMode, Normalization};
use crate::mixgen::{derive_seed, DatasetManifest, MixtureExample};
use crate::permutation::{error_table, Reduction};
use crate::separator::{self, Mode, SeparatorConfig, SeparatorModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub cv_improvement_threshold: f64,
    pub dropout: f64,
    pub loss_mode: LossMode,
    pub gamma_init: f64,
    pub seed: u64,
    pub reduction: Reduction,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.0005,
            lr_decay_factor: 0.7,
            cv_improvement_threshold: 0.003,
            dropout: 0.2,
            loss_mode: LossMode::Pit,
            gamma_init: 1.0,
            seed: 0,
            reduction: Reduction::Sum,
            normalization: Normalization::InverseGamma,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr decay factor must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if !(self.gamma_init >= 0.0 && self.gamma_init.is_finite()) {
            return Err(Error::Config("gamma_init must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn initial_gamma(&self) -> GammaParam {
        match self.loss_mode {
            LossMode::SoftminTrainable => GammaParam::trainable(self.gamma_init),
            _ => GammaParam::constant(self.gamma_init),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub cv_objective: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
    /// Gamma at the end of the epoch.
    pub gamma: f64,
    pub flip_rate: f64,
    pub wall_time_secs: f64,
}

impl EpochRecord {
    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_objective.to_bits() == other.train_objective.to_bits()
            && self.cv_objective.to_bits() == other.cv_objective.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
            && self.gamma.to_bits() == other.gamma.to_bits()
            && self.flip_rate.to_bits() == other.flip_rate.to_bits()
    }
}

pub fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`, minimizing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Counts consecutive epochs whose cv improvement fell below the threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LrHistory {
    pub streak: usize,
}

/// Multiplies `lr` by `factor` once two successive improvements fall below
/// `threshold`, then starts counting again.
pub fn lr_schedule_step(
    prev_cv: f64,
    curr_cv: f64,
    history: &mut LrHistory,
    lr: f64,
    factor: f64,
    threshold: f64,
) -> f64 {
    if curr_cv - prev_cv < threshold {
        history.streak += 1;
    } else {
        history.streak = 0;
    }
    if history.streak >= 2 {
        history.streak = 0;
        lr * factor
    } else {
        lr
    }
}

pub type Selections = BTreeMap<String, usize>;

/// Fraction of examples whose selected permutation index changed.
pub fn flip_rate(prev: &Selections, curr: &Selections) -> Result<f64> {
    if prev.len() != curr.len() || prev.keys().zip(curr.keys()).any(|(a, b)| a != b) {
        return Err(Error::Structure(
            "selection maps cover different examples".into(),
        ));
    }
    if prev.is_empty() {
        return Ok(0.0);
    }
    let changed = prev
        .iter()
        .zip(curr.values())
        .filter(|((_, a), b)| a != b)
        .count();
    Ok(changed as f64 / prev.len() as f64)
}

/// Spectral features of one mixture, computed once.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub id: String,
    pub mixture: MagSpectrogram,
    pub phase: Array2<f64>,
    pub sources: Vec<MagSpectrogram>,
    pub source_waveforms: Vec<Waveform>,
    pub mixture_waveform: Waveform,
}

impl PreparedExample {
    pub fn geometry(&self) -> &Geometry {
        &self.mixture.geometry
    }
}

pub fn prepare(example: &MixtureExample, frame_ms: f64) -> Result<PreparedExample> {
    let spec = dsp::stft(&example.mix.mixture, frame_ms, 0.5)?;
    let (mixture, phase) = dsp::magnitude_phase(&spec);
    let sources = example
        .mix
        .sources
        .iter()
        .map(|s| dsp::stft(s, frame_ms, 0.5).map(|x| dsp::magnitude_phase(&x).0))
        .collect::<Result<_>>()?;
    Ok(PreparedExample {
        id: example.id.clone(),
        mixture,
        phase,
        sources,
        source_waveforms: example.mix.sources.to_vec(),
        mixture_waveform: example.mix.mixture.clone(),
    })
}

pub fn load_split(manifest_path: &Path, frame_ms: f64) -> Result<Vec<PreparedExample>> {
    let manifest = DatasetManifest::load(manifest_path)?;
    manifest
        .load_examples(manifest_path)?
        .iter()
        .map(|e| prepare(e, frame_ms))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<PreparedExample>,
    pub dev: Vec<PreparedExample>,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub model_config: SeparatorConfig,
    pub train_config: TrainConfig,
    pub params: Vec<f64>,
    pub gamma: GammaParam,
    pub adam: Adam,
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub lr: f64,
    pub lr_history: LrHistory,
    pub prev_cv: f64,
    pub prev_selections: Selections,
    pub records: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Structure(format!(
                "checkpoint version {} is not supported",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[derive(Clone, Debug, Serialize)]
struct NonFiniteDump<'a> {
    example_id: &'a str,
    epoch: usize,
    what: &'a str,
    objective: f64,
    errors: &'a [f64],
    gamma: f64,
}

/// Per-example objective, selected permutation and the errors behind them.
struct StepOutcome {
    objective: f64,
    selection: usize,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: SeparatorModel,
    pub gamma: GammaParam,
    pub config: TrainConfig,
    adam: Adam,
    lr: f64,
    lr_history: LrHistory,
    epoch: usize,
    prev_cv: f64,
    prev_selections: Selections,
    pub records: Vec<EpochRecord>,
    /// Hash of the experiment configuration, carried into checkpoints.
    pub config_hash: String,
    /// Where a diagnostic dump is written on a non-finite abort.
    pub dump_dir: Option<PathBuf>,
}

impl Trainer {
    /// Starts a run. The initial model is evaluated once so that the first
    /// epoch has a cv baseline and reference selections for its flip rate.
    pub fn new(model: SeparatorModel, config: TrainConfig, data: &TrainData) -> Result<Self> {
        config.validate()?;
        if model.config.dropout != config.dropout {
            return Err(Error::Config(format!(
                "model dropout {} differs from training dropout {}",
                model.config.dropout, config.dropout
            )));
        }
        check_data(&model, data)?;
        let gamma = config.initial_gamma();
        let slots = model.params.len() + usize::from(gamma.trainable);
        let mut trainer = Self {
            adam: Adam::new(slots),
            lr: config.learning_rate,
            lr_history: LrHistory::default(),
            epoch: 0,
            prev_cv: 0.0,
            prev_selections: Selections::new(),
            records: Vec::new(),
            config_hash: String::new(),
            dump_dir: None,
            model,
            gamma,
            config,
        };
        trainer.prev_cv = trainer.cv_objective(&data.dev)?;
        trainer.prev_selections = trainer.eval_selections(&data.train)?;
        Ok(trainer)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train_config.validate()?;
        let model = SeparatorModel::from_params(ck.model_config, ck.params)?;
        let slots = model.params.len() + usize::from(ck.gamma.trainable);
        if ck.adam.m.len() != slots || ck.adam.v.len() != slots {
            return Err(Error::Structure(
                "optimizer state does not match model".into(),
            ));
        }
        Ok(Self {
            model,
            gamma: ck.gamma,
            config: ck.train_config,
            adam: ck.adam,
            lr: ck.lr,
            lr_history: ck.lr_history,
            epoch: ck.epoch,
            prev_cv: ck.prev_cv,
            prev_selections: ck.prev_selections,
            records: ck.records,
            config_hash: ck.config_hash,
            dump_dir: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            model_config: self.model.config,
            train_config: self.config.clone(),
            params: self.model.params.clone(),
            gamma: self.gamma,
            adam: self.adam.clone(),
            epoch: self.epoch,
            lr: self.lr,
            lr_history: self.lr_history,
            prev_cv: self.prev_cv,
            prev_selections: self.prev_selections.clone(),
            records: self.records.clone(),
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn objective(
        &self,
        ex: &PreparedExample,
        mode: Mode,
        seed: u64,
    ) -> Result<(losses::LossResult, separator::ForwardTrace)> {
        let (outs, trace) = separator::forward(&self.model, &ex.mixture, mode, seed)?;
        let table = error_table(&ex.sources, &outs, self.config.reduction)?;
        let res = losses::evaluate(
            &table,
            self.config.loss_mode,
            &self.gamma,
            self.config.normalization,
        )?;
        Ok((res, trace))
    }

    /// Mean objective over `examples` with the network in eval mode.
    pub fn cv_objective(&self, examples: &[PreparedExample]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for ex in examples {
            let (res, _) = self.objective(ex, Mode::Eval, 0)?;
            if !res.objective.is_finite() {
                return Err(self.non_finite(ex, "cv objective", &res));
            }
            sum += res.objective;
        }
        Ok(sum / examples.len() as f64)
    }

    fn eval_selections(&self, examples: &[PreparedExample]) -> Result<Selections> {
        examples
            .iter()
            .map(|ex| {
                let (res, _) = self.objective(ex, Mode::Eval, 0)?;
                Ok((ex.id.clone(), res.table.argmin_index))
            })
            .collect()
    }

    fn non_finite(&self, ex: &PreparedExample, what: &str, res: &losses::LossResult) -> Error {
        let dump = NonFiniteDump {
            example_id: &ex.id,
            epoch: self.epoch,
            what,
            objective: res.objective,
            errors: &res.table.errors,
            gamma: self.gamma.value,
        };
        log::error!(
            "non-finite {what} on example {} in epoch {}: {}",
            ex.id,
            self.epoch,
            serde_json::to_string(&dump).unwrap_or_default()
        );
        if let Some(dir) = &self.dump_dir {
            let path = dir.join("nonfinite_dump.json");
            if let Ok(text) = serde_json::to_string_pretty(&dump) {
                let _ = std::fs::write(path, text);
            }
        }
        Error::NonFinite {
            example_id: ex.id.clone(),
            what: what.into(),
        }
    }

    fn step(&mut self, ex: &PreparedExample, index: usize) -> Result<StepOutcome> {
        let seed = derive_seed(self.config.seed, &[self.epoch as u64, index as u64, 0xd0]);
        let (res, trace) = self.objective(ex, Mode::Train, seed)?;
        if !res.objective.is_finite() {
            return Err(self.non_finite(ex, "objective", &res));
        }
        let neg: Vec<Array2<f64>> = res.grad_wrt_outputs.iter().map(|g| -g).collect();
        let n = self.model.params.len();
        let mut grads = vec![0.0; self.adam.m.len()];
        separator::backward_into(&self.model, &trace, &neg, &mut grads[..n])?;
        if self.gamma.trainable {
            grads[n] = -res.grad_wrt_gamma;
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(self.non_finite(ex, "gradient", &res));
        }
        if self.gamma.trainable {
            let mut all = std::mem::take(&mut self.model.params);
            all.push(self.gamma.value);
            self.adam.step(&mut all, &grads, self.lr);
            self.gamma.value = all.pop().expect("gamma slot");
            self.gamma.project();
            self.model.params = all;
        } else {
            self.adam.step(&mut self.model.params, &grads, self.lr);
        }
        Ok(StepOutcome {
            objective: res.objective,
            selection: res.table.argmin_index,
        })
    }

    pub fn run_epoch(&mut self, data: &TrainData) -> Result<EpochRecord> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[self.epoch as u64, 0x5f]));
        order.shuffle(&mut rng);

        let lr = self.lr;
        let mut total = 0.0;
        let mut selections = Selections::new();
        for &i in &order {
            let ex = &data.train[i];
            let out = self.step(ex, i)?;
            total += out.objective;
            selections.insert(ex.id.clone(), out.selection);
        }
        let train_objective = total / data.train.len().max(1) as f64;
        let cv = self.cv_objective(&data.dev)?;
        let flips = flip_rate(&self.prev_selections, &selections)?;
        self.lr = lr_schedule_step(
            self.prev_cv,
            cv,
            &mut self.lr_history,
            self.lr,
            self.config.lr_decay_factor,
            self.config.cv_improvement_threshold,
        );
        self.prev_cv = cv;
        self.prev_selections = selections;
        let record = EpochRecord {
            epoch: self.epoch,
            train_objective,
            cv_objective: cv,
            lr,
            gamma: self.gamma.value,
            flip_rate: flips,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} train {:.4} cv {:.4} lr {:.3e} gamma {:.4} flips {:.3}",
            record.epoch,
            record.train_objective,
            record.cv_objective,
            record.lr,
            record.gamma,
            record.flip_rate
        );
        self.records.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }
}

fn check_data(model: &SeparatorModel, data: &TrainData) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::Structure("training split is empty".into()));
    }
    for ex in data.train.iter().chain(&data.dev) {
        if ex.mixture.num_bins() != model.config.bins {
            return Err(Error::Structure(format!(
                "example {} has {} bins, model expects {}",
                ex.id,
                ex.mixture.num_bins(),
                model.config.bins
            )));
        }
        if ex.sources.len() != model.config.sources {
            return Err(Error::Structure(format!(
                "example {} has {} sources, model produces {}",
                ex.id,
                ex.sources.len(),
                model.config.sources
            )));
        }
    }
    Ok(())
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.csv";

/// Runs the remaining epochs, writing `checkpoint.json` and `train_log.csv`
/// into `out_dir` after each one when given.
pub fn run(trainer: &mut Trainer, data: &TrainData, out_dir: Option<&Path>) -> Result<()> {
    trainer.dump_dir = out_dir.map(Path::to_path_buf);
    while !trainer.is_done() {
        trainer.run_epoch(data)?;
        if let Some(dir) = out_dir {
            trainer.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
            write_log(&dir.join(LOG_FILE), &trainer.records)?;
        }
    }
    Ok(())
}

/// Trains from scratch; returns the final model, gamma and per-epoch records.
pub fn train(
    model: SeparatorModel,
    data: &TrainData,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(SeparatorModel, GammaParam, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model, config.clone(), data)?;
    run(&mut trainer, data, out_dir)?;
    Ok((trainer.model, trainer.gamma, trainer.records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub id: String,
    pub e_z1: f64,
    pub e_z2: f64,
}

/// Both permutation errors of every example in eval mode (two sources only).
pub fn export_error_pairs(
    model: &SeparatorModel,
    examples: &[PreparedExample],
    reduction: Reduction,
) -> Result<Vec<ErrorPair>> {
    if model.config.sources != 2 {
        return Err(Error::Structure(
            "error pairs need exactly two sources".into(),
        ));
    }
    examples
        .iter()
        .map(|ex| {
            let (outs, _) = separator::forward(model, &ex.mixture, Mode::Eval, 0)?;
            let table = error_table(&ex.sources, &outs, reduction)?;
            Ok(ErrorPair {
                id: ex.id.clone(),
                e_z1: table.errors[0],
                e_z2: table.errors[1],
            })
        })
        .collect()
}

pub fn write_error_pairs(path: &Path, rows: &[ErrorPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_matches_scalar_reference() {
        // f(x) = (x - 3)^2
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.05);
        let mut x_ref = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut adam = Adam::new(1);
        let mut x = [0.0f64];
        for t in 1..=200 {
            let g = 2.0 * (x_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            x_ref -= lr * mhat / (vhat.sqrt() + eps);

            let g = [2.0 * (x[0] - 3.0)];
            adam.step(&mut x, &g, lr);
            assert!((x[0] - x_ref).abs() <= 1e-12, "step {t}");
        }
    }

    #[test]
    fn lr_rule_examples() {
        let apply = |imps: &[f64]| {
            let mut h = LrHistory::default();
            let mut lr = 0.0005;
            let mut cv = 0.0;
            let mut trail = vec![];
            for d in imps {
                lr = lr_schedule_step(cv, cv + d, &mut h, lr, 0.7, 0.003);
                cv += d;
                trail.push(lr);
            }
            trail
        };
        assert!((apply(&[0.002, 0.002])[1] - 0.00035).abs() < 1e-15);
        assert_eq!(apply(&[0.01, 0.001]), vec![0.0005, 0.0005]);
        let t = apply(&[0.001; 4]);
        assert!((t[1] - 0.00035).abs() < 1e-15);
        assert!((t[3] - 0.000245).abs() < 1e-15);
        assert_eq!(t[2], t[1]);
    }

    #[test]
    fn lr_rule_counts_regressions() {
        let mut h = LrHistory::default();
        let lr = lr_schedule_step(1.0, 0.5, &mut h, 1.0, 0.5, 0.003);
        let lr = lr_schedule_step(0.5, 0.2, &mut h, lr, 0.5, 0.003);
        assert_eq!(lr, 0.5);
    }

    fn sel(pairs: &[(&str, usize)]) -> Selections {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn flip_rate_examples() {
        let a = sel(&[("a", 0), ("b", 1)]);
        assert_eq!(flip_rate(&a, &a).unwrap(), 0.0);
        assert_eq!(flip_rate(&a, &sel(&[("a", 1), ("b", 0)])).unwrap(), 1.0);
        let prev: Selections = (0..10).map(|i| (format!("{i}"), 0)).collect();
        let mut curr = prev.clone();
        for i in 0..3 {
            curr.insert(format!("{i}"), 1);
        }
        assert!((flip_rate(&prev, &curr).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(
            flip_rate(&a, &sel(&[("a", 0), ("c", 1)])),
            Err(Error::Structure(_))
        ));
    }
}
