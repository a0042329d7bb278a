//! Central finite-difference checks for every analytic gradient in the crate:
//! loss-only (with respect to errors and outputs), end-to-end loss through the
//! separator (with respect to every parameter), and the gamma derivative.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dsp::MagSpectrogram;
use crate::error::Result;
use crate::losses::{self, GammaParam, LossMode, Normalization};
use crate::permutation::{error_table, PermutationErrorTable, Reduction};
use crate::separator::{self, InputTransform, Mode, SeparatorConfig, SeparatorModel};

/// Denominator floor of [`relative_error`]. With `h = 1e-5` a central difference
/// of an objective of magnitude ~10 carries ~1e-10 of rounding noise, so
/// gradients below this floor are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Deliberate corruption of an analytic gradient, used to prove the checker fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    ScaleFirstParameter,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub bins: usize,
    pub hidden: usize,
    pub frames: usize,
    pub sources: usize,
    pub seeds: u64,
    pub step: f64,
    pub tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            bins: 5,
            hidden: 4,
            frames: 3,
            sources: 2,
            seeds: 100,
            step: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates skipped because the perturbation changed the selected permutation.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(seed, coordinate)` pairs above tolerance.
    pub failing: Vec<(u64, usize)>,
}

impl GradCheckReport {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            failing: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }

    fn record(&mut self, seed: u64, index: usize, analytic: f64, numeric: f64, tol: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
        }
        if err.is_nan() || err >= tol {
            self.failing.push((seed, index));
        }
    }
}

fn random_grids(rng: &mut ChaCha8Rng, n: usize, frames: usize, bins: usize) -> Vec<MagSpectrogram> {
    (0..n)
        .map(|_| {
            MagSpectrogram::from_values(Array2::from_shape_fn((frames, bins), |_| {
                rng.gen_range(0.0..1.5)
            }))
        })
        .collect()
}

fn gamma_for(mode: LossMode, rng: &mut ChaCha8Rng) -> GammaParam {
    let value = rng.gen_range(0.5..5.0);
    match mode {
        LossMode::SoftminTrainable => GammaParam::trainable(value),
        _ => GammaParam::constant(value),
    }
}

fn objective(table: &PermutationErrorTable, mode: LossMode, gamma: &GammaParam) -> f64 {
    losses::evaluate(table, mode, gamma, Normalization::InverseGamma)
        .expect("valid loss inputs")
        .objective
}

fn flat(grids: &[MagSpectrogram]) -> Vec<f64> {
    grids
        .iter()
        .flat_map(|g| g.values.iter().copied())
        .collect()
}

fn unflat(x: &[f64], n: usize, frames: usize, bins: usize) -> Vec<MagSpectrogram> {
    x.chunks_exact(frames * bins)
        .take(n)
        .map(|c| {
            MagSpectrogram::from_values(Array2::from_shape_vec((frames, bins), c.to_vec()).unwrap())
        })
        .collect()
}

/// Loss gradients with respect to the error vector and to the outputs.
pub fn check_loss_only(cfg: &GradCheckConfig, mode: LossMode) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(format!("loss_only/{mode}"));
    let (s, t, f) = (cfg.sources, cfg.frames, cfg.bins);
    for seed in 0..cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1055);
        let gamma = gamma_for(mode, &mut rng);
        let labels = random_grids(&mut rng, s, t, f);
        let outputs = random_grids(&mut rng, s, t, f);
        let table = error_table(&labels, &outputs, Reduction::Sum)?;
        let result = losses::evaluate(&table, mode, &gamma, Normalization::InverseGamma)?;

        // with respect to the errors themselves
        let mut by_errors = |e: &[f64]| {
            let t = PermutationErrorTable::from_errors(e.to_vec()).expect("valid errors");
            objective(&t, mode, &gamma)
        };
        let numeric = central_difference(&mut by_errors, &table.errors, cfg.step);
        for (i, (&a, &n)) in result.grad_wrt_errors.iter().zip(&numeric).enumerate() {
            if mode == LossMode::Pit && flips(&table.errors, i, cfg.step) {
                report.skipped += 1;
                continue;
            }
            report.record(seed, i, a, n, cfg.tolerance);
        }

        // with respect to the outputs
        let x0 = flat(&outputs);
        let base_argmin = table.argmin_index;
        let by_outputs = |x: &[f64]| {
            let t = error_table(&labels, &unflat(x, s, t, f), Reduction::Sum).expect("shapes");
            (objective(&t, mode, &gamma), t.argmin_index)
        };
        let analytic = flat(
            &result
                .grad_wrt_outputs
                .iter()
                .map(|g| MagSpectrogram::from_values(g.clone()))
                .collect::<Vec<_>>(),
        );
        let mut probe = x0.clone();
        for i in 0..x0.len() {
            probe[i] = x0[i] + cfg.step;
            let (plus, a1) = by_outputs(&probe);
            probe[i] = x0[i] - cfg.step;
            let (minus, a2) = by_outputs(&probe);
            probe[i] = x0[i];
            if mode == LossMode::Pit && (a1 != base_argmin || a2 != base_argmin) {
                report.skipped += 1;
                continue;
            }
            report.record(
                seed,
                i,
                analytic[i],
                (plus - minus) / (2.0 * cfg.step),
                cfg.tolerance,
            );
        }
    }
    Ok(report)
}

fn flips(errors: &[f64], i: usize, h: f64) -> bool {
    let argmin = |e: &[f64]| {
        let t = PermutationErrorTable::from_errors(e.to_vec()).unwrap();
        t.argmin_index
    };
    let base = argmin(errors);
    let mut e = errors.to_vec();
    e[i] = errors[i] + h;
    let a = argmin(&e);
    e[i] = (errors[i] - h).max(0.0);
    let b = argmin(&e);
    a != base || b != base
}

/// Loss through the separator forward pass, with respect to every parameter.
pub fn check_end_to_end(cfg: &GradCheckConfig, mode: LossMode) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(format!("end_to_end/{mode}"));
    let (s, t, f) = (cfg.sources, cfg.frames, cfg.bins);
    let config = SeparatorConfig {
        bins: f,
        hidden: cfg.hidden,
        sources: s,
        softmax: true,
        dropout: 0.2,
        input_transform: InputTransform::Log1p,
    };
    for seed in 0..cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
        let gamma = gamma_for(mode, &mut rng);
        let mixture = random_grids(&mut rng, 1, t, f).remove(0);
        let labels = random_grids(&mut rng, s, t, f);
        let model = SeparatorModel::init(config, seed)?;
        let drop_seed = seed.wrapping_mul(31).wrapping_add(7);

        let run = |m: &SeparatorModel| -> Result<_> {
            let (outs, trace) = separator::forward(m, &mixture, Mode::Train, drop_seed)?;
            let table = error_table(&labels, &outs, Reduction::Sum)?;
            Ok((table, trace))
        };
        let (table, trace) = run(&model)?;
        let result = losses::evaluate(&table, mode, &gamma, Normalization::InverseGamma)?;
        let mut analytic = separator::backward(&model, &trace, &result.grad_wrt_outputs)?;
        if cfg.fault == Some(Fault::ScaleFirstParameter) {
            analytic[0] = analytic[0] * 1.5 + 1e-3;
        }

        let mut probe = model.clone();
        for i in 0..model.params.len() {
            probe.params[i] = model.params[i] + cfg.step;
            let (tp, _) = run(&probe)?;
            probe.params[i] = model.params[i] - cfg.step;
            let (tm, _) = run(&probe)?;
            probe.params[i] = model.params[i];
            if mode == LossMode::Pit
                && (tp.argmin_index != table.argmin_index || tm.argmin_index != table.argmin_index)
            {
                report.skipped += 1;
                continue;
            }
            let numeric =
                (objective(&tp, mode, &gamma) - objective(&tm, mode, &gamma)) / (2.0 * cfg.step);
            report.record(seed, i, analytic[i], numeric, cfg.tolerance);
        }
    }
    Ok(report)
}

/// Derivative of the trainable objective in gamma, for both normalizations.
pub fn check_gamma(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new("gamma/softmin_trainable");
    let n: usize = (1..=cfg.sources).product();
    for seed in 0..cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a);
        let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let table = PermutationErrorTable::from_errors(errors)?;
        let value = rng.gen_range(0.2..5.0);
        for (k, norm) in [Normalization::InverseGamma, Normalization::None]
            .into_iter()
            .enumerate()
        {
            let at = |v: f64| {
                losses::trainable_loglik(&table, &GammaParam::trainable(v), norm)
                    .map(|r| r.objective)
            };
            let analytic = losses::trainable_loglik(&table, &GammaParam::trainable(value), norm)?
                .grad_wrt_gamma;
            let numeric = (at(value + cfg.step)? - at(value - cfg.step)?) / (2.0 * cfg.step);
            report.record(seed, k, analytic, numeric, cfg.tolerance);
        }
    }
    Ok(report)
}

pub const ALL_MODES: [LossMode; 3] = [
    LossMode::Pit,
    LossMode::SoftminConst,
    LossMode::SoftminTrainable,
];

/// The full suite: loss-only and end-to-end checks for all three modes plus gamma.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for mode in ALL_MODES {
        out.push(check_loss_only(cfg, mode)?);
    }
    for mode in ALL_MODES {
        out.push(check_end_to_end(cfg, mode)?);
    }
    out.push(check_gamma(cfg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = GradCheckConfig {
            seeds: 3,
            ..Default::default()
        };
        for r in run_suite(&cfg).unwrap() {
            assert!(r.passed(), "{r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let cfg = GradCheckConfig {
            seeds: 1,
            fault: Some(Fault::ScaleFirstParameter),
            ..Default::default()
        };
        let r = check_end_to_end(&cfg, LossMode::SoftminConst).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failing, vec![(0, 0)]);
    }

    #[test]
    fn central_difference_of_cubic() {
        let mut f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let g = central_difference(&mut f, &[2.0, 1.0], 1e-5);
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }
}
