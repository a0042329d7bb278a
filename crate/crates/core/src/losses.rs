//! Training objectives over a permutation error table.
//!
//! All objectives are values to be *maximized*:
//!
//! * `pit` is `-e_min`, the hard minimum over assignments.
//! * `softmin_const` is `-e_min + g * ln(1 + sum_{Z != Z_min} exp((e_min - e_Z) / g))`,
//!   a smooth maximum of `-e` with temperature `g`.
//! * `softmin_trainable` is `[1/g] + ln sum_Z exp(-e_Z / g)`, differentiable in `g`.
//!
//! `g` is the effective gamma, `value + epsilon_floor`. Both soft forms are
//! evaluated relative to `e_min`, so every exponent is `<= 0`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::{Permutation, PermutationErrorTable};

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParam {
    pub value: f64,
    pub trainable: bool,
    pub epsilon_floor: f64,
    pub lower_bound: f64,
}

impl GammaParam {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            trainable: false,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            lower_bound: 0.0,
        }
    }

    pub fn trainable(value: f64) -> Self {
        Self {
            trainable: true,
            ..Self::constant(value)
        }
    }

    /// The value used in every division.
    pub fn effective(&self) -> f64 {
        self.value + self.epsilon_floor
    }

    /// Projects the value back onto `[lower_bound, inf)`.
    pub fn project(&mut self) {
        if self.value < self.lower_bound {
            self.value = self.lower_bound;
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.value.is_finite() && self.value >= 0.0) {
            return Err(Error::Domain(format!(
                "gamma must be finite and non-negative, got {}",
                self.value
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Pit,
    SoftminConst,
    SoftminTrainable,
}

impl LossMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Pit => "pit",
            LossMode::SoftminConst => "softmin_const",
            LossMode::SoftminTrainable => "softmin_trainable",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Keeps the `+1/g` term of the trainable objective.
    #[default]
    InverseGamma,
    None,
}

#[derive(Clone, Debug)]
pub struct LossResult {
    pub objective: f64,
    /// Input table with `weights` populated.
    pub table: PermutationErrorTable,
    /// `d objective / d errors[i]`.
    pub grad_wrt_errors: Vec<f64>,
    /// `d objective / d outputs[k]`; empty when the table carries no residuals.
    pub grad_wrt_outputs: Vec<Array2<f64>>,
    pub grad_wrt_gamma: f64,
    pub mode: LossMode,
}

fn finish(
    mut table: PermutationErrorTable,
    objective: f64,
    weights: Vec<f64>,
    grad_wrt_errors: Vec<f64>,
    grad_wrt_gamma: f64,
    mode: LossMode,
) -> LossResult {
    let grad_wrt_outputs = table.combine_error_gradients(&grad_wrt_errors);
    table.weights = Some(weights);
    LossResult {
        objective,
        table,
        grad_wrt_errors,
        grad_wrt_outputs,
        grad_wrt_gamma,
        mode,
    }
}

/// Hard-minimum objective `-e_min`.
pub fn pit_cost(table: &PermutationErrorTable) -> LossResult {
    pit_with_mode(table, LossMode::Pit)
}

fn pit_with_mode(table: &PermutationErrorTable, mode: LossMode) -> LossResult {
    let n = table.len();
    let best = table.argmin_index;
    let mut weights = vec![0.0; n];
    weights[best] = 1.0;
    let mut grad = vec![0.0; n];
    grad[best] = -1.0;
    finish(table.clone(), -table.errors[best], weights, grad, 0.0, mode)
}

/// Terms shared by both soft objectives: `s = sum_{i != min} exp((e_min - e_i) / g)`
/// and the normalized weights.
fn soft_terms(table: &PermutationErrorTable, g: f64) -> (f64, Vec<f64>) {
    let e_min = table.min_error();
    let best = table.argmin_index;
    let rel: Vec<f64> = table
        .errors
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            if i == best {
                1.0
            } else {
                ((e_min - e) / g).exp()
            }
        })
        .collect();
    let s: f64 = rel
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &r)| r)
        .sum();
    let denom = 1.0 + s;
    (s, rel.into_iter().map(|r| r / denom).collect())
}

/// Constant-gamma soft minimum. `gamma.value == 0` reproduces [`pit_cost`] exactly.
pub fn softmin_loglik(table: &PermutationErrorTable, gamma: &GammaParam) -> Result<LossResult> {
    gamma.check()?;
    if gamma.value == 0.0 {
        return Ok(pit_with_mode(table, LossMode::SoftminConst));
    }
    let g = gamma.effective();
    let (s, weights) = soft_terms(table, g);
    let objective = -table.min_error() + g * s.ln_1p();
    let grad: Vec<f64> = weights.iter().map(|w| -w).collect();
    Ok(finish(
        table.clone(),
        objective,
        weights,
        grad,
        0.0,
        LossMode::SoftminConst,
    ))
}

/// Trainable-gamma log-likelihood with its derivative in gamma.
pub fn trainable_loglik(
    table: &PermutationErrorTable,
    gamma: &GammaParam,
    normalization: Normalization,
) -> Result<LossResult> {
    if !gamma.trainable {
        return Err(Error::Mode(
            "trainable objective requires a trainable gamma".into(),
        ));
    }
    gamma.check()?;
    let g = gamma.effective();
    let (s, weights) = soft_terms(table, g);
    let log_sum = -table.min_error() / g + s.ln_1p();
    let expected_error: f64 = weights.iter().zip(&table.errors).map(|(w, e)| w * e).sum();
    let (norm, d_norm) = match normalization {
        Normalization::InverseGamma => (1.0 / g, -1.0 / (g * g)),
        Normalization::None => (0.0, 0.0),
    };
    let grad_gamma = d_norm + expected_error / (g * g);
    let grad: Vec<f64> = weights.iter().map(|w| -w / g).collect();
    Ok(finish(
        table.clone(),
        norm + log_sum,
        weights,
        grad,
        grad_gamma,
        LossMode::SoftminTrainable,
    ))
}

/// Dispatches to the objective selected by `mode`.
pub fn evaluate(
    table: &PermutationErrorTable,
    mode: LossMode,
    gamma: &GammaParam,
    normalization: Normalization,
) -> Result<LossResult> {
    match mode {
        LossMode::Pit => Ok(pit_cost(table)),
        LossMode::SoftminConst => softmin_loglik(table, gamma),
        LossMode::SoftminTrainable => trainable_loglik(table, gamma, normalization),
    }
}

/// Test-time assignment: always the minimum-error permutation.
pub fn select_test_permutation(table: &PermutationErrorTable) -> Permutation {
    table.argmin_permutation().clone()
}
