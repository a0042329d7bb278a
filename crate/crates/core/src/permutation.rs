//! Output-label assignments and per-assignment separation errors.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dsp::MagSpectrogram;
use crate::error::{Error, Result};

pub const MAX_SOURCES: usize = 8;

/// `mapping[k]` is the label index assigned to output `k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || seen[m] {
                return Err(Error::Structure(format!("{mapping:?} is not a bijection")));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(sources: usize) -> Self {
        Self {
            mapping: (0..sources).collect(),
        }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (k, &m) in self.mapping.iter().enumerate() {
            inv[m] = k;
        }
        Self { mapping: inv }
    }

    /// Output index assigned to label `label`.
    pub fn output_for_label(&self, label: usize) -> usize {
        self.mapping.iter().position(|&m| m == label).unwrap()
    }
}

/// All `S!` permutations in lexicographic order.
pub fn enumerate(sources: usize) -> Result<Vec<Permutation>> {
    if !(1..=MAX_SOURCES).contains(&sources) {
        return Err(Error::Config(format!(
            "speaker count must be in 1..={MAX_SOURCES}, got {sources}"
        )));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..sources).collect();
    loop {
        out.push(Permutation {
            mapping: current.clone(),
        });
        // next lexicographic permutation
        let Some(i) = (0..sources.saturating_sub(1))
            .rev()
            .find(|&i| current[i] < current[i + 1])
        else {
            break;
        };
        let j = (i + 1..sources)
            .rev()
            .find(|&j| current[j] > current[i])
            .unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    Ok(out)
}

/// Reorders outputs into label order: the result holds output `k` at position `mapping[k]`.
pub fn apply<T: Clone>(z: &Permutation, outputs: &[T]) -> Result<Vec<T>> {
    if outputs.len() != z.len() {
        return Err(Error::Structure(format!(
            "permutation over {} sources applied to {} outputs",
            z.len(),
            outputs.len()
        )));
    }
    let mut slots: Vec<Option<T>> = vec![None; outputs.len()];
    for (k, &m) in z.mapping.iter().enumerate() {
        slots[m] = Some(outputs[k].clone());
    }
    Ok(slots.into_iter().map(Option::unwrap).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Separation errors for every permutation of one example.
///
/// Besides the per-permutation errors the table keeps the pairwise residuals
/// `outputs[k] - labels[j]`, which is all a loss needs to route its gradient
/// back to the outputs.
#[derive(Clone, Debug)]
pub struct PermutationErrorTable {
    pub permutations: Vec<Permutation>,
    pub errors: Vec<f64>,
    pub argmin_index: usize,
    /// Softmax weights; filled by the losses.
    pub weights: Option<Vec<f64>>,
    pub reduction: Reduction,
    residuals: Vec<Array2<f64>>,
    sources: usize,
    scale: f64,
}

impl PermutationErrorTable {
    /// Builds a table directly from error values, without residuals. Useful for
    /// scalar loss checks; output gradients from such a table are empty.
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        let sources = (1..=MAX_SOURCES)
            .find(|&s| (1..=s).product::<usize>() == errors.len())
            .ok_or_else(|| {
                Error::Structure(format!("{} errors is not a factorial count", errors.len()))
            })?;
        if let Some(e) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::Domain(format!(
                "error value {e} is not finite and >= 0"
            )));
        }
        Ok(Self {
            permutations: enumerate(sources)?,
            argmin_index: first_argmin(&errors),
            errors,
            weights: None,
            reduction: Reduction::Sum,
            residuals: Vec::new(),
            sources,
            scale: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn min_error(&self) -> f64 {
        self.errors[self.argmin_index]
    }

    pub fn argmin_permutation(&self) -> &Permutation {
        &self.permutations[self.argmin_index]
    }

    pub fn has_residuals(&self) -> bool {
        !self.residuals.is_empty()
    }

    /// Residual `outputs[k] - labels[j]`.
    pub fn residual(&self, output: usize, label: usize) -> &Array2<f64> {
        &self.residuals[output * self.sources + label]
    }

    /// Gradient of `sum_i coeffs[i] * errors[i]` with respect to each output.
    pub fn combine_error_gradients(&self, coeffs: &[f64]) -> Vec<Array2<f64>> {
        if self.residuals.is_empty() {
            return Vec::new();
        }
        let shape = self.residuals[0].dim();
        let mut grads = vec![Array2::<f64>::zeros(shape); self.sources];
        for (perm, &c) in self.permutations.iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            let factor = 2.0 * self.scale * c;
            for (k, &label) in perm.mapping.iter().enumerate() {
                grads[k].scaled_add(factor, self.residual(k, label));
            }
        }
        grads
    }
}

fn first_argmin(errors: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = i;
        }
    }
    best
}

/// Squared Frobenius distance between labels and every reordering of the outputs.
pub fn error_table(
    labels: &[MagSpectrogram],
    outputs: &[MagSpectrogram],
    reduction: Reduction,
) -> Result<PermutationErrorTable> {
    let sources = labels.len();
    if outputs.len() != sources {
        return Err(Error::Structure(format!(
            "{} labels but {} outputs",
            sources,
            outputs.len()
        )));
    }
    let permutations = enumerate(sources)?;
    let shape = labels[0].values.dim();
    if let Some(bad) = labels
        .iter()
        .chain(outputs)
        .find(|m| m.values.dim() != shape)
    {
        return Err(Error::Structure(format!(
            "grid {:?} does not match {:?}",
            bad.values.dim(),
            shape
        )));
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / (sources * shape.0 * shape.1).max(1) as f64,
    };

    let mut residuals = Vec::with_capacity(sources * sources);
    let mut pair = vec![0.0; sources * sources];
    for (k, out) in outputs.iter().enumerate() {
        for (j, lab) in labels.iter().enumerate() {
            let r = &out.values - &lab.values;
            pair[k * sources + j] = r.iter().map(|x| x * x).sum::<f64>();
            residuals.push(r);
        }
    }
    let errors: Vec<f64> = permutations
        .iter()
        .map(|p| {
            scale
                * p.mapping
                    .iter()
                    .enumerate()
                    .map(|(k, &j)| pair[k * sources + j])
                    .sum::<f64>()
        })
        .collect();
    Ok(PermutationErrorTable {
        argmin_index: first_argmin(&errors),
        permutations,
        errors,
        weights: None,
        reduction,
        residuals,
        sources,
        scale,
    })
}
