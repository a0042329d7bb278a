//! BSS-EVAL style decomposition and SDR/SIR/SAR.
//!
//! This is the zero-lag variant: the estimate is projected onto the target
//! source and onto the span of all true sources, without the time-invariant
//! distortion filter of the original toolbox.

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::permutation::Permutation;

pub const CLIP_DB: f64 = 300.0;
const DENOM_FLOOR: f64 = 1e-30;
const RIDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
    /// The source Gram matrix was near-singular and a ridge was added.
    pub regularized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
    pub target_energy: f64,
    pub interf_energy: f64,
    pub artif_energy: f64,
    /// At least one ratio hit the +-300 dB clip.
    pub clipped: bool,
}

/// Scores indexed by true-source slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BssEvalScores {
    pub per_source: Vec<SourceScore>,
    pub regularized: bool,
}

impl BssEvalScores {
    pub fn mean_sdr(&self) -> f64 {
        self.per_source.iter().map(|s| s.sdr_db).sum::<f64>() / self.per_source.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky solve of `g x = b`; returns `None` when a pivot is not positive
/// relative to `floor`.
fn cholesky_solve(g: &[f64], b: &[f64], n: usize, floor: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = g[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= floor {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    Some(x)
}

fn check_lengths(estimate: &Waveform, sources: &[Waveform]) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::Structure("no true sources".into()));
    }
    if let Some(s) = sources
        .iter()
        .find(|s| s.len() != estimate.len() || s.sample_rate != estimate.sample_rate)
    {
        return Err(Error::Structure(format!(
            "source of length {} at {} Hz vs estimate of length {} at {} Hz",
            s.len(),
            s.sample_rate,
            estimate.len(),
            estimate.sample_rate
        )));
    }
    Ok(())
}

/// Splits `estimate` into target, interference and artifact components.
pub fn decompose(
    estimate: &Waveform,
    true_sources: &[Waveform],
    target_index: usize,
) -> Result<Decomposition> {
    check_lengths(estimate, true_sources)?;
    let target = true_sources
        .get(target_index)
        .ok_or_else(|| Error::Structure(format!("target index {target_index} out of range")))?;
    let target_energy = target.energy();
    if target_energy == 0.0 {
        return Err(Error::UndefinedScore(format!(
            "true source {target_index} has zero energy"
        )));
    }
    let est = &estimate.samples;
    let coef = dot(est, &target.samples) / target_energy;
    let s_target: Vec<f64> = target.samples.iter().map(|x| coef * x).collect();

    let n = true_sources.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = dot(&true_sources[i].samples, &true_sources[j].samples);
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let rhs: Vec<f64> = true_sources.iter().map(|s| dot(&s.samples, est)).collect();
    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    let floor = RIDGE * trace;
    let (weights, regularized) = match cholesky_solve(&gram, &rhs, n, floor) {
        Some(w) => (w, false),
        None => {
            let mut ridged = gram.clone();
            for i in 0..n {
                ridged[i * n + i] += floor;
            }
            let w = cholesky_solve(&ridged, &rhs, n, 0.0)
                .ok_or_else(|| Error::UndefinedScore("source Gram matrix is degenerate".into()))?;
            (w, true)
        }
    };
    let mut p_all = vec![0.0; est.len()];
    for (w, s) in weights.iter().zip(true_sources) {
        for (p, x) in p_all.iter_mut().zip(&s.samples) {
            *p += w * x;
        }
    }
    let e_interf = p_all.iter().zip(&s_target).map(|(p, t)| p - t).collect();
    let e_artif = est.iter().zip(&p_all).map(|(e, p)| e - p).collect();
    Ok(Decomposition {
        s_target,
        e_interf,
        e_artif,
        regularized,
    })
}

/// `10 log10(num / den)`, clipped to +-300 dB; the flag marks a clip.
pub fn ratio_db(num: f64, den: f64) -> (f64, bool) {
    if den < DENOM_FLOOR {
        return (CLIP_DB, true);
    }
    if num <= 0.0 {
        return (-CLIP_DB, true);
    }
    let db = 10.0 * (num / den).log10();
    if db.abs() > CLIP_DB {
        (db.clamp(-CLIP_DB, CLIP_DB), true)
    } else {
        (db, false)
    }
}

fn energy(x: &[f64]) -> f64 {
    dot(x, x)
}

pub fn score_decomposition(d: &Decomposition) -> SourceScore {
    let target_energy = energy(&d.s_target);
    let interf_energy = energy(&d.e_interf);
    let artif_energy = energy(&d.e_artif);
    let distortion: Vec<f64> = d
        .e_interf
        .iter()
        .zip(&d.e_artif)
        .map(|(a, b)| a + b)
        .collect();
    let signal: Vec<f64> = d
        .s_target
        .iter()
        .zip(&d.e_interf)
        .map(|(a, b)| a + b)
        .collect();
    let (sdr_db, c1) = ratio_db(target_energy, energy(&distortion));
    let (sir_db, c2) = ratio_db(target_energy, interf_energy);
    let (sar_db, c3) = ratio_db(energy(&signal), artif_energy);
    SourceScore {
        sdr_db,
        sir_db,
        sar_db,
        target_energy,
        interf_energy,
        artif_energy,
        clipped: c1 || c2 || c3,
    }
}

/// Scores each estimate against the source it is assigned to: estimate `k` targets
/// `true_sources[assignment.mapping()[k]]`.
pub fn score(
    estimates: &[Waveform],
    true_sources: &[Waveform],
    assignment: &Permutation,
) -> Result<BssEvalScores> {
    if estimates.len() != true_sources.len() || assignment.len() != estimates.len() {
        return Err(Error::Structure(format!(
            "{} estimates, {} sources, assignment over {}",
            estimates.len(),
            true_sources.len(),
            assignment.len()
        )));
    }
    let mut per_source = vec![None; true_sources.len()];
    let mut regularized = false;
    for (k, est) in estimates.iter().enumerate() {
        let target = assignment.mapping()[k];
        let d = decompose(est, true_sources, target)?;
        regularized |= d.regularized;
        per_source[target] = Some(score_decomposition(&d));
    }
    Ok(BssEvalScores {
        per_source: per_source.into_iter().map(Option::unwrap).collect(),
        regularized,
    })
}
