//! Mask-estimation network: two LSTM layers, an optional softmax over the
//! hidden units, and one logistic mask head per source. Outputs are the masks
//! multiplied with the mixture magnitude.
//!
//! Gradients are computed by hand (backpropagation through time) over a flat
//! parameter vector; [`backward`] returns a vector with the same layout.

mod lstm;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, Geometry, MagSpectrogram, Waveform};
use crate::error::{Error, Result};
use lstm::{axpy, dot, sigmoid, LstmLayout, LstmTrace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    Linear,
    /// `ln(1 + |Y|)` compression of the network input; masks still multiply `|Y|`.
    #[default]
    Log1p,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatorConfig {
    pub bins: usize,
    pub hidden: usize,
    pub sources: usize,
    pub softmax: bool,
    pub dropout: f64,
    #[serde(default)]
    pub input_transform: InputTransform,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            bins: 33,
            hidden: 16,
            sources: 2,
            softmax: true,
            dropout: 0.2,
            input_transform: InputTransform::Log1p,
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "bins and hidden size must be positive".into(),
            ));
        }
        if !(1..=crate::permutation::MAX_SOURCES).contains(&self.sources) {
            return Err(Error::Config(format!(
                "unsupported source count {}",
                self.sources
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug)]
struct HeadLayout {
    /// `F x H`, row-major.
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    layer1: LstmLayout,
    layer2: LstmLayout,
    heads: Vec<HeadLayout>,
    total: usize,
}

impl Layout {
    fn new(c: &SeparatorConfig) -> Self {
        let layer1 = LstmLayout::new(0, c.bins, c.hidden);
        let layer2 = LstmLayout::new(layer1.end(), c.hidden, c.hidden);
        let mut offset = layer2.end();
        let heads = (0..c.sources)
            .map(|_| {
                let head = HeadLayout {
                    weight: offset,
                    bias: offset + c.bins * c.hidden,
                };
                offset += c.bins * (c.hidden + 1);
                head
            })
            .collect();
        Self {
            layer1,
            layer2,
            heads,
            total: offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparatorModel {
    pub config: SeparatorConfig,
    pub params: Vec<f64>,
}

impl SeparatorModel {
    pub fn param_count(config: &SeparatorConfig) -> usize {
        Layout::new(config).total
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization. Gate rows use
    /// `fan_in = input + hidden`, head rows `fan_in = hidden`.
    pub fn init(config: SeparatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for lay in [layout.layer1, layout.layer2] {
            let bound = 1.0 / ((lay.input + lay.hidden) as f64).sqrt();
            for p in &mut params[lay.wx..lay.end()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        let bound = 1.0 / (config.hidden as f64).sqrt();
        for p in &mut params[layout.layer2.end()..] {
            *p = rng.gen_range(-bound..bound);
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: SeparatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: vec![0.0; Layout::new(&config).total],
            config,
        })
    }

    pub fn from_params(config: SeparatorConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = Layout::new(&config).total;
        if params.len() != expected {
            return Err(Error::Structure(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the parameter bits
        self.params.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
            (h ^ p.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Everything the backward pass needs from one forward call.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    fingerprint: u64,
    frames: usize,
    pub mode: Mode,
    pub seed: u64,
    mixture: Array2<f64>,
    layer1: LstmTrace,
    layer2: LstmTrace,
    /// Inverted-dropout scale per unit (`0` or `1/(1-p)`), `T x H`; `None` in eval.
    drop1: Option<Vec<f64>>,
    drop2: Option<Vec<f64>>,
    head_input: Vec<f64>,
    masks: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Mask of source `s`, `T x F`.
    pub fn mask(&self, s: usize) -> Array2<f64> {
        Array2::from_shape_vec((self.frames, self.mixture.ncols()), self.masks[s].clone())
            .expect("mask shape")
    }
}

fn dropout_scales(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect()
}

fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

/// Runs the network on a mixture magnitude and returns one masked output per source.
pub fn forward(
    model: &SeparatorModel,
    mixture: &MagSpectrogram,
    mode: Mode,
    seed: u64,
) -> Result<(Vec<MagSpectrogram>, ForwardTrace)> {
    let c = &model.config;
    let (frames, bins) = mixture.values.dim();
    if bins != c.bins {
        return Err(Error::Structure(format!(
            "mixture has {bins} bins, model expects {}",
            c.bins
        )));
    }
    if frames == 0 {
        return Err(Error::Structure("mixture has no frames".into()));
    }
    let layout = Layout::new(c);
    if model.params.len() != layout.total {
        return Err(Error::Structure(
            "parameter vector does not match config".into(),
        ));
    }
    let p = &model.params;
    let h = c.hidden;

    let input: Vec<f64> = mixture
        .values
        .iter()
        .map(|&y| match c.input_transform {
            InputTransform::Linear => y,
            InputTransform::Log1p => y.ln_1p(),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let use_dropout = mode == Mode::Train && c.dropout > 0.0;

    let layer1 = lstm::forward(p, &layout.layer1, input, frames);
    let drop1 = use_dropout.then(|| dropout_scales(&mut rng, frames * h, c.dropout));
    let mut x2 = layer1.h.clone();
    if let Some(d) = &drop1 {
        x2.iter_mut().zip(d).for_each(|(x, s)| *x *= s);
    }
    let layer2 = lstm::forward(p, &layout.layer2, x2, frames);
    let drop2 = use_dropout.then(|| dropout_scales(&mut rng, frames * h, c.dropout));
    let mut pre_heads = layer2.h.clone();
    if let Some(d) = &drop2 {
        pre_heads.iter_mut().zip(d).for_each(|(x, s)| *x *= s);
    }
    let head_input = if c.softmax {
        softmax_rows(&pre_heads, h)
    } else {
        pre_heads
    };

    let mut masks = Vec::with_capacity(c.sources);
    let mut outputs = Vec::with_capacity(c.sources);
    for head in &layout.heads {
        let w = &p[head.weight..head.bias];
        let b = &p[head.bias..head.bias + bins];
        let mut mask = vec![0.0; frames * bins];
        for t in 0..frames {
            let hin = &head_input[t * h..(t + 1) * h];
            for f in 0..bins {
                mask[t * bins + f] = sigmoid(b[f] + dot(&w[f * h..(f + 1) * h], hin));
            }
        }
        let values = Array2::from_shape_fn((frames, bins), |(t, f)| {
            mask[t * bins + f] * mixture.values[[t, f]]
        });
        outputs.push(MagSpectrogram {
            geometry: mixture.geometry,
            values,
        });
        masks.push(mask);
    }

    let trace = ForwardTrace {
        fingerprint: model.fingerprint(),
        frames,
        mode,
        seed,
        mixture: mixture.values.clone(),
        layer1,
        layer2,
        drop1,
        drop2,
        head_input,
        masks,
    };
    Ok((outputs, trace))
}

/// Gradient of a scalar with respect to every parameter, given its gradient
/// with respect to each output of the matching [`forward`] call.
pub fn backward(
    model: &SeparatorModel,
    trace: &ForwardTrace,
    grad_wrt_outputs: &[Array2<f64>],
) -> Result<Vec<f64>> {
    let mut grads = vec![0.0; model.params.len()];
    backward_into(model, trace, grad_wrt_outputs, &mut grads)?;
    Ok(grads)
}

/// As [`backward`], accumulating into an existing gradient vector.
pub fn backward_into(
    model: &SeparatorModel,
    trace: &ForwardTrace,
    grad_wrt_outputs: &[Array2<f64>],
    grads: &mut [f64],
) -> Result<()> {
    let c = &model.config;
    let layout = Layout::new(c);
    if trace.fingerprint != model.fingerprint() {
        return Err(Error::Structure(
            "trace was produced by different parameters".into(),
        ));
    }
    let (frames, bins) = trace.mixture.dim();
    if grads.len() != layout.total || grad_wrt_outputs.len() != c.sources {
        return Err(Error::Structure(
            "gradient buffer does not match model".into(),
        ));
    }
    if let Some(g) = grad_wrt_outputs.iter().find(|g| g.dim() != (frames, bins)) {
        return Err(Error::Structure(format!(
            "output gradient {:?} does not match trace {:?}",
            g.dim(),
            (frames, bins)
        )));
    }
    let p = &model.params;
    let h = c.hidden;

    // mask heads: O = m * Y, m = sigmoid(W s + b)
    let mut d_head_in = vec![0.0; frames * h];
    let mut dz = vec![0.0; bins];
    for ((head, mask), d_out) in layout.heads.iter().zip(&trace.masks).zip(grad_wrt_outputs) {
        let w = &p[head.weight..head.bias];
        for t in 0..frames {
            for f in 0..bins {
                let m = mask[t * bins + f];
                dz[f] = d_out[[t, f]] * trace.mixture[[t, f]] * m * (1.0 - m);
            }
            let hin = &trace.head_input[t * h..(t + 1) * h];
            let d_hin = &mut d_head_in[t * h..(t + 1) * h];
            let (gw, gb) = grads[head.weight..head.bias + bins].split_at_mut(bins * h);
            for f in 0..bins {
                if dz[f] == 0.0 {
                    continue;
                }
                axpy(dz[f], hin, &mut gw[f * h..(f + 1) * h]);
                gb[f] += dz[f];
                axpy(dz[f], &w[f * h..(f + 1) * h], d_hin);
            }
        }
    }

    let mut dh2 = if c.softmax {
        let mut out = vec![0.0; frames * h];
        for t in 0..frames {
            let s = &trace.head_input[t * h..(t + 1) * h];
            let g = &d_head_in[t * h..(t + 1) * h];
            let inner = dot(s, g);
            for k in 0..h {
                out[t * h + k] = s[k] * (g[k] - inner);
            }
        }
        out
    } else {
        d_head_in
    };
    if let Some(d) = &trace.drop2 {
        dh2.iter_mut().zip(d).for_each(|(g, s)| *g *= s);
    }

    let mut dh1 = lstm::backward(p, grads, &layout.layer2, &trace.layer2, &dh2, frames, true)
        .expect("dx requested");
    if let Some(d) = &trace.drop1 {
        dh1.iter_mut().zip(d).for_each(|(g, s)| *g *= s);
    }
    lstm::backward(p, grads, &layout.layer1, &trace.layer1, &dh1, frames, false);
    Ok(())
}

/// Ideal ratio outputs `Y * X_s / sum_j X_j`; zero where all sources are silent.
pub fn ideal_ratio_outputs(
    mixture: &MagSpectrogram,
    sources: &[MagSpectrogram],
) -> Result<Vec<MagSpectrogram>> {
    if let Some(s) = sources
        .iter()
        .find(|s| s.values.dim() != mixture.values.dim())
    {
        return Err(Error::Structure(format!(
            "source grid {:?} does not match mixture {:?}",
            s.values.dim(),
            mixture.values.dim()
        )));
    }
    let mut total = Array2::<f64>::zeros(mixture.values.dim());
    for s in sources {
        total += &s.values;
    }
    Ok(sources
        .iter()
        .map(|s| {
            let mut values = mixture.values.clone();
            ndarray::Zip::from(&mut values)
                .and(&s.values)
                .and(&total)
                .for_each(|y, &x, &tot| *y = if tot > 0.0 { *y * x / tot } else { 0.0 });
            MagSpectrogram {
                geometry: mixture.geometry,
                values,
            }
        })
        .collect())
}

/// Inverts each output magnitude using the mixture phase.
pub fn reconstruct(
    outputs: &[MagSpectrogram],
    mixture_phase: &Array2<f64>,
    geometry: &Geometry,
) -> Result<Vec<Waveform>> {
    outputs
        .iter()
        .map(|o| {
            if o.geometry != *geometry {
                return Err(Error::Structure(
                    "output geometry differs from mixture".into(),
                ));
            }
            dsp::istft(&dsp::combine(o, mixture_phase)?)
        })
        .collect()
}
