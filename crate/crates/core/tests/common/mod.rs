//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use permsep::dsp::Waveform;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_waveform(rng: &mut ChaCha8Rng, len: usize) -> Waveform {
    Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 8000).unwrap()
}

/// Asymptotic Kolmogorov-Smirnov p-value for a sample against U(lo, hi).
pub fn ks_uniform_p_value(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut x: Vec<f64> = samples.iter().map(|v| (v - lo) / (hi - lo)).collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `ln sum exp(-e / g)` without any stabilization.
pub fn naive_log_sum(errors: &[f64], g: f64) -> f64 {
    errors.iter().map(|e| (-e / g).exp()).sum::<f64>().ln()
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn exact_dot(a: &[BigRational], b: &[BigRational]) -> BigRational {
    a.iter()
        .zip(b)
        .fold(BigRational::zero(), |acc, (x, y)| acc + x * y)
}

/// SDR, SIR, SAR of `estimate` against two sources, computed in exact rational
/// arithmetic from the normal equations of the two projections.
pub fn exact_bss_scores(estimate: &[f64], s1: &[f64], s2: &[f64], target: usize) -> [f64; 3] {
    let e: Vec<BigRational> = estimate.iter().map(|&x| exact(x)).collect();
    let a: Vec<BigRational> = s1.iter().map(|&x| exact(x)).collect();
    let b: Vec<BigRational> = s2.iter().map(|&x| exact(x)).collect();
    let (t, _) = if target == 0 { (&a, &b) } else { (&b, &a) };

    let coef = exact_dot(&e, t) / exact_dot(t, t);
    let s_target: Vec<BigRational> = t.iter().map(|x| x * &coef).collect();

    let (gaa, gab, gbb) = (exact_dot(&a, &a), exact_dot(&a, &b), exact_dot(&b, &b));
    let (ra, rb) = (exact_dot(&a, &e), exact_dot(&b, &e));
    let det = &gaa * &gbb - &gab * &gab;
    let wa = (&gbb * &ra - &gab * &rb) / &det;
    let wb = (&gaa * &rb - &gab * &ra) / &det;
    let p_all: Vec<BigRational> = a.iter().zip(&b).map(|(x, y)| x * &wa + y * &wb).collect();

    let e_interf: Vec<BigRational> = p_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let e_artif: Vec<BigRational> = e.iter().zip(&p_all).map(|(x, p)| x - p).collect();
    let distortion: Vec<BigRational> = e_interf.iter().zip(&e_artif).map(|(i, a)| i + a).collect();

    let energy = |v: &[BigRational]| exact_dot(v, v);
    let db = |num: BigRational, den: BigRational| 10.0 * (num / den).to_f64().unwrap().log10();
    [
        db(energy(&s_target), energy(&distortion)),
        db(energy(&s_target), energy(&e_interf)),
        db(energy(&p_all), energy(&e_artif)),
    ]
}

/// True when every value is `q / 32768` for a 16-bit integer `q`.
pub fn on_16bit_grid(samples: &[f64]) -> bool {
    samples.iter().all(|&x| {
        let q = x * 32768.0;
        q == q.round() && (-32768.0..=32767.0).contains(&q)
    })
}

/// `X[k] = sum_n x[n] exp(-2 pi i k n / N)`, returned as `(re, im)`.
pub fn direct_dft_bin(frame: &[f64], k: usize) -> (f64, f64) {
    let n = frame.len() as f64;
    frame
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (i, &x)| {
            let phi = -2.0 * std::f64::consts::PI * (k * i) as f64 / n;
            (re + x * phi.cos(), im + x * phi.sin())
        })
}

/// Generates the toy dataset under `dir` and loads its train and dev splits.
pub fn toy_data(
    dir: &std::path::Path,
    train: usize,
) -> (
    permsep::experiment::ExperimentConfig,
    permsep::trainer::TrainData,
) {
    let mut cfg = permsep::experiment::ExperimentConfig::toy();
    cfg.data.train = train;
    cfg.io.out_dir = dir.to_path_buf();
    permsep::experiment::generate(&cfg).unwrap();
    let data = permsep::experiment::load_train_data(&cfg).unwrap();
    (cfg, data)
}

/// Every file under `dir` with its relative path and bytes, sorted by path.
pub fn read_tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
