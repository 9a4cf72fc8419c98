use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, GlobalImage};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Parameters of the synthetic ferroelectric-like specimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    /// Correlation length of the domain pattern, in pixels.
    pub domain_scale: f64,
    /// Relative noise on loop responses and switching parameters.
    pub loop_noise: f64,
    /// Samples per bias cycle; odd so the sweep hits its extremes exactly.
    pub n_bias: usize,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { height: 64, width: 64, domain_scale: 4.0, loop_noise: 0.02, n_bias: 65, rng_seed: 0 }
    }
}

const V_MAX: f64 = 3.0;
const SWITCH_WIDTH: f64 = 0.3;
const SHARPNESS: f64 = 2.5;

/// Structure-to-switching map: `phase` is the local image value in (−1, 1).
/// Returns (coercive half-width, imprint, saturation).
fn switching_params(phase: f64) -> (f64, f64, f64) {
    let wall = 1.0 - phase * phase;
    let half_width = 0.9 + 0.45 * phase;
    let imprint = 0.15 * phase + 0.1 * wall;
    let saturation = 1.0 - 0.25 * wall;
    (half_width, imprint, saturation)
}

/// Triangle sweep −V → +V → −V.
fn bias_waveform(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            if t <= 0.5 {
                -V_MAX + 4.0 * V_MAX * t
            } else {
                3.0 * V_MAX - 4.0 * V_MAX * t
            }
        })
        .collect()
}

fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| libm::exp(-((d * d) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f64 = kernel.iter().sum();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                let cc = clamp(c as isize + k as isize - radius, w);
                acc += wk * field[r * w + cc];
            }
            tmp[r * w + c] = acc / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                let rr = clamp(r as isize + k as isize - radius, h);
                acc += wk * tmp[rr * w + c];
            }
            out[r * w + c] = acc / norm;
        }
    }
    out
}

/// Build a reproducible specimen: a smoothed, soft-thresholded random field
/// (two domain types separated by walls) and a loop per pixel whose switching
/// parameters follow the local domain phase.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.height < 16 || cfg.width < 16 {
        return Err(Error::Config("synthetic image must be at least 16x16".into()));
    }
    if !(cfg.domain_scale > 0.0) || !cfg.domain_scale.is_finite() {
        return Err(Error::Config("domain_scale must be positive".into()));
    }
    if !(cfg.loop_noise >= 0.0) || !cfg.loop_noise.is_finite() {
        return Err(Error::Config("loop_noise must be non-negative".into()));
    }
    if cfg.n_bias < 5 || cfg.n_bias.is_multiple_of(2) {
        return Err(Error::Config("n_bias must be odd and at least 5".into()));
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = substream(cfg.rng_seed, Stream::Dataset);

    let noise: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    let smooth = gaussian_blur(&noise, h, w, cfg.domain_scale);
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let var = smooth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / smooth.len() as f64;
    let sd = libm::sqrt(var).max(1e-300);
    let image: Vec<f32> = smooth
        .iter()
        .map(|v| libm::tanh(SHARPNESS * (v - mean) / sd) as f32)
        .collect();

    let bias = bias_waveform(cfg.n_bias);
    let half = cfg.n_bias / 2;
    let mut loops = Vec::with_capacity(h * w * cfg.n_bias);
    for &phase in &image {
        let (mut half_width, mut imprint, saturation) = switching_params(phase as f64);
        if cfg.loop_noise > 0.0 {
            half_width += 0.5 * cfg.loop_noise * rng.sample::<f64, _>(StandardNormal);
            imprint += 0.5 * cfg.loop_noise * rng.sample::<f64, _>(StandardNormal);
        }
        let (vp, vn) = (imprint + half_width, imprint - half_width);
        for (i, &v) in bias.iter().enumerate() {
            let vc = if i <= half { vp } else { vn };
            let mut r = saturation * libm::tanh((v - vc) / SWITCH_WIDTH);
            if cfg.loop_noise > 0.0 {
                r += cfg.loop_noise * rng.sample::<f64, _>(StandardNormal);
            }
            loops.push(r as f32);
        }
    }
    let bias = bias.into_iter().map(|v| v as f32).collect();
    Dataset::new(GlobalImage::new(h, w, image)?, bias, loops)
}
