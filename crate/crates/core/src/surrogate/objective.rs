//! Exact GP negative log marginal likelihood over feature-network outputs,
//! with its gradient back-propagated through the network.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::linalg::Cholesky;

pub const HIDDEN1: usize = 32;
pub const HIDDEN2: usize = 16;
pub const FEATURES: usize = 2;
pub const NOISE_FLOOR: f64 = 1e-4;
pub const MAX_JITTER: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input_dim: usize,
}

impl Layout {
    pub fn w1(&self) -> usize {
        0
    }
    pub fn b1(&self) -> usize {
        HIDDEN1 * self.input_dim
    }
    pub fn w2(&self) -> usize {
        self.b1() + HIDDEN1
    }
    pub fn b2(&self) -> usize {
        self.w2() + HIDDEN2 * HIDDEN1
    }
    pub fn w3(&self) -> usize {
        self.b2() + HIDDEN2
    }
    pub fn b3(&self) -> usize {
        self.w3() + FEATURES * HIDDEN2
    }
    pub fn log_lengthscale(&self) -> usize {
        self.b3() + FEATURES
    }
    pub fn log_outputscale(&self) -> usize {
        self.log_lengthscale() + 1
    }
    pub fn noise_raw(&self) -> usize {
        self.log_outputscale() + 1
    }
    pub fn len(&self) -> usize {
        self.noise_raw() + 1
    }
}

/// Hidden activations kept for the backward pass.
pub struct Activations {
    pub h1: [f64; HIDDEN1],
    pub h2: [f64; HIDDEN2],
}

pub fn forward(p: &[f64], lay: Layout, x: &[f64]) -> ([f64; FEATURES], Activations) {
    let d = lay.input_dim;
    let mut h1 = [0.0; HIDDEN1];
    for (i, h) in h1.iter_mut().enumerate() {
        let w = &p[lay.w1() + i * d..lay.w1() + (i + 1) * d];
        let s: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        *h = libm::tanh(s + p[lay.b1() + i]);
    }
    let mut h2 = [0.0; HIDDEN2];
    for (i, h) in h2.iter_mut().enumerate() {
        let w = &p[lay.w2() + i * HIDDEN1..lay.w2() + (i + 1) * HIDDEN1];
        let s: f64 = w.iter().zip(&h1).map(|(a, b)| a * b).sum();
        *h = libm::tanh(s + p[lay.b2() + i]);
    }
    let mut f = [0.0; FEATURES];
    for (i, fi) in f.iter_mut().enumerate() {
        let w = &p[lay.w3() + i * HIDDEN2..lay.w3() + (i + 1) * HIDDEN2];
        *fi = w.iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>() + p[lay.b3() + i];
    }
    (f, Activations { h1, h2 })
}

/// Accumulate `∂L/∂params` given `∂L/∂features` for one input.
fn backward(p: &[f64], lay: Layout, x: &[f64], act: &Activations, df: [f64; FEATURES], g: &mut [f64]) {
    let d = lay.input_dim;
    let mut dh2 = [0.0; HIDDEN2];
    for (i, &dfi) in df.iter().enumerate() {
        g[lay.b3() + i] += dfi;
        for j in 0..HIDDEN2 {
            g[lay.w3() + i * HIDDEN2 + j] += dfi * act.h2[j];
            dh2[j] += dfi * p[lay.w3() + i * HIDDEN2 + j];
        }
    }
    let mut dh1 = [0.0; HIDDEN1];
    for i in 0..HIDDEN2 {
        let da = dh2[i] * (1.0 - act.h2[i] * act.h2[i]);
        g[lay.b2() + i] += da;
        for j in 0..HIDDEN1 {
            g[lay.w2() + i * HIDDEN1 + j] += da * act.h1[j];
            dh1[j] += da * p[lay.w2() + i * HIDDEN1 + j];
        }
    }
    for i in 0..HIDDEN1 {
        let da = dh1[i] * (1.0 - act.h1[i] * act.h1[i]);
        if da == 0.0 {
            continue;
        }
        g[lay.b1() + i] += da;
        let row = &mut g[lay.w1() + i * d..lay.w1() + (i + 1) * d];
        for (gw, xi) in row.iter_mut().zip(x) {
            *gw += da * xi;
        }
    }
}

pub struct Hyper {
    pub lengthscale: f64,
    pub outputscale: f64,
    pub noise: f64,
}

pub fn hyper(p: &[f64], lay: Layout) -> Hyper {
    Hyper {
        lengthscale: libm::exp(p[lay.log_lengthscale()]),
        outputscale: libm::exp(p[lay.log_outputscale()]),
        noise: NOISE_FLOOR + libm::exp(p[lay.noise_raw()]),
    }
}

#[inline]
pub fn kernel(h: &Hyper, a: [f64; FEATURES], b: [f64; FEATURES]) -> f64 {
    let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    h.outputscale * libm::exp(-d2 / (2.0 * h.lengthscale * h.lengthscale))
}

/// Factorized training covariance `K + σ²I` over the given features.
pub fn factor(h: &Hyper, feats: &[[f64; FEATURES]]) -> Result<(Cholesky, Vec<f64>)> {
    let n = feats.len();
    let mut kf = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel(h, feats[i], feats[j]);
            kf[i * n + j] = v;
            kf[j * n + i] = v;
        }
    }
    let mut k = kf.clone();
    for i in 0..n {
        k[i * n + i] += h.noise;
    }
    let (chol, _) = Cholesky::factor_with_jitter(&k, n, MAX_JITTER)?;
    Ok((chol, kf))
}

/// NLL of `y` (taken as given, zero prior mean). `xs` holds `n` scaled inputs
/// back to back. When `grad` is supplied it is overwritten with `∂NLL/∂params`.
pub fn nll(p: &[f64], lay: Layout, xs: &[f64], y: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
    let n = y.len();
    let d = lay.input_dim;
    let mut feats = Vec::with_capacity(n);
    let mut acts = Vec::with_capacity(n);
    for i in 0..n {
        let (f, a) = forward(p, lay, &xs[i * d..(i + 1) * d]);
        feats.push(f);
        acts.push(a);
    }
    let h = hyper(p, lay);
    let (chol, kf) = factor(&h, &feats)?;
    let alpha = chol.solve(y);
    let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = 0.5 * quad + 0.5 * chol.log_det() + 0.5 * n as f64 * LN_2PI;

    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        // ∂NLL = ½ tr(A ∂K) with A = K⁻¹ − ααᵀ
        let mut a = chol.inverse();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] -= alpha[i] * alpha[j];
            }
        }
        let ls2 = h.lengthscale * h.lengthscale;
        let mut g_os = 0.0;
        let mut g_ls = 0.0;
        let mut trace = 0.0;
        let mut dfeat = vec![[0.0; FEATURES]; n];
        for i in 0..n {
            trace += a[i * n + i];
            for j in 0..n {
                let w = a[i * n + j] * kf[i * n + j];
                let diff = [feats[i][0] - feats[j][0], feats[i][1] - feats[j][1]];
                let d2 = diff[0] * diff[0] + diff[1] * diff[1];
                g_os += w;
                g_ls += w * d2;
                dfeat[i][0] -= w * diff[0] / ls2;
                dfeat[i][1] -= w * diff[1] / ls2;
            }
        }
        g[lay.log_outputscale()] = 0.5 * g_os;
        g[lay.log_lengthscale()] = 0.5 * g_ls / ls2;
        g[lay.noise_raw()] = 0.5 * trace * (h.noise - NOISE_FLOOR);
        for i in 0..n {
            backward(p, lay, &xs[i * d..(i + 1) * d], &acts[i], dfeat[i], g);
        }
    }
    Ok(value)
}
