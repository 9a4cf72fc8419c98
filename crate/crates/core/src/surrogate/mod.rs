//! Deep-kernel Gaussian process.
//!
//! A fully connected network (k² → 32 → 16 → 2, tanh) maps flattened patches
//! to two-dimensional descriptors; an exact GP with an isotropic
//! squared-exponential kernel runs on those descriptors. Network weights and
//! kernel hyperparameters are fitted jointly with Adam on the negative log
//! marginal likelihood of standardized targets.

mod objective;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PatchSet;
use crate::error::{Error, Result};

pub use objective::{Layout, FEATURES, HIDDEN1, HIDDEN2, MAX_JITTER, NOISE_FLOOR};

/// Affine map applied to raw patch values before the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub shift: f64,
    pub scale: f64,
}

impl InputScaling {
    pub const IDENTITY: Self = Self { shift: 0.0, scale: 1.0 };

    /// Zero mean, unit variance over all values seen.
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f32]>) -> Self {
        let (mut n, mut s, mut s2) = (0usize, 0.0f64, 0.0f64);
        for v in vectors {
            for &x in v {
                n += 1;
                s += x as f64;
                s2 += (x as f64) * (x as f64);
            }
        }
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        let sd = libm::sqrt(var);
        Self { shift: mean, scale: if sd > 1e-12 { sd } else { 1.0 } }
    }

    fn apply(&self, x: &[f32], out: &mut Vec<f64>) {
        out.extend(x.iter().map(|&v| (v as f64 - self.shift) / self.scale));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainingSet {
    x: Vec<f32>,
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub iters: usize,
    pub step_size: f64,
    /// Seeds weight initialization when no warm-start model is given.
    pub rng_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { iters: 200, step_size: 0.01, rng_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub iterations: usize,
    /// Targets were all identical; standardization fell back to unit scale.
    pub degenerate_targets: bool,
}

/// Per-location predictive mean and standard deviation in target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepKernelModel {
    input_dim: usize,
    scaling: InputScaling,
    params: Vec<f64>,
    training: Option<TrainingSet>,
}

impl DeepKernelModel {
    /// Fresh model with Glorot-uniform weights, zero biases, unit lengthscale
    /// and outputscale, and noise variance 0.1 above the floor.
    pub fn new<R: Rng>(input_dim: usize, scaling: InputScaling, rng: &mut R) -> Self {
        let lay = Layout { input_dim };
        let mut params = vec![0.0; lay.len()];
        let mut glorot = |start: usize, fan_in: usize, fan_out: usize| {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for w in &mut params[start..start + fan_in * fan_out] {
                *w = rng.random_range(-a..a);
            }
        };
        glorot(lay.w1(), input_dim, HIDDEN1);
        glorot(lay.w2(), HIDDEN1, HIDDEN2);
        glorot(lay.w3(), HIDDEN2, FEATURES);
        params[lay.noise_raw()] = libm::log(0.1);
        Self { input_dim, scaling, params, training: None }
    }

    pub fn layout(&self) -> Layout {
        Layout { input_dim: self.input_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn scaling(&self) -> InputScaling {
        self.scaling
    }

    /// Flat parameter vector: network blocks, then log-lengthscale,
    /// log-outputscale and the raw noise parameter.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn lengthscale(&self) -> f64 {
        libm::exp(self.params[self.layout().log_lengthscale()])
    }

    pub fn outputscale(&self) -> f64 {
        libm::exp(self.params[self.layout().log_outputscale()])
    }

    /// Noise variance in standardized units (never below [`NOISE_FLOOR`]).
    pub fn noise_variance(&self) -> f64 {
        NOISE_FLOOR + libm::exp(self.params[self.layout().noise_raw()])
    }

    pub fn set_kernel(&mut self, lengthscale: f64, outputscale: f64) {
        let lay = self.layout();
        self.params[lay.log_lengthscale()] = libm::log(lengthscale);
        self.params[lay.log_outputscale()] = libm::log(outputscale);
    }

    /// Set the noise variance; values at or below the floor pin it to the floor.
    pub fn set_noise_variance(&mut self, v: f64) {
        let idx = self.layout().noise_raw();
        self.params[idx] = if v > NOISE_FLOOR { libm::log(v - NOISE_FLOOR) } else { -745.0 };
    }

    pub fn is_trained(&self) -> bool {
        self.training.is_some()
    }

    /// Number of points the model was last trained on.
    pub fn training_size(&self) -> usize {
        self.training.as_ref().map_or(0, |t| t.y.len())
    }

    /// Target mean and standard deviation used for standardization.
    pub fn target_standardization(&self) -> Option<(f64, f64)> {
        self.training.as_ref().map(|t| (t.y_mean, t.y_std))
    }

    /// Descriptor the network assigns to a raw patch vector.
    pub fn features(&self, x: &[f32]) -> [f64; FEATURES] {
        let mut buf = Vec::with_capacity(x.len());
        self.scaling.apply(x, &mut buf);
        objective::forward(&self.params, self.layout(), &buf).0
    }

    fn scaled(&self, xs: &[&[f32]]) -> Result<Vec<f64>> {
        let mut buf = Vec::with_capacity(xs.len() * self.input_dim);
        for x in xs {
            if x.len() != self.input_dim {
                return Err(Error::Dimension(format!(
                    "input has {} values, model expects {}",
                    x.len(),
                    self.input_dim
                )));
            }
            self.scaling.apply(x, &mut buf);
        }
        Ok(buf)
    }

    /// GP negative log marginal likelihood of `y` exactly as given (zero prior
    /// mean, no standardization). `+∞` when the covariance cannot be factored.
    pub fn nll(&self, x: &[&[f32]], y: &[f64]) -> f64 {
        if x.len() != y.len() {
            return f64::INFINITY;
        }
        match self.scaled(x) {
            Ok(xs) => objective::nll(&self.params, self.layout(), &xs, y, None).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    }

    /// NLL together with its gradient with respect to [`Self::params`].
    pub fn nll_with_gradient(&self, x: &[&[f32]], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != y.len() {
            return Err(Error::Dimension("inputs and targets differ in length".into()));
        }
        let xs = self.scaled(x)?;
        let mut g = vec![0.0; self.params.len()];
        let v = objective::nll(&self.params, self.layout(), &xs, y, Some(&mut g))?;
        Ok((v, g))
    }

    /// Fit to measured `(x, y)` pairs starting from the current parameters.
    ///
    /// Targets are standardized with their own mean and standard deviation.
    /// Returns the lowest-NLL iterate seen, so the final NLL never exceeds the
    /// initial one.
    pub fn fit(&mut self, x: &[&[f32]], y: &[f64], opts: &TrainOptions) -> Result<TrainSummary> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        if y.len() < 2 {
            return Err(Error::Config("training needs at least 2 points".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training targets".into()));
        }
        let xs = self.scaled(x)?;
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n;
        let sd = libm::sqrt(var);
        let degenerate = !(sd > 1e-12 * (1.0 + libm::fabs(y_mean)));
        let y_std = if degenerate { 1.0 } else { sd };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let lay = self.layout();
        let mut params = self.params.clone();
        let mut grad = vec![0.0; params.len()];
        let initial = objective::nll(&params, lay, &xs, &ys, Some(&mut grad))?;
        let mut best = (initial, params.clone());
        let mut adam = Adam::new(params.len(), opts.step_size);
        let mut iterations = 0;
        for _ in 0..opts.iters {
            adam.step(&mut params, &grad);
            iterations += 1;
            if params.iter().any(|v| !v.is_finite()) {
                break;
            }
            match objective::nll(&params, lay, &xs, &ys, Some(&mut grad)) {
                Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => {
                    if v < best.0 {
                        best = (v, params.clone());
                    }
                }
                _ => break,
            }
        }
        self.params = best.1;
        self.training = Some(TrainingSet { x: x.iter().flat_map(|v| v.iter().copied()).collect(), y: y.to_vec(), y_mean, y_std });
        Ok(TrainSummary { initial_nll: initial, final_nll: best.0, iterations, degenerate_targets: degenerate })
    }

    /// Posterior mean and standard deviation at every patch.
    pub fn predict(&self, patches: &PatchSet) -> Result<Prediction> {
        let rows: Vec<&[f32]> = patches.iter().collect();
        self.predict_vectors(&rows)
    }

    pub fn predict_vectors(&self, queries: &[&[f32]]) -> Result<Prediction> {
        let train = self.training.as_ref().ok_or(Error::Untrained)?;
        let lay = self.layout();
        let d = self.input_dim;
        let mut buf = Vec::with_capacity(d);
        let mut feats = Vec::with_capacity(train.y.len());
        for x in train.x.chunks_exact(d) {
            buf.clear();
            self.scaling.apply(x, &mut buf);
            feats.push(objective::forward(&self.params, lay, &buf).0);
        }
        let h = objective::hyper(&self.params, lay);
        let (chol, _) = objective::factor(&h, &feats)?;
        let ys: Vec<f64> = train.y.iter().map(|v| (v - train.y_mean) / train.y_std).collect();
        let alpha = chol.solve(&ys);

        let mut mean = Vec::with_capacity(queries.len());
        let mut sigma = Vec::with_capacity(queries.len());
        let mut kstar = vec![0.0; feats.len()];
        for q in queries {
            if q.len() != d {
                return Err(Error::Dimension(format!("query has {} values, model expects {d}", q.len())));
            }
            buf.clear();
            self.scaling.apply(q, &mut buf);
            let f = objective::forward(&self.params, lay, &buf).0;
            for (k, tf) in kstar.iter_mut().zip(&feats) {
                *k = objective::kernel(&h, f, *tf);
            }
            let mu: f64 = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let v = chol.solve_lower(&kstar);
            let var = (h.outputscale - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
            mean.push(mu * train.y_std + train.y_mean);
            sigma.push(libm::sqrt(var) * train.y_std);
        }
        Ok(Prediction { mean, sigma })
    }

    /// Prior predictive standard deviation in target units.
    pub fn prior_sigma(&self) -> Option<f64> {
        self.training.as_ref().map(|t| libm::sqrt(self.outputscale()) * t.y_std)
    }
}

/// Train from `warm` (or a freshly initialized model seeded by
/// `opts.rng_seed`) on the given pairs.
pub fn train(
    warm: Option<DeepKernelModel>,
    x: &[&[f32]],
    y: &[f64],
    opts: &TrainOptions,
) -> Result<(DeepKernelModel, TrainSummary)> {
    let mut model = match warm {
        Some(m) => m,
        None => {
            let dim = x.first().map(|v| v.len()).ok_or_else(|| Error::Config("no training inputs".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
            DeepKernelModel::new(dim, InputScaling::fit(x.iter().copied()), &mut rng)
        }
    };
    let summary = model.fit(x, y, opts)?;
    Ok((model, summary))
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { lr, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::BETA2, self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + Self::EPS);
        }
    }
}
