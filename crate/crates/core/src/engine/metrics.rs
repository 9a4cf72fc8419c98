use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::surrogate::Prediction;

/// Learning-curve entry recorded after every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub step: usize,
    /// Predictive standard deviation at every patch.
    pub sigma: Vec<f64>,
    pub mean_sigma: f64,
    /// Population standard deviation of `sigma`.
    pub sigma_of_sigma: f64,
    /// Mean absolute error against the ground truth (simulator only).
    pub mae: f64,
}

pub fn compute_learning_metrics(step: usize, prediction: &Prediction, truth: &[f64]) -> CurveEntry {
    let n = prediction.sigma.len().max(1) as f64;
    let mean_sigma = prediction.sigma.iter().sum::<f64>() / n;
    let var = prediction.sigma.iter().map(|s| (s - mean_sigma) * (s - mean_sigma)).sum::<f64>() / n;
    let mae = prediction.mean.iter().zip(truth).map(|(m, t)| libm::fabs(m - t)).sum::<f64>() / n;
    CurveEntry { step, sigma: prediction.sigma.clone(), mean_sigma, sigma_of_sigma: libm::sqrt(var), mae }
}
