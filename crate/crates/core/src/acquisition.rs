//! Acquisition functions over the finite patch grid.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    /// Expected improvement.
    Ei,
    /// Upper confidence bound.
    Ucb,
    /// Maximum uncertainty.
    Mu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    /// UCB exploration weight.
    pub beta: f64,
    /// EI improvement margin.
    pub xi: f64,
    pub direction: Direction,
}

impl AcquisitionConfig {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self { kind, beta: 2.0, xi: 0.0, direction: Direction::Maximize }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        if !(self.xi >= 0.0) || !self.xi.is_finite() {
            return Err(Error::Config("xi must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self::new(AcquisitionKind::Ei)
    }
}

/// Standard normal density.
pub fn normal_pdf(u: f64) -> f64 {
    libm::exp(-0.5 * u * u) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Standard normal CDF.
pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / core::f64::consts::SQRT_2)
}

/// Expected improvement of a Gaussian `N(mu, sigma²)` over `best` by at least `xi`
/// (maximization).
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = mu - best - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let u = gain / sigma;
    (gain * normal_cdf(u) + sigma * normal_pdf(u)).max(0.0)
}

/// Score every location; larger is better regardless of direction.
pub fn acquisition_values(pred: &Prediction, measured_y: &[f64], cfg: &AcquisitionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if pred.mean.is_empty() || pred.mean.len() != pred.sigma.len() {
        return Err(Error::Dimension("prediction is empty or ragged".into()));
    }
    if pred.mean.iter().chain(&pred.sigma).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("prediction".into()));
    }
    if measured_y.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("measured values".into()));
    }
    let sign = match cfg.direction {
        Direction::Maximize => 1.0,
        Direction::Minimize => -1.0,
    };
    let scores = match cfg.kind {
        AcquisitionKind::Mu => pred.sigma.clone(),
        AcquisitionKind::Ucb => pred
            .mean
            .iter()
            .zip(&pred.sigma)
            .map(|(m, s)| sign * m + cfg.beta * s)
            .collect(),
        AcquisitionKind::Ei => {
            let best = measured_y
                .iter()
                .map(|v| sign * v)
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or_else(|| Error::Config("expected improvement needs measured values".into()))?;
            pred.mean
                .iter()
                .zip(&pred.sigma)
                .map(|(m, s)| expected_improvement(sign * m, *s, best, cfg.xi))
                .collect()
        }
    };
    Ok(scores)
}

/// Highest-scoring unmeasured location; ties go to the smallest index.
pub fn select_next(scores: &[f64], measured: &[bool]) -> Result<usize> {
    if scores.len() != measured.len() {
        return Err(Error::Dimension("scores and measured mask differ in length".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (&s, &m)) in scores.iter().zip(measured).enumerate() {
        if m {
            continue;
        }
        if s.is_nan() {
            return Err(Error::NonFinite("acquisition scores".into()));
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::BudgetExhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(mean: Vec<f64>, sigma: Vec<f64>) -> Prediction {
        Prediction { mean, sigma }
    }

    #[test]
    fn ei_reference_values() {
        assert!((expected_improvement(2.0, 1.0, 2.0, 0.0) - 0.398_942_280_4).abs() < 1e-9);
        assert_eq!(expected_improvement(1.0, 0.0, 2.0, 0.0), 0.0);
        assert_eq!(expected_improvement(2.0, 0.0, 2.0, 0.0), 0.0);
        assert_eq!(expected_improvement(3.5, 0.0, 2.0, 0.5), 1.0);
        // Φ(1) + φ(1)
        assert!((expected_improvement(1.0, 1.0, 0.0, 0.0) - 1.083_315_9).abs() < 1e-5);
    }

    #[test]
    fn direction_flips_mean_terms() {
        let p = pred(vec![1.0, 3.0, 2.0], vec![0.1, 0.1, 0.1]);
        let mut cfg = AcquisitionConfig::new(AcquisitionKind::Ucb);
        cfg.beta = 0.0;
        let up = acquisition_values(&p, &[], &cfg).unwrap();
        assert_eq!(select_next(&up, &[false; 3]).unwrap(), 1);
        cfg.direction = Direction::Minimize;
        let down = acquisition_values(&p, &[], &cfg).unwrap();
        assert_eq!(select_next(&down, &[false; 3]).unwrap(), 0);

        let mut ei = AcquisitionConfig::new(AcquisitionKind::Ei);
        ei.direction = Direction::Minimize;
        let s = acquisition_values(&p, &[1.5, 2.5], &ei).unwrap();
        // best (minimum) measured is 1.5; only index 0 predicts below it
        assert_eq!(select_next(&s, &[false; 3]).unwrap(), 0);
    }

    #[test]
    fn errors() {
        let p = pred(vec![1.0, f64::NAN], vec![0.1, 0.1]);
        assert!(acquisition_values(&p, &[0.0], &AcquisitionConfig::new(AcquisitionKind::Mu)).is_err());
        let p = pred(vec![1.0], vec![0.1]);
        assert!(acquisition_values(&p, &[], &AcquisitionConfig::new(AcquisitionKind::Ei)).is_err());
        assert_eq!(select_next(&[1.0, 2.0], &[true, true]).unwrap_err(), Error::BudgetExhausted);
        let mut bad = AcquisitionConfig::new(AcquisitionKind::Ucb);
        bad.beta = -1.0;
        assert!(acquisition_values(&p, &[], &bad).is_err());
    }

    #[test]
    fn selection_masks_and_breaks_ties() {
        assert_eq!(select_next(&[0.0, 1.0, 0.0, 3.0, 2.0, 9.0], &[false; 6]).unwrap(), 5);
        assert_eq!(select_next(&[0.0, 1.0, 0.0, 3.0, 2.0, 9.0], &[false, false, false, false, false, true]).unwrap(), 3);
        assert_eq!(select_next(&[2.0, 5.0, 5.0, 5.0], &[false, true, false, false]).unwrap(), 2);
    }

    #[test]
    fn selection_matches_masked_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            // coarse values so ties occur
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let free = rng.random_range(0..n);
            mask[free] = false;
            let mut oracle = None;
            for i in 0..n {
                if !mask[i] && oracle.is_none_or(|j: usize| scores[i] > scores[j]) {
                    oracle = Some(i);
                }
            }
            assert_eq!(select_next(&scores, &mask).unwrap(), oracle.unwrap());
        }
    }

    proptest::proptest! {
        #[test]
        fn ei_is_nonnegative_and_monotone_in_sigma(gap in 0.0f64..3.0, s1 in 0.0f64..3.0, ds in 0.0f64..3.0) {
            let a = expected_improvement(gap, s1, 0.0, 0.0);
            let b = expected_improvement(gap, s1 + ds, 0.0, 0.0);
            proptest::prop_assert!(a >= 0.0);
            proptest::prop_assert!(b + 1e-12 >= a);
        }

        #[test]
        fn ucb_without_beta_is_mean_argmax(vals in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let p = pred(vals.clone(), vals.iter().map(|v| v.abs()).collect());
            let mut cfg = AcquisitionConfig::new(AcquisitionKind::Ucb);
            cfg.beta = 0.0;
            let mask = vec![false; vals.len()];
            let s = acquisition_values(&p, &[], &cfg).unwrap();
            proptest::prop_assert_eq!(select_next(&s, &mask).unwrap(), select_next(&vals, &mask).unwrap());
        }

        #[test]
        fn mu_argmax_survives_monotone_transforms(sig in proptest::collection::vec(0.0f64..4.0, 1..50)) {
            let mask = vec![false; sig.len()];
            let cfg = AcquisitionConfig::new(AcquisitionKind::Mu);
            let base = acquisition_values(&pred(vec![0.0; sig.len()], sig.clone()), &[], &cfg).unwrap();
            let squashed: Vec<f64> = sig.iter().map(|s| 2.0 * s + s * s * s).collect();
            let t = acquisition_values(&pred(vec![0.0; sig.len()], squashed), &[], &cfg).unwrap();
            proptest::prop_assert_eq!(select_next(&base, &mask).unwrap(), select_next(&t, &mask).unwrap());
        }
    }
}
