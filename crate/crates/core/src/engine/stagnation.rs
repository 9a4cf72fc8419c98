use alloc::format;

use serde::{Deserialize, Serialize};

use super::{Source, TraceRecord};
use crate::embedding::dist;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagnationParams {
    /// BO selections per window.
    pub window: usize,
    /// Percentile of pairwise latent distances used as the cluster radius.
    pub radius_pct: f64,
    /// Fraction of a window that must sit within the radius of its centroid.
    pub frac: f64,
    /// Successive windows that must all be clustered.
    pub consecutive: usize,
}

impl Default for StagnationParams {
    fn default() -> Self {
        Self { window: 10, radius_pct: 5.0, frac: 0.8, consecutive: 2 }
    }
}

impl StagnationParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.consecutive < 1 {
            return Err(Error::Config(format!(
                "stagnation window {} and consecutive {} must be at least 2 and 1",
                self.window, self.consecutive
            )));
        }
        if !(self.radius_pct > 0.0 && self.radius_pct <= 100.0) {
            return Err(Error::Config("stagnation radius percentile must lie in (0, 100]".into()));
        }
        if !(self.frac > 0.0 && self.frac <= 1.0) {
            return Err(Error::Config("stagnation fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// True iff each of the last `consecutive` sliding windows of `window` BO
/// selections has at least `frac` of its latent points within `radius` of the
/// window centroid. Seed and intervention records are ignored.
pub fn detect_stagnation(trace: &[TraceRecord], radius: f64, params: &StagnationParams) -> bool {
    let bo: alloc::vec::Vec<_> = trace.iter().filter(|r| r.source == Source::Bo).map(|r| r.z).collect();
    let w = params.window;
    if w == 0 || params.consecutive == 0 || bo.len() < w + params.consecutive - 1 {
        return false;
    }
    let need = libm::ceil(params.frac * w as f64 - 1e-9) as usize;
    (0..params.consecutive).all(|shift| {
        let end = bo.len() - shift;
        let win = &bo[end - w..end];
        let c = [
            win.iter().map(|z| z[0]).sum::<f64>() / w as f64,
            win.iter().map(|z| z[1]).sum::<f64>() / w as f64,
        ];
        win.iter().filter(|z| dist(**z, c) <= radius).count() >= need
    })
}
