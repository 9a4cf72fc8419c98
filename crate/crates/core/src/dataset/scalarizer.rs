use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Dataset, HysteresisLoop, PatchSet};
use crate::error::{Error, Result};

/// Scalar functionals of a hysteresis loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarizerKind {
    /// Absolute enclosed area of the (bias, response) cycle.
    #[default]
    Area,
    /// Response gap between the branches at the bias closest to zero.
    Height,
    /// Midpoint of the two coercive voltages.
    Imprint,
}

/// Reduce a loop to one scalar. `None` marks an undefined value (a branch
/// that never crosses zero when computing imprint).
pub fn scalarize_loop(lp: &HysteresisLoop, kind: ScalarizerKind) -> Option<f64> {
    match kind {
        ScalarizerKind::Area => Some(shoelace_area(lp.bias(), lp.response())),
        ScalarizerKind::Height => {
            let (up, down) = branches(lp.bias());
            let a = nearest_zero_bias(lp.bias(), &up);
            let b = nearest_zero_bias(lp.bias(), &down);
            Some(libm::fabs(lp.response()[a] - lp.response()[b]))
        }
        ScalarizerKind::Imprint => {
            let (up, down) = branches(lp.bias());
            let vp = zero_crossing(lp.bias(), lp.response(), &up)?;
            let vn = zero_crossing(lp.bias(), lp.response(), &down)?;
            Some(0.5 * (vp + vn))
        }
    }
}

fn shoelace_area(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += x[i] * y[j] - x[j] * y[i];
    }
    libm::fabs(0.5 * acc)
}

/// Split the cyclic sweep at its extreme bias samples: the up branch runs from
/// the minimum to the maximum, the down branch from the maximum back to the
/// minimum (both inclusive, indices wrap).
fn branches(bias: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = bias.len();
    let mut imin = 0;
    let mut imax = 0;
    for (i, &b) in bias.iter().enumerate() {
        if b < bias[imin] {
            imin = i;
        }
        if b > bias[imax] {
            imax = i;
        }
    }
    let walk = |from: usize, to: usize| {
        let mut idx = Vec::new();
        let mut i = from;
        loop {
            idx.push(i);
            if i == to {
                break;
            }
            i = (i + 1) % n;
        }
        idx
    };
    (walk(imin, imax), walk(imax, imin))
}

fn nearest_zero_bias(bias: &[f64], branch: &[usize]) -> usize {
    let mut best = branch[0];
    for &i in branch {
        if libm::fabs(bias[i]) < libm::fabs(bias[best]) {
            best = i;
        }
    }
    best
}

/// First sign change of the response along a branch, linearly interpolated.
fn zero_crossing(bias: &[f64], resp: &[f64], branch: &[usize]) -> Option<f64> {
    for w in branch.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ra, rb) = (resp[a], resp[b]);
        if ra == 0.0 {
            return Some(bias[a]);
        }
        if (ra < 0.0) != (rb < 0.0) || rb == 0.0 {
            let t = ra / (ra - rb);
            return Some(bias[a] + t * (bias[b] - bias[a]));
        }
    }
    None
}

/// Ground-truth scalarizer at every patch centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarizerField {
    pub kind: ScalarizerKind,
    pub values: Vec<f64>,
}

impl ScalarizerField {
    pub fn compute(dataset: &Dataset, patches: &PatchSet, kind: ScalarizerKind) -> Result<Self> {
        let values = patches
            .locations()
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                scalarize_loop(&dataset.loop_at(r, c), kind)
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::NonFinite(format!("{kind:?} scalarizer undefined at patch {i} ({r}, {c})"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kind, values })
    }
}
