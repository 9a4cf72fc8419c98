//! Two-dimensional latent coordinates for every patch.
//!
//! The default embedding projects centred patches onto their two leading
//! principal directions. Coordinates computed elsewhere (for example by a
//! trained autoencoder) can be attached with [`LatentEmbedding::external`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::PatchSet;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Pca,
    External,
}

/// Fitted projection: patch mean plus two orthonormal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

impl PcaTransform {
    pub fn project(&self, x: &[f32]) -> Point {
        let mut z = [0.0; 2];
        for (k, comp) in self.components.iter().enumerate() {
            z[k] = x
                .iter()
                .zip(&self.mean)
                .zip(comp)
                .map(|((&xi, mi), ci)| (xi as f64 - mi) * ci)
                .sum();
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEmbedding {
    coords: Vec<Point>,
    source: EmbeddingSource,
    transform: Option<PcaTransform>,
}

impl LatentEmbedding {
    /// Wrap externally computed coordinates; no recentring is applied.
    pub fn external(coords: Vec<Point>, n_expected: usize) -> Result<Self> {
        if coords.len() != n_expected {
            return Err(Error::Dimension(format!(
                "embedding has {} rows, expected {n_expected}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite(format!("latent row {i}")));
        }
        Ok(Self { coords, source: EmbeddingSource::External, transform: None })
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn transform(&self) -> Option<&PcaTransform> {
        self.transform.as_ref()
    }

    /// Index of the Euclidean-nearest latent point; ties go to the smallest index.
    pub fn nearest_index(&self, query: Point) -> Result<usize> {
        if !query[0].is_finite() || !query[1].is_finite() {
            return Err(Error::NonFinite("latent query".into()));
        }
        if self.coords.is_empty() {
            return Err(Error::Dimension("embedding is empty".into()));
        }
        Ok(nearest_unchecked(&self.coords, query))
    }
}

pub(crate) fn nearest_unchecked(coords: &[Point], q: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in coords.iter().enumerate() {
        let d = sq_dist(*p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[inline]
pub fn sq_dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    libm::sqrt(sq_dist(a, b))
}

/// Project patches onto their two leading principal directions.
///
/// Sign convention: the largest-magnitude entry of each direction is positive.
pub fn pca_embed(patches: &PatchSet) -> Result<LatentEmbedding> {
    let n = patches.len();
    let d = patches.dim();
    if n < 3 {
        return Err(Error::Dimension(format!("need at least 3 patches, got {n}")));
    }
    if patches.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("patch values".into()));
    }
    let mut mean = vec![0.0; d];
    for p in patches.iter() {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for p in patches.iter() {
        for (c, (&v, m)) in centred.iter_mut().zip(p.iter().zip(&mean)) {
            *c = v as f64 - m;
        }
        for i in 0..d {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov[i * d..i * d + d];
            for j in i..d {
                row[j] += ci * centred[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let scale = mean.iter().fold(1.0f64, |a, m| a.max(m * m));
    let (values, mut vectors) = if d == 1 {
        (vec![cov[0]], vec![vec![1.0]])
    } else {
        symmetric_eigen(&cov, d)
    };
    if !(values[0] > 1e-24 * scale) {
        return Err(Error::DegenerateEmbedding("all patches are identical".into()));
    }
    let second = if d > 1 {
        let mut v = vectors.swap_remove(1);
        fix_sign(&mut v);
        v
    } else {
        vec![0.0]
    };
    let mut first = vectors.swap_remove(0);
    fix_sign(&mut first);
    let transform = PcaTransform {
        mean,
        components: [first, second],
        explained_variance: [values[0], values.get(1).copied().unwrap_or(0.0).max(0.0)],
    };
    let coords = patches.iter().map(|p| transform.project(p)).collect();
    Ok(LatentEmbedding { coords, source: EmbeddingSource::Pca, transform: Some(transform) })
}

fn fix_sign(v: &mut [f64]) {
    let mut imax = 0;
    for (i, x) in v.iter().enumerate() {
        if libm::fabs(*x) > libm::fabs(v[imax]) {
            imax = i;
        }
    }
    if v[imax] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// An embedding plus cached geometry used for default radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    embedding: LatentEmbedding,
    bbox: [Point; 2],
    /// Pairwise-distance quantiles at 0.0%, 0.1%, ..., 100.0%.
    quantiles: Vec<f64>,
}

/// Above this many points the pairwise-distance quantiles use an evenly
/// strided subset.
const QUANTILE_POINT_CAP: usize = 2500;

impl LatentDistribution {
    pub fn new(embedding: LatentEmbedding) -> Result<Self> {
        let coords = embedding.coords();
        if coords.len() < 2 {
            return Err(Error::Dimension("latent distribution needs at least 2 points".into()));
        }
        let bbox = bounding_box(coords);
        let stride = coords.len().div_ceil(QUANTILE_POINT_CAP);
        let subset: Vec<Point> = coords.iter().step_by(stride).copied().collect();
        let mut d = Vec::with_capacity(subset.len() * (subset.len() - 1) / 2);
        for i in 0..subset.len() {
            for j in (i + 1)..subset.len() {
                d.push(dist(subset[i], subset[j]));
            }
        }
        d.sort_unstable_by(|a, b| a.total_cmp(b));
        let quantiles = (0..=1000).map(|q| interpolated_quantile(&d, q as f64 / 1000.0)).collect();
        Ok(Self { embedding, bbox, quantiles })
    }

    pub fn embedding(&self) -> &LatentEmbedding {
        &self.embedding
    }

    pub fn coords(&self) -> &[Point] {
        self.embedding.coords()
    }

    /// `[min, max]` corners.
    pub fn bbox(&self) -> [Point; 2] {
        self.bbox
    }

    /// `pct`-th percentile (0–100) of all pairwise latent distances.
    pub fn pairwise_percentile(&self, pct: f64) -> f64 {
        let pos = (pct.clamp(0.0, 100.0) * 10.0).min(1000.0);
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(1000);
        let t = pos - lo as f64;
        self.quantiles[lo] + t * (self.quantiles[hi] - self.quantiles[lo])
    }
}

pub fn bounding_box(points: &[Point]) -> [Point; 2] {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    [lo, hi]
}

/// Linear-interpolation quantile of sorted data (rank `q·(n−1)`).
pub fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}
