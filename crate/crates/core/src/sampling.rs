//! Probability models over the latent plane and their snapping to real patches.
//!
//! Every model proposes continuous latent points; [`SamplingModel::draw_indices`]
//! maps them to the nearest embedded patch, resampling on collisions so the
//! returned locations are distinct.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{bounding_box, dist, nearest_unchecked, sq_dist, LatentEmbedding, Point};
use crate::error::{Error, Result};

/// Proposals after which a rejection sampler may give up.
pub const REJECTION_PROPOSAL_CAP: u64 = 1_000_000;
/// Minimum acceptance rate tolerated once the cap is reached.
pub const MIN_ACCEPTANCE_RATE: f64 = 1e-4;
/// Resampling attempts per requested index before snapping gives up.
pub const SNAP_RETRIES: usize = 10_000;

pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_BOX_MARGIN: f64 = 0.05;

/// Isotropic Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    centers: Vec<Point>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(centers: Vec<Point>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("kde needs at least one center".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!("kde bandwidth must be positive, got {bandwidth}")));
        }
        if centers.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::NonFinite("kde centers".into()));
        }
        Ok(Self { centers, bandwidth })
    }

    /// KDE with the Scott-style bandwidth `n^(−1/6)·σ̂`, where `σ̂` is the
    /// geometric mean of the per-axis sample standard deviations. Falls back to
    /// `fallback` when that is zero (a single center or collinear data).
    pub fn scott(centers: Vec<Point>, fallback: f64) -> Result<Self> {
        let h = scott_bandwidth(&centers);
        let h = if h > 0.0 && h.is_finite() { h } else { fallback };
        Self::new(centers, h)
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `(1/n) Σ (2πh²)⁻¹ exp(−‖z − cᵢ‖² / 2h²)`
    pub fn density(&self, z: Point) -> Result<f64> {
        if !z[0].is_finite() || !z[1].is_finite() {
            return Err(Error::NonFinite("kde query".into()));
        }
        Ok(self.density_unchecked(z))
    }

    fn density_unchecked(&self, z: Point) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let norm = 1.0 / (2.0 * core::f64::consts::PI * h2);
        let s: f64 = self.centers.iter().map(|c| libm::exp(-sq_dist(z, *c) / (2.0 * h2))).sum();
        norm * s / self.centers.len() as f64
    }

    /// Exact draw: a uniformly chosen center plus `N(0, h²I)` noise.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let c = self.centers[rng.random_range(0..self.centers.len())];
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        [c[0] + self.bandwidth * dx, c[1] + self.bandwidth * dy]
    }
}

pub fn scott_bandwidth(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sd = [0.0; 2];
    for (k, s) in sd.iter_mut().enumerate() {
        let m = points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        let v = points.iter().map(|p| (p[k] - m) * (p[k] - m)).sum::<f64>() / (n - 1) as f64;
        *s = libm::sqrt(v);
    }
    libm::pow(n as f64, -1.0 / 6.0) * libm::sqrt(sd[0] * sd[1])
}

/// `n` exact KDE draws.
pub fn sample_gd<R: Rng + ?Sized>(model: &KdeModel, n: usize, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| model.sample_point(rng)).collect()
}

/// Axis-aligned latent box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentBox {
    pub min: Point,
    pub max: Point,
}

impl LatentBox {
    pub fn around(points: &[Point]) -> Self {
        let [min, max] = bounding_box(points);
        Self { min, max }
    }

    /// Grow by `margin` times the extent on every side.
    pub fn inflate(&self, margin: f64) -> Self {
        let w = [self.max[0] - self.min[0], self.max[1] - self.min[1]];
        Self {
            min: [self.min[0] - margin * w[0], self.min[1] - margin * w[1]],
            max: [self.max[0] + margin * w[0], self.max[1] + margin * w[1]],
        }
    }

    pub fn contains(&self, z: Point) -> bool {
        z[0] >= self.min[0] && z[0] <= self.max[0] && z[1] >= self.min[1] && z[1] <= self.max[1]
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        [self.min[0] + u * (self.max[0] - self.min[0]), self.min[1] + v * (self.max[1] - self.min[1])]
    }
}

/// Uniform over the KDE superlevel set `{z : p(z) ≥ ε · max_i p(cᵢ)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformSupport {
    kde: KdeModel,
    threshold: f64,
    support_threshold: f64,
    bounds: LatentBox,
}

impl UniformSupport {
    pub fn new(kde: KdeModel, support_threshold: f64) -> Result<Self> {
        if !(support_threshold > 0.0 && support_threshold < 1.0) {
            return Err(Error::Config(format!("support threshold must lie in (0, 1), got {support_threshold}")));
        }
        let peak = kde.centers.iter().map(|c| kde.density_unchecked(*c)).fold(0.0, f64::max);
        let bounds = LatentBox::around(&kde.centers);
        Ok(Self { threshold: support_threshold * peak, kde, support_threshold, bounds })
    }

    pub fn kde(&self) -> &KdeModel {
        &self.kde
    }

    /// Absolute density level `ε · max center density`.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn support_threshold(&self) -> f64 {
        self.support_threshold
    }

    pub fn in_support(&self, z: Point) -> bool {
        self.kde.density_unchecked(z) >= self.threshold
    }
}

/// Rejection-sample `n` points uniformly from the support.
pub fn sample_ud<R: Rng + ?Sized>(model: &UniformSupport, n: usize, rng: &mut R) -> Result<Vec<Point>> {
    SamplingModel::Ud(model.clone()).sample(n, rng)
}

/// Uniform points in the bounding box of `embedding` inflated by `margin` per side.
pub fn sample_uls<R: Rng + ?Sized>(embedding: &LatentEmbedding, n: usize, margin: f64, rng: &mut R) -> Vec<Point> {
    let b = LatentBox::around(embedding.coords()).inflate(margin);
    (0..n).map(|_| b.sample(rng)).collect()
}

/// Nearest embedded patch for every point.
pub fn snap_to_indices(embedding: &LatentEmbedding, points: &[Point]) -> Result<Vec<usize>> {
    points.iter().map(|p| embedding.nearest_index(*p)).collect()
}

/// Operator-drawn latent region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Region {
    Rectangle { z1_min: f64, z1_max: f64, z2_min: f64, z2_max: f64 },
    /// Closed lasso polygon; the last vertex connects back to the first.
    Polygon { vertices: Vec<Point> },
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Rectangle { z1_min, z1_max, z2_min, z2_max } => {
                if [z1_min, z1_max, z2_min, z2_max].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("region bounds".into()));
                }
                if z1_min > z1_max || z2_min > z2_max {
                    return Err(Error::EmptyRegion(format!(
                        "rectangle [{z1_min}, {z1_max}] x [{z2_min}, {z2_max}] has min above max"
                    )));
                }
            }
            Region::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::EmptyRegion(format!("polygon has {} vertices, needs 3", vertices.len())));
                }
                if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
                    return Err(Error::NonFinite("polygon vertices".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, z: Point) -> bool {
        match self {
            Region::Rectangle { z1_min, z1_max, z2_min, z2_max } => {
                z[0] >= *z1_min && z[0] <= *z1_max && z[1] >= *z2_min && z[1] <= *z2_max
            }
            Region::Polygon { vertices } => {
                // even-odd ray casting
                let mut inside = false;
                let n = vertices.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (a, b) = (vertices[i], vertices[j]);
                    if (a[1] > z[1]) != (b[1] > z[1]) {
                        let x = a[0] + (z[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                        if z[0] < x {
                            inside = !inside;
                        }
                    }
                    j = i;
                }
                inside
            }
        }
    }

    pub fn bounds(&self) -> LatentBox {
        match self {
            Region::Rectangle { z1_min, z1_max, z2_min, z2_max } => {
                LatentBox { min: [*z1_min, *z2_min], max: [*z1_max, *z2_max] }
            }
            Region::Polygon { vertices } => LatentBox::around(vertices),
        }
    }
}

/// Ball in latent space with zero sampling probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionZone {
    pub center: Point,
    pub radius: f64,
}

impl ExclusionZone {
    pub fn contains(&self, z: Point) -> bool {
        dist(z, self.center) < self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Gd,
    #[default]
    Ud,
    Uls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SamplingModel {
    /// Proportional to the latent point density.
    Gd(KdeModel),
    /// Uniform over the dense part of the latent distribution.
    Ud(UniformSupport),
    /// Uniform over the (margined) latent bounding box.
    Uls(LatentBox),
    /// A base model with balls carved out.
    Exclusion { base: Box<SamplingModel>, zones: Vec<ExclusionZone> },
    /// KDE restricted to the patches inside an operator-chosen region.
    Prioritizing { region: Region, kde: KdeModel },
}

/// Bandwidth used when the Scott rule degenerates: a millionth of the latent
/// bounding-box diagonal.
fn fallback_bandwidth(coords: &[Point]) -> f64 {
    let b = LatentBox::around(coords);
    (1e-6 * dist(b.min, b.max)).max(1e-12)
}

impl SamplingModel {
    pub fn gd(embedding: &LatentEmbedding) -> Result<Self> {
        let c = embedding.coords().to_vec();
        let fb = fallback_bandwidth(&c);
        Ok(Self::Gd(KdeModel::scott(c, fb)?))
    }

    pub fn ud(embedding: &LatentEmbedding, support_threshold: f64) -> Result<Self> {
        let c = embedding.coords().to_vec();
        let fb = fallback_bandwidth(&c);
        Ok(Self::Ud(UniformSupport::new(KdeModel::scott(c, fb)?, support_threshold)?))
    }

    pub fn uls(embedding: &LatentEmbedding, margin: f64) -> Result<Self> {
        if !(margin >= 0.0) || !margin.is_finite() {
            return Err(Error::Config("box margin must be non-negative".into()));
        }
        if embedding.is_empty() {
            return Err(Error::Dimension("embedding is empty".into()));
        }
        Ok(Self::Uls(LatentBox::around(embedding.coords()).inflate(margin)))
    }

    fn base(embedding: &LatentEmbedding, kind: BaseKind) -> Result<Self> {
        match kind {
            BaseKind::Gd => Self::gd(embedding),
            BaseKind::Ud => Self::ud(embedding, DEFAULT_SUPPORT_THRESHOLD),
            BaseKind::Uls => Self::uls(embedding, DEFAULT_BOX_MARGIN),
        }
    }

    /// Base model with a ball of radius `radius` removed around every trapped center.
    pub fn exclusion(
        embedding: &LatentEmbedding,
        trapped_centers: &[Point],
        radius: f64,
        base_kind: BaseKind,
    ) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Config(format!("exclusion radius must be positive, got {radius}")));
        }
        if trapped_centers.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::NonFinite("trapped centers".into()));
        }
        let base = Self::base(embedding, base_kind)?;
        let zones: Vec<ExclusionZone> =
            trapped_centers.iter().map(|&center| ExclusionZone { center, radius }).collect();
        let model = Self::Exclusion { base: Box::new(base), zones };
        if !embedding.coords().iter().any(|&z| model.accepts(z)) {
            return Err(Error::SupportTooSmall("exclusion zones cover the entire support".into()));
        }
        Ok(model)
    }

    /// GD model fitted only to the embedded patches inside `region`.
    pub fn prioritizing(embedding: &LatentEmbedding, region: Region, bandwidth: Option<f64>) -> Result<Self> {
        region.validate()?;
        let inside: Vec<Point> = embedding.coords().iter().copied().filter(|&z| region.contains(z)).collect();
        if inside.is_empty() {
            let b = region.bounds();
            return Err(Error::EmptyRegion(format!(
                "no latent points inside region spanning [{}, {}] x [{}, {}]",
                b.min[0], b.max[0], b.min[1], b.max[1]
            )));
        }
        let kde = match bandwidth {
            Some(h) => KdeModel::new(inside, h)?,
            None => KdeModel::scott(inside, fallback_bandwidth(embedding.coords()))?,
        };
        Ok(Self::Prioritizing { region, kde })
    }

    /// Whether a proposal at `z` is kept (the rejection predicate).
    pub fn accepts(&self, z: Point) -> bool {
        match self {
            Self::Gd(_) | Self::Prioritizing { .. } => true,
            Self::Ud(u) => u.in_support(z),
            Self::Uls(b) => b.contains(z),
            Self::Exclusion { base, zones } => base.accepts(z) && !zones.iter().any(|zone| zone.contains(z)),
        }
    }

    /// Whether a patch at latent position `z` may be returned after snapping.
    pub fn admits_location(&self, z: Point) -> bool {
        match self {
            Self::Exclusion { zones, .. } => !zones.iter().any(|zone| zone.contains(z)),
            _ => true,
        }
    }

    pub fn exclusion_zones(&self) -> &[ExclusionZone] {
        match self {
            Self::Exclusion { zones, .. } => zones,
            _ => &[],
        }
    }

    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            Self::Gd(k) | Self::Prioritizing { kde: k, .. } => k.sample_point(rng),
            Self::Ud(u) => u.bounds.sample(rng),
            Self::Uls(b) => b.sample(rng),
            Self::Exclusion { base, .. } => base.propose(rng),
        }
    }

    /// `n` latent points from the model.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        let mut out = Vec::with_capacity(n);
        let mut proposals: u64 = 0;
        while out.len() < n {
            let z = self.propose(rng);
            proposals += 1;
            if self.accepts(z) {
                out.push(z);
            } else if proposals >= REJECTION_PROPOSAL_CAP
                && (out.len() as f64) < MIN_ACCEPTANCE_RATE * proposals as f64
            {
                return Err(Error::SupportTooSmall(format!(
                    "{} of {proposals} proposals accepted",
                    out.len()
                )));
            }
        }
        Ok(out)
    }

    /// Draw `n` patch indices by sampling and snapping to the nearest patch.
    /// With `dedupe`, any draw that collides with an earlier one, hits a
    /// `blocked` index, or lands on a patch the model does not admit is
    /// resampled, so the result is `n` distinct admissible locations.
    pub fn draw_indices<R: Rng + ?Sized>(
        &self,
        embedding: &LatentEmbedding,
        n: usize,
        blocked: &[bool],
        dedupe: bool,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if !dedupe {
            return snap_to_indices(embedding, &self.sample(n, rng)?);
        }
        let coords = embedding.coords();
        if blocked.len() != coords.len() {
            return Err(Error::Dimension("blocked mask does not match embedding".into()));
        }
        let free = (0..coords.len()).filter(|&i| !blocked[i] && self.admits_location(coords[i])).count();
        if free < n {
            return Err(Error::Sampling(format!("only {free} admissible locations for {n} draws")));
        }
        let first = self.sample(n, rng)?;
        let mut taken = blocked.to_vec();
        let mut out = Vec::with_capacity(n);
        for z in first {
            let mut idx = nearest_unchecked(coords, z);
            let mut retries = 0;
            while taken[idx] || !self.admits_location(coords[idx]) {
                retries += 1;
                if retries > SNAP_RETRIES {
                    return Err(Error::Sampling(format!(
                        "no distinct admissible location after {SNAP_RETRIES} resamples"
                    )));
                }
                let z = self.sample(1, rng)?[0];
                idx = nearest_unchecked(coords, z);
            }
            taken[idx] = true;
            out.push(idx);
        }
        Ok(out)
    }
}

/// Greedy leader clustering of recent selections: each point joins the first
/// center within `radius`, otherwise it starts a new cluster. Returns the
/// member means in order of first appearance.
pub fn cluster_centers(points: &[Point], radius: f64) -> Vec<Point> {
    let mut leaders: Vec<Point> = Vec::new();
    let mut sums: Vec<(Point, usize)> = Vec::new();
    for &p in points {
        match leaders.iter().position(|&l| dist(l, p) <= radius) {
            Some(k) => {
                sums[k].0[0] += p[0];
                sums[k].0[1] += p[1];
                sums[k].1 += 1;
            }
            None => {
                leaders.push(p);
                sums.push((p, 1));
            }
        }
    }
    sums.into_iter().map(|(s, c)| [s[0] / c as f64, s[1] / c as f64]).collect()
}
