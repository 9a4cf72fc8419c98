//! The measurement loop: seed, fit, score, select, measure, repeat.
//!
//! Measuring a location means reading the ground-truth scalarizer of the loop
//! at that patch centre, which is what a microscope would return.

mod checkpoint;
mod metrics;
mod stagnation;
pub mod study;


use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{acquisition_values, select_next, AcquisitionConfig};
use crate::dataset::{extract_patches, Dataset, PatchSet, ScalarizerField, ScalarizerKind};
use crate::embedding::{pca_embed, LatentDistribution, LatentEmbedding, Point};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::sampling::{
    cluster_centers, BaseKind, Region, SamplingModel, DEFAULT_BOX_MARGIN, DEFAULT_SUPPORT_THRESHOLD,
};
use crate::surrogate::{DeepKernelModel, InputScaling, Prediction, TrainOptions};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{compute_learning_metrics, CurveEntry};
pub use stagnation::{detect_stagnation, StagnationParams};

pub const DEFAULT_PATCH_SIZE: usize = 8;
pub const DEFAULT_INTERVENTION_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedModel {
    #[default]
    Gd,
    Ud,
    Uls,
    /// Random selection; drawn from the GD model.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    /// Adam iterations for the first fit on the seed points.
    pub init_iters: usize,
    /// Warm-start iterations after every new measurement.
    pub retrain_iters: usize,
    pub step_size: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { init_iters: 200, retrain_iters: 50, step_size: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    /// UD support level ε.
    pub support_threshold: f64,
    /// ULS bounding-box margin per side.
    pub bbox_margin: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { support_threshold: DEFAULT_SUPPORT_THRESHOLD, bbox_margin: DEFAULT_BOX_MARGIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub acquisition: AcquisitionConfig,
    pub seed_model: SeedModel,
    pub n_seed: usize,
    /// Total measurements, seeds included.
    pub budget: usize,
    pub scalarizer: ScalarizerKind,
    pub surrogate: SurrogateConfig,
    pub stagnation: StagnationParams,
    pub sampling: SamplingParams,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            acquisition: AcquisitionConfig::default(),
            seed_model: SeedModel::Gd,
            n_seed: 5,
            budget: 100,
            scalarizer: ScalarizerKind::Area,
            surrogate: SurrogateConfig::default(),
            stagnation: StagnationParams::default(),
            sampling: SamplingParams::default(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, n_patches: usize) -> Result<()> {
        self.acquisition.validate()?;
        self.stagnation.validate()?;
        if self.n_seed < 2 {
            return Err(Error::Config(format!("n_seed must be at least 2, got {}", self.n_seed)));
        }
        if self.budget < self.n_seed {
            return Err(Error::Config(format!("budget {} is below n_seed {}", self.budget, self.n_seed)));
        }
        if self.budget > n_patches {
            return Err(Error::Config(format!("budget {} exceeds the {n_patches} patches", self.budget)));
        }
        if !(self.surrogate.step_size > 0.0) || !self.surrogate.step_size.is_finite() {
            return Err(Error::Config("surrogate step size must be positive".into()));
        }
        let s = &self.sampling;
        if !(s.support_threshold > 0.0 && s.support_threshold < 1.0) {
            return Err(Error::Config("support threshold must lie in (0, 1)".into()));
        }
        if !(s.bbox_margin >= 0.0) || !s.bbox_margin.is_finite() {
            return Err(Error::Config("bounding-box margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything about the sample that stays fixed during an experiment.
#[derive(Debug, Clone)]
pub struct Specimen {
    dataset: Dataset,
    patches: PatchSet,
    latent: LatentDistribution,
    scalarizer: ScalarizerKind,
    truth: Vec<f64>,
    scaling: InputScaling,
}

impl Specimen {
    /// Extract `patch_size` patches, embed them (PCA unless `embedding` is
    /// given) and compute the ground-truth scalarizer at every patch centre.
    pub fn new(
        dataset: Dataset,
        patch_size: usize,
        embedding: Option<LatentEmbedding>,
        scalarizer: ScalarizerKind,
    ) -> Result<Self> {
        let patches = extract_patches(dataset.image(), patch_size)?;
        let embedding = match embedding {
            Some(e) if e.len() != patches.len() => {
                return Err(Error::Dimension(format!(
                    "embedding has {} points but there are {} patches",
                    e.len(),
                    patches.len()
                )))
            }
            Some(e) => e,
            None => pca_embed(&patches)?,
        };
        let latent = LatentDistribution::new(embedding)?;
        let truth = ScalarizerField::compute(&dataset, &patches, scalarizer)?.values;
        let scaling = InputScaling::fit(patches.iter());
        Ok(Self { dataset, patches, latent, scalarizer, truth, scaling })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn patches(&self) -> &PatchSet {
        &self.patches
    }

    pub fn latent(&self) -> &LatentDistribution {
        &self.latent
    }

    pub fn embedding(&self) -> &LatentEmbedding {
        self.latent.embedding()
    }

    pub fn scalarizer(&self) -> ScalarizerKind {
        self.scalarizer
    }

    /// Ground-truth scalarizer per patch; simulator-only.
    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Seed,
    Bo,
    Intervention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Position in the trace, from 0.
    pub step: usize,
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub z: Point,
    pub value: f64,
    /// Flat pixel index of the measured loop in the dataset.
    pub pixel: usize,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    BudgetExhausted,
    Paused,
}

/// One completed measurement after the seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Learning-curve step (1 for the first measurement after the seeds).
    pub step: usize,
    pub index: usize,
    pub source: Source,
    pub mean_sigma: f64,
    pub stagnant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InterventionSpec {
    /// Remove balls around trapped points from a base model. Defaults: radius
    /// is the 10th percentile of pairwise latent distances, centers are the
    /// clustered last five selections.
    Exclusion {
        #[serde(default)]
        centers: Option<Vec<Point>>,
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        base: BaseKind,
    },
    /// Sample from a KDE of the patches inside a region.
    Prioritizing {
        region: Region,
        #[serde(default)]
        bandwidth: Option<f64>,
    },
}

/// Percentile of pairwise latent distances used as the default exclusion radius.
pub const DEFAULT_EXCLUSION_PERCENTILE: f64 = 10.0;
/// Recent selections clustered into default trapped centers.
pub const TRAPPED_WINDOW: usize = 5;

/// Scores candidate locations; larger is better.
pub trait Scorer {
    fn scores(&self, state: &ExperimentState) -> Result<Vec<f64>>;
}

/// The configured acquisition function.
pub struct AcquisitionScorer;

impl Scorer for AcquisitionScorer {
    fn scores(&self, state: &ExperimentState) -> Result<Vec<f64>> {
        acquisition_values(&state.prediction, &state.measured_values(), &state.config.acquisition)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentState {
    config: ExperimentConfig,
    specimen: Arc<Specimen>,
    model: DeepKernelModel,
    prediction: Prediction,
    measured: Vec<bool>,
    trace: Vec<TraceRecord>,
    curve: Vec<CurveEntry>,
    status: Status,
    seeding: ChaCha8Rng,
    surrogate: ChaCha8Rng,
    sampling: ChaCha8Rng,
}

impl ExperimentState {
    /// Draw and measure the seed points, then fit the surrogate once.
    pub fn init(specimen: Arc<Specimen>, config: ExperimentConfig) -> Result<Self> {
        config.validate(specimen.len())?;
        if config.scalarizer != specimen.scalarizer {
            return Err(Error::Config(format!(
                "config scalarizer {:?} differs from specimen scalarizer {:?}",
                config.scalarizer, specimen.scalarizer
            )));
        }
        let mut seeding = substream(config.master_seed, Stream::Seeding);
        let mut surrogate = substream(config.master_seed, Stream::Surrogate);
        let sampling = substream(config.master_seed, Stream::Sampling);

        let embedding = specimen.embedding();
        let model = match config.seed_model {
            SeedModel::Gd | SeedModel::Random => SamplingModel::gd(embedding)?,
            SeedModel::Ud => SamplingModel::ud(embedding, config.sampling.support_threshold)?,
            SeedModel::Uls => SamplingModel::uls(embedding, config.sampling.bbox_margin)?,
        };
        let n = specimen.len();
        let seeds = model.draw_indices(embedding, config.n_seed, &alloc::vec![false; n], true, &mut seeding)?;

        let mut measured = alloc::vec![false; n];
        let mut trace = Vec::with_capacity(config.budget);
        for &i in &seeds {
            measured[i] = true;
            trace.push(record(&specimen, trace.len(), i, Source::Seed));
        }
        let mut dkl = DeepKernelModel::new(specimen.patches.dim(), specimen.scaling, &mut surrogate);
        let (x, y) = training_data(&specimen, &trace);
        dkl.fit(&x, &y, &train_options(config.surrogate.init_iters, &config))?;
        let prediction = dkl.predict(&specimen.patches)?;
        let curve = alloc::vec![compute_learning_metrics(0, &prediction, &specimen.truth)];
        let status = if trace.len() >= config.budget { Status::BudgetExhausted } else { Status::Running };
        Ok(Self {
            config,
            specimen,
            model: dkl,
            prediction,
            measured,
            trace,
            curve,
            status,
            seeding,
            surrogate,
            sampling,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn specimen(&self) -> &Arc<Specimen> {
        &self.specimen
    }

    pub fn model(&self) -> &DeepKernelModel {
        &self.model
    }

    /// Surrogate prediction over all patches after the latest fit.
    pub fn prediction(&self) -> &Prediction {
        &self.prediction
    }

    pub fn measured(&self) -> &[bool] {
        &self.measured
    }

    pub fn measured_count(&self) -> usize {
        self.trace.len()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn curve(&self) -> &[CurveEntry] {
        &self.curve
    }

    pub fn status(&self) -> Status {
        self.status
    }

    /// Learning-curve steps completed after the seeds.
    pub fn steps_completed(&self) -> usize {
        self.curve.len() - 1
    }

    /// Scalarizer values in trace order.
    pub fn measured_values(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.value).collect()
    }

    pub fn is_stagnant(&self) -> bool {
        let r = self.specimen.latent.pairwise_percentile(self.config.stagnation.radius_pct);
        detect_stagnation(&self.trace, r, &self.config.stagnation)
    }

    pub fn pause(&mut self) -> Result<()> {
        match self.status {
            Status::Running => {
                self.status = Status::Paused;
                Ok(())
            }
            s => Err(Error::State(format!("cannot pause an experiment that is {s:?}"))),
        }
    }

    pub fn resume(&mut self) -> Result<()> {
        match self.status {
            Status::Paused => {
                self.status = Status::Running;
                Ok(())
            }
            s => Err(Error::State(format!("cannot resume an experiment that is {s:?}"))),
        }
    }

    fn require_running(&self) -> Result<()> {
        match self.status {
            Status::Running => Ok(()),
            Status::BudgetExhausted => Err(Error::BudgetExhausted),
            Status::Paused => Err(Error::State("experiment is paused".into())),
        }
    }

    /// One BO iteration with the configured acquisition function.
    pub fn step(&mut self) -> Result<StepReport> {
        self.step_with(&AcquisitionScorer)
    }

    /// One BO iteration with caller-supplied scores. On error the state is
    /// unchanged.
    pub fn step_with(&mut self, scorer: &dyn Scorer) -> Result<StepReport> {
        self.require_running()?;
        let scores = scorer.scores(self)?;
        if scores.len() != self.measured.len() {
            return Err(Error::Dimension("scorer returned the wrong number of scores".into()));
        }
        let idx = select_next(&scores, &self.measured)?;
        self.measure(idx, Source::Bo)
    }

    /// Halt BO for `n_points` measurements chosen by an intervention model,
    /// retraining after each. All-or-nothing: on error the state is unchanged.
    pub fn apply_intervention(&mut self, spec: &InterventionSpec, n_points: usize) -> Result<Vec<StepReport>> {
        self.require_running()?;
        if n_points == 0 {
            return Err(Error::Config("an intervention needs at least one point".into()));
        }
        if self.trace.len() + n_points > self.config.budget {
            return Err(Error::Config(format!(
                "{n_points} intervention points exceed the remaining budget of {}",
                self.config.budget - self.trace.len()
            )));
        }
        let model = self.intervention_model(spec)?;
        let mut work = self.clone();
        let embedding = work.specimen.embedding();
        let picks = model.draw_indices(embedding, n_points, &work.measured, true, &mut work.sampling)?;
        let mut reports = Vec::with_capacity(n_points);
        for idx in picks {
            reports.push(work.measure(idx, Source::Intervention)?);
        }
        *self = work;
        Ok(reports)
    }

    /// The sampling model an intervention would use, with defaults resolved.
    pub fn intervention_model(&self, spec: &InterventionSpec) -> Result<SamplingModel> {
        let embedding = self.specimen.embedding();
        match spec {
            InterventionSpec::Exclusion { centers, radius, base } => {
                let rho = radius.unwrap_or_else(|| self.default_exclusion_radius());
                let centers = match centers {
                    Some(c) => c.clone(),
                    None => self.default_trapped_centers(rho),
                };
                SamplingModel::exclusion(embedding, &centers, rho, *base)
            }
            InterventionSpec::Prioritizing { region, bandwidth } => {
                SamplingModel::prioritizing(embedding, region.clone(), *bandwidth)
            }
        }
    }

    pub fn default_exclusion_radius(&self) -> f64 {
        self.specimen.latent.pairwise_percentile(DEFAULT_EXCLUSION_PERCENTILE)
    }

    /// Distinct cluster centers among the last few selections.
    pub fn default_trapped_centers(&self, radius: f64) -> Vec<Point> {
        let start = self.trace.len().saturating_sub(TRAPPED_WINDOW);
        let recent: Vec<Point> = self.trace[start..].iter().map(|r| r.z).collect();
        cluster_centers(&recent, radius)
    }

    /// Measure `idx`, refit and record. The state changes only if everything succeeds.
    fn measure(&mut self, idx: usize, source: Source) -> Result<StepReport> {
        if self.measured[idx] {
            return Err(Error::State(format!("patch {idx} was already measured")));
        }
        let rec = record(&self.specimen, self.trace.len(), idx, source);
        let mut model = self.model.clone();
        let mut trace = core::mem::take(&mut self.trace);
        trace.push(rec);
        let (x, y) = training_data(&self.specimen, &trace);
        let fitted = model
            .fit(&x, &y, &train_options(self.config.surrogate.retrain_iters, &self.config))
            .and_then(|_| model.predict(&self.specimen.patches));
        let prediction = match fitted {
            Ok(p) => p,
            Err(e) => {
                trace.pop();
                self.trace = trace;
                return Err(e);
            }
        };
        self.trace = trace;
        self.measured[idx] = true;
        self.model = model;
        self.prediction = prediction;
        let step = self.curve.len();
        let entry = compute_learning_metrics(step, &self.prediction, &self.specimen.truth);
        let mean_sigma = entry.mean_sigma;
        self.curve.push(entry);
        if self.trace.len() >= self.config.budget {
            self.status = Status::BudgetExhausted;
        }
        Ok(StepReport { step, index: idx, source, mean_sigma, stagnant: self.is_stagnant() })
    }
}

fn record(specimen: &Specimen, step: usize, index: usize, source: Source) -> TraceRecord {
    let (row, col) = specimen.patches.locations()[index];
    TraceRecord {
        step,
        index,
        row,
        col,
        z: specimen.embedding().coords()[index],
        value: specimen.truth[index],
        pixel: row * specimen.dataset.image().width() + col,
        source,
    }
}

fn training_data<'a>(specimen: &'a Specimen, trace: &[TraceRecord]) -> (Vec<&'a [f32]>, Vec<f64>) {
    trace.iter().map(|r| (specimen.patches.patch(r.index), r.value)).unzip()
}

fn train_options(iters: usize, config: &ExperimentConfig) -> TrainOptions {
    TrainOptions { iters, step_size: config.surrogate.step_size, rng_seed: config.master_seed }
}
