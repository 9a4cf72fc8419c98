//! Binary checkpoints: magic, format version, CRC-32 of the payload, then a
//! postcard-encoded payload holding the dataset, embedding and full loop state.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CurveEntry, ExperimentConfig, ExperimentState, Source, Specimen, Status, TraceRecord};
use crate::dataset::{Dataset, GlobalImage};
use crate::embedding::LatentEmbedding;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::surrogate::{DeepKernelModel, Prediction};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"AESIMCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Serialize)]
struct PayloadRef<'a> {
    config: &'a ExperimentConfig,
    patch_size: usize,
    dataset: &'a Dataset,
    embedding: &'a LatentEmbedding,
    model: &'a DeepKernelModel,
    prediction: &'a Prediction,
    measured: &'a [bool],
    trace: &'a [TraceRecord],
    curve: &'a [CurveEntry],
    status: Status,
    rngs: [RngState; 3],
}

#[derive(Deserialize)]
struct Payload {
    config: ExperimentConfig,
    patch_size: usize,
    dataset: Dataset,
    embedding: LatentEmbedding,
    model: DeepKernelModel,
    prediction: Prediction,
    measured: Vec<bool>,
    trace: Vec<TraceRecord>,
    curve: Vec<CurveEntry>,
    status: Status,
    rngs: [RngState; 3],
}

impl ExperimentState {
    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let payload = PayloadRef {
            config: &self.config,
            patch_size: self.specimen.patches.patch_size(),
            dataset: &self.specimen.dataset,
            embedding: self.specimen.embedding(),
            model: &self.model,
            prediction: &self.prediction,
            measured: &self.measured,
            trace: &self.trace,
            curve: &self.curve,
            status: self.status,
            rngs: [
                RngState::capture(&self.seeding),
                RngState::capture(&self.surrogate),
                RngState::capture(&self.sampling),
            ],
        };
        let body = postcard::to_allocvec(&payload).map_err(|e| Error::Checkpoint(format!("encode: {e}")))?;
        let mut out = Vec::with_capacity(HEADER + body.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Rebuild a state from checkpoint bytes. Nothing is returned unless the
    /// header, checksum and every state invariant check out.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let crc = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let body = &bytes[HEADER..];
        if crc32fast::hash(body) != crc {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let p: Payload = postcard::from_bytes(body).map_err(|e| Error::Checkpoint(format!("decode: {e}")))?;

        // decoded data skipped constructor validation
        let image = p.dataset.image();
        let image = GlobalImage::new(image.height(), image.width(), image.values().to_vec())?;
        let dataset = Dataset::new(image, p.dataset.bias().to_vec(), p.dataset.loops().to_vec())?;
        let embedding = LatentEmbedding::external(p.embedding.coords().to_vec(), p.embedding.len())
            .map(|_| p.embedding)?;
        let specimen = Specimen::new(dataset, p.patch_size, Some(embedding), p.config.scalarizer)?;
        p.config.validate(specimen.len())?;

        let n = specimen.len();
        let bad = |what: &str| Err(Error::Checkpoint(format!("inconsistent checkpoint: {what}")));
        if p.measured.len() != n || p.prediction.mean.len() != n || p.prediction.sigma.len() != n {
            return bad("per-patch arrays do not match the dataset");
        }
        if p.measured.iter().filter(|&&m| m).count() != p.trace.len() || p.trace.len() > p.config.budget {
            return bad("measured mask does not match the trace");
        }
        for (i, r) in p.trace.iter().enumerate() {
            if r.step != i || r.index >= n || !p.measured[r.index] {
                return bad("trace record out of order or unmeasured");
            }
            if (i < p.config.n_seed) != (r.source == Source::Seed) {
                return bad("seed records out of place");
            }
        }
        if p.trace.len() < p.config.n_seed || p.curve.len() != p.trace.len() - p.config.n_seed + 1 {
            return bad("learning curve length");
        }
        if p.model.input_dim() != specimen.patches.dim()
            || p.model.params().len() != p.model.layout().len()
            || p.model.training_size() != p.trace.len()
        {
            return bad("surrogate does not match the trace");
        }
        let [seeding, surrogate, sampling] = p.rngs;
        Ok(Self {
            config: p.config,
            specimen: Arc::new(specimen),
            model: p.model,
            prediction: p.prediction,
            measured: p.measured,
            trace: p.trace,
            curve: p.curve,
            status: p.status,
            seeding: seeding.restore(),
            surrogate: surrogate.restore(),
            sampling: sampling.restore(),
        })
    }
}
