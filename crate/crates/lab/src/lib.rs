//! Files, batch studies, CLI and HTTP service around [`aesim_core`].

pub mod cli;
pub mod container;
pub mod error;
pub mod report;
pub mod service;

use std::path::Path;

use aesim_core::dataset::{generate_synthetic_dataset, ScalarizerKind, SyntheticConfig};
use aesim_core::engine::Specimen;

pub use error::{LabError, LabResult};

/// Build a specimen from a dataset directory, or from the synthetic generator
/// when `dir` is `None`. A stored embedding is used when it was computed for
/// the same patch size; otherwise patches are embedded with PCA.
pub fn load_specimen(
    dir: Option<&Path>,
    synthetic: &SyntheticConfig,
    patch_size: usize,
    scalarizer: ScalarizerKind,
) -> LabResult<Specimen> {
    let (dataset, latent) = match dir {
        Some(d) => {
            let b = container::read_dataset(d)?;
            let latent = b.latent.filter(|(k, _)| *k == patch_size).map(|(_, e)| e);
            (b.dataset, latent)
        }
        None => (generate_synthetic_dataset(synthetic)?, None),
    };
    Ok(Specimen::new(dataset, patch_size, latent, scalarizer)?)
}
