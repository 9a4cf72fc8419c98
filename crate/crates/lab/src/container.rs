//! On-disk dataset container.
//!
//! A dataset directory holds `manifest.json` plus raw little-endian `f32`
//! arrays: `image.bin` (row-major, height × width), `bias.bin` (n_bias),
//! `loops.bin` (pixel-major, n_pixels × n_bias) and optionally `latent.bin`
//! (n_patches × 2).

use std::fs;
use std::path::Path;

use aesim_core::dataset::{Dataset, GlobalImage, SyntheticConfig};
use aesim_core::embedding::{EmbeddingSource, LatentEmbedding, Point};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, LabResult};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "aesim-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentInfo {
    pub file: String,
    pub patch_size: usize,
    pub count: usize,
    pub source: EmbeddingSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub n_bias: usize,
    pub dtype: String,
    pub image: String,
    pub bias: String,
    pub loops: String,
    #[serde(default)]
    pub latent: Option<LatentInfo>,
    /// Generator settings when the data is synthetic.
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub dataset: Dataset,
    /// Stored embedding and the patch size it was computed for.
    pub latent: Option<(usize, LatentEmbedding)>,
}

fn write_f32(path: &Path, values: impl IntoIterator<Item = f32>) -> LabResult<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_f32(path: &Path, expected: usize) -> LabResult<Vec<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 4 {
        return Err(format_err(
            path,
            format!("expected {expected} f32 values ({} bytes), found {} bytes", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> LabResult<()> {
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> LabResult<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))?;
    if m.format != FORMAT {
        return Err(format_err(&path, format!("format is {:?}, expected {FORMAT:?}", m.format)));
    }
    if m.version != FORMAT_VERSION {
        return Err(format_err(&path, format!("unsupported container version {}", m.version)));
    }
    if m.dtype != "f32le" {
        return Err(format_err(&path, format!("unsupported dtype {:?}", m.dtype)));
    }
    Ok(m)
}

/// Write `dataset` into `dir` (created if missing). Any stored latent file is dropped.
pub fn write_dataset(dir: &Path, dataset: &Dataset, synthetic: Option<&SyntheticConfig>) -> LabResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let img = dataset.image();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        height: img.height(),
        width: img.width(),
        n_bias: dataset.n_bias(),
        dtype: "f32le".into(),
        image: "image.bin".into(),
        bias: "bias.bin".into(),
        loops: "loops.bin".into(),
        latent: None,
        synthetic: synthetic.cloned(),
    };
    write_f32(&dir.join(&manifest.image), img.values().iter().copied())?;
    write_f32(&dir.join(&manifest.bias), dataset.bias().iter().copied())?;
    write_f32(&dir.join(&manifest.loops), dataset.loops().iter().copied())?;
    let stale = dir.join("latent.bin");
    if stale.exists() {
        fs::remove_file(&stale).map_err(io_err(&stale))?;
    }
    write_manifest(dir, &manifest)
}

/// Store latent coordinates (as `f32`) for the patches of size `patch_size`.
pub fn write_latent(dir: &Path, patch_size: usize, embedding: &LatentEmbedding) -> LabResult<()> {
    let mut manifest = read_manifest(dir)?;
    let info = LatentInfo {
        file: "latent.bin".into(),
        patch_size,
        count: embedding.len(),
        source: embedding.source(),
    };
    write_f32(&dir.join(&info.file), embedding.coords().iter().flat_map(|z| [z[0] as f32, z[1] as f32]))?;
    manifest.latent = Some(info);
    write_manifest(dir, &manifest)
}

pub fn read_dataset(dir: &Path) -> LabResult<DatasetBundle> {
    let manifest = read_manifest(dir)?;
    let (h, w, nb) = (manifest.height, manifest.width, manifest.n_bias);
    let image = read_f32(&dir.join(&manifest.image), h * w)?;
    let bias = read_f32(&dir.join(&manifest.bias), nb)?;
    let loops = read_f32(&dir.join(&manifest.loops), h * w * nb)?;
    let dataset = Dataset::new(GlobalImage::new(h, w, image)?, bias, loops)
        .map_err(|e| format_err(dir, e.to_string()))?;
    let latent = match &manifest.latent {
        None => None,
        Some(info) => {
            let path = dir.join(&info.file);
            let raw = read_f32(&path, info.count * 2)?;
            let coords: Vec<Point> = raw.chunks_exact(2).map(|c| [c[0] as f64, c[1] as f64]).collect();
            let e = LatentEmbedding::external(coords, info.count).map_err(|e| format_err(&path, e.to_string()))?;
            Some((info.patch_size, e))
        }
    };
    Ok(DatasetBundle { manifest, dataset, latent })
}

/// Latent coordinates from a CSV with two numeric columns, one row per patch.
/// A non-numeric first row is treated as a header.
pub fn read_latent_csv(path: &Path, n_expected: usize) -> LabResult<LatentEmbedding> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let mut coords = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(format_err(path, format!("line {}: expected 2 columns, found {}", line + 1, rec.len())));
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => coords.push([v[0], v[1]]),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(format_err(path, format!("line {}: {e}", line + 1))),
        }
    }
    LatentEmbedding::external(coords, n_expected).map_err(|e| format_err(path, e.to_string()))
}
