//! The virtual specimen: a structural image, one hysteresis loop per pixel,
//! the microstructural patches cut from the image, and scalarizer fields.

mod scalarizer;
mod synthetic;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use scalarizer::{scalarize_loop, ScalarizerField, ScalarizerKind};
pub use synthetic::{generate_synthetic_dataset, SyntheticConfig};

/// Row-major structural scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImage {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl GlobalImage {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("image {height}x{width} is empty")));
        }
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "image holds {} values, expected {}",
                values.len(),
                height * width
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image value {i}")));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

/// A closed bias sweep and the response measured along it.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisLoop {
    bias: Vec<f64>,
    response: Vec<f64>,
}

impl HysteresisLoop {
    pub fn new(bias: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        if bias.len() != response.len() {
            return Err(Error::Dimension(format!(
                "loop has {} bias and {} response samples",
                bias.len(),
                response.len()
            )));
        }
        if bias.len() < 4 {
            return Err(Error::Dimension("loop needs at least 4 samples".into()));
        }
        if bias.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hysteresis loop".into()));
        }
        if bias[0] != bias[bias.len() - 1] {
            return Err(Error::Config("bias sweep is not a closed cycle".into()));
        }
        Ok(Self { bias, response })
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }
}

/// Structural image plus per-pixel loops sharing one bias waveform.
///
/// `loops` is row-major `[n_pixels, n_bias]`, pixels in image row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    image: GlobalImage,
    bias: Vec<f32>,
    loops: Vec<f32>,
}

impl Dataset {
    pub fn new(image: GlobalImage, bias: Vec<f32>, loops: Vec<f32>) -> Result<Self> {
        let n_pixels = image.height * image.width;
        if bias.len() < 4 {
            return Err(Error::Dimension("bias waveform needs at least 4 samples".into()));
        }
        if bias[0] != bias[bias.len() - 1] {
            return Err(Error::Config("bias sweep is not a closed cycle".into()));
        }
        if loops.len() != n_pixels * bias.len() {
            return Err(Error::Dimension(format!(
                "loops hold {} values, expected {} pixels x {} bias samples",
                loops.len(),
                n_pixels,
                bias.len()
            )));
        }
        if let Some(i) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("bias sample {i}")));
        }
        if let Some(i) = loops.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loop of pixel {} sample {}",
                i / bias.len(),
                i % bias.len()
            )));
        }
        Ok(Self { image, bias, loops })
    }

    pub fn image(&self) -> &GlobalImage {
        &self.image
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn loops(&self) -> &[f32] {
        &self.loops
    }

    pub fn n_pixels(&self) -> usize {
        self.image.height * self.image.width
    }

    pub fn n_bias(&self) -> usize {
        self.bias.len()
    }

    pub fn loop_response(&self, pixel: usize) -> &[f32] {
        let n = self.bias.len();
        &self.loops[pixel * n..(pixel + 1) * n]
    }

    /// The loop measured at image pixel `(row, col)`.
    pub fn loop_at(&self, row: usize, col: usize) -> HysteresisLoop {
        let pixel = row * self.image.width + col;
        HysteresisLoop {
            bias: self.bias.iter().map(|&v| v as f64).collect(),
            response: self.loop_response(pixel).iter().map(|&v| v as f64).collect(),
        }
    }
}

/// All `k × k` windows of an image (valid mode, stride 1, row-major anchors).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    patch_size: usize,
    rows: usize,
    cols: usize,
    locations: Vec<(usize, usize)>,
    data: Vec<f32>,
}

impl PatchSet {
    /// Assemble a patch set from flattened `k × k` vectors that did not come
    /// from [`extract_patches`]; the anchor grid is reported as `(n, 1)`.
    pub fn from_vectors(patch_size: usize, locations: Vec<(usize, usize)>, data: Vec<f32>) -> Result<Self> {
        let d = patch_size * patch_size;
        if patch_size == 0 || data.len() != locations.len() * d {
            return Err(Error::Dimension(format!(
                "{} values do not form {} patches of size {patch_size}",
                data.len(),
                locations.len()
            )));
        }
        Ok(Self { patch_size, rows: locations.len(), cols: 1, locations, data })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Length of one flattened patch, `k²`.
    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Anchor-grid shape `(height − k + 1, width − k + 1)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Image pixel `(row, col)` each patch is centred on.
    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locations
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim())
    }
}

/// Offset of the centre pixel from the window origin; `k/2 − 1` for even `k`.
pub fn center_offset(k: usize) -> usize {
    (k - 1) / 2
}

/// Cut every `k × k` window out of `image`.
pub fn extract_patches(image: &GlobalImage, k: usize) -> Result<PatchSet> {
    if k == 0 {
        return Err(Error::Dimension("patch size must be at least 1".into()));
    }
    if k > image.height || k > image.width {
        return Err(Error::Dimension(format!(
            "patch size {k} exceeds image {}x{}",
            image.height, image.width
        )));
    }
    let rows = image.height - k + 1;
    let cols = image.width - k + 1;
    let off = center_offset(k);
    let mut locations = Vec::with_capacity(rows * cols);
    let mut data = Vec::with_capacity(rows * cols * k * k);
    for r in 0..rows {
        for c in 0..cols {
            locations.push((r + off, c + off));
            for dr in 0..k {
                let start = (r + dr) * image.width + c;
                data.extend_from_slice(&image.values[start..start + k]);
            }
        }
    }
    Ok(PatchSet { patch_size: k, rows, cols, locations, data })
}
