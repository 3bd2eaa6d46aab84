//! Dense per-frame feature grids, integer label maps, and their sequence
//! containers. All types validate their invariants on construction and are
//! immutable afterwards, so they can be shared freely across threads.
//!
//! Scalars are 32-bit floats in memory and on disk; every accumulation
//! (dot products, norms, means) runs in 64-bit.

mod container;

pub use container::{read_tensor, write_tensor, Tensor};

use crate::error::{Error, Result};

/// Background sentinel in label maps.
pub const BACKGROUND: i32 = -1;

/// A height x width grid of `dim`-dimensional patch embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::input(format!(
                "feature map dimensions must be >= 1, got {height}x{width}x{dim}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::input("feature map shape overflows usize"))?;
        if data.len() != expected {
            return Err(Error::input(format!(
                "feature map payload has {} scalars, shape {height}x{width}x{dim} needs {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "feature map contains non-finite value at flat index {pos}"
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of patches.
    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The embedding of the patch at `(row, col)`.
    pub fn patch_at(&self, row: usize, col: usize) -> Result<&[f32]> {
        if row >= self.height || col >= self.width {
            return Err(Error::input(format!(
                "patch index ({row}, {col}) out of bounds for {}x{} grid",
                self.height, self.width
            )));
        }
        Ok(self.patch(row * self.width + col))
    }

    /// The embedding of the patch at flat row-major index `idx`.
    ///
    /// Panics on out-of-range `idx`; use [`patch_at`](Self::patch_at) for
    /// checked access by coordinates.
    pub fn patch(&self, idx: usize) -> &[f32] {
        let start = idx * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Copy with every patch scaled to unit L2 norm (zero patches unchanged).
    pub fn l2_normalized(&self) -> FeatureMap {
        let mut data = self.data.clone();
        for p in 0..self.num_patches() {
            let start = p * self.dim;
            let patch = &mut data[start..start + self.dim];
            let norm_sq: f64 = patch.iter().map(|&v| v as f64 * v as f64).sum();
            if norm_sq > 0.0 {
                let inv = 1.0 / norm_sq.sqrt();
                for v in patch.iter_mut() {
                    *v = (*v as f64 * inv) as f32;
                }
            }
        }
        FeatureMap {
            height: self.height,
            width: self.width,
            dim: self.dim,
            data,
        }
    }
}

/// Cosine similarity with 64-bit accumulation, clamped to `[-1, 1]`.
///
/// Zero-norm inputs yield 0.0 so that all-zero padding patches act as
/// maximally non-salient rather than poisoning downstream fields with NaN.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity on unequal lengths");
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity between 64-bit vectors, same conventions as
/// [`cosine_similarity`].
pub fn cosine_similarity_f64(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity on unequal lengths");
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// An ordered run of feature maps sharing one grid shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<FeatureMap>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<FeatureMap>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::input("feature sequence needs at least one frame"))?;
        let (h, w, d) = (first.height, first.width, first.dim);
        for (t, f) in frames.iter().enumerate() {
            if (f.height, f.width, f.dim) != (h, w, d) {
                return Err(Error::input(format!(
                    "frame {t} has shape {}x{}x{}, expected {h}x{w}x{d}",
                    f.height, f.width, f.dim
                )));
            }
        }
        Ok(FeatureSequence { frames })
    }

    pub fn frames(&self) -> &[FeatureMap] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim
    }

    pub fn l2_normalized(&self) -> FeatureSequence {
        FeatureSequence {
            frames: self.frames.iter().map(|f| f.l2_normalized()).collect(),
        }
    }
}

/// Per-patch integer labels over a grid; `-1` marks background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<i32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input(format!(
                "label map dimensions must be >= 1, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::input(format!(
                "label map payload has {} labels, shape {height}x{width} needs {}",
                labels.len(),
                height * width
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l < BACKGROUND) {
            return Err(Error::input(format!(
                "label {} at flat index {pos} is below the background sentinel",
                labels[pos]
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn label_at(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.width + col]
    }
}

/// An ordered run of label maps sharing one grid shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationSequence {
    frames: Vec<LabelMap>,
}

impl SegmentationSequence {
    pub fn new(frames: Vec<LabelMap>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::input("segmentation sequence needs at least one frame"))?;
        let (h, w) = (first.height, first.width);
        for (t, f) in frames.iter().enumerate() {
            if (f.height, f.width) != (h, w) {
                return Err(Error::input(format!(
                    "frame {t} has shape {}x{}, expected {h}x{w}",
                    f.height, f.width
                )));
            }
        }
        Ok(SegmentationSequence { frames })
    }

    pub fn frames(&self) -> &[LabelMap] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }
}
