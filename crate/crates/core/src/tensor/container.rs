//! The `GCT1` tensor container.
//!
//! A file is one UTF-8 JSON header line terminated by `\n`, followed by the
//! raw little-endian payload in row-major order:
//!
//! ```text
//! {"magic":"GCT1","dtype":"f32","shape":[2,2,3],"kind":"features"}\n<payload bytes>
//! ```
//!
//! Kinds and shapes:
//! - `features` + `f32`, shape `[H, W, D]` -> [`FeatureMap`]
//! - `labels` + `i32`, shape `[H, W]` -> [`LabelMap`]
//! - `sequence` + `f32`, shape `[T, H, W, D]` -> [`FeatureSequence`]
//! - `sequence` + `i32`, shape `[T, H, W]` -> [`SegmentationSequence`]
//!
//! Readers validate that the payload length equals `product(shape)` times the
//! dtype size, that float payloads are finite, and that label payloads stay
//! at or above the background sentinel. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, FeatureSequence, LabelMap, SegmentationSequence, BACKGROUND};

const MAGIC: &str = "GCT1";
const MAX_HEADER_BYTES: usize = 64 * 1024;

/// Any value the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Features(FeatureMap),
    Labels(LabelMap),
    FeatureSequence(FeatureSequence),
    LabelSequence(SegmentationSequence),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    magic: String,
    dtype: String,
    shape: Vec<u64>,
    kind: String,
}

pub fn write_tensor(path: impl AsRef<Path>, value: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (dtype, shape, kind) = match value {
        Tensor::Features(m) => (
            "f32",
            vec![m.height() as u64, m.width() as u64, m.dim() as u64],
            "features",
        ),
        Tensor::Labels(m) => ("i32", vec![m.height() as u64, m.width() as u64], "labels"),
        Tensor::FeatureSequence(s) => (
            "f32",
            vec![
                s.len() as u64,
                s.height() as u64,
                s.width() as u64,
                s.dim() as u64,
            ],
            "sequence",
        ),
        Tensor::LabelSequence(s) => (
            "i32",
            vec![s.len() as u64, s.height() as u64, s.width() as u64],
            "sequence",
        ),
    };
    let header = Header {
        magic: MAGIC.to_string(),
        dtype: dtype.to_string(),
        shape,
        kind: kind.to_string(),
    };
    let mut bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::format(path, 0, format!("header encoding failed: {e}")))?;
    bytes.push(b'\n');
    match value {
        Tensor::Features(m) => push_f32(&mut bytes, m.data()),
        Tensor::Labels(m) => push_i32(&mut bytes, m.labels()),
        Tensor::FeatureSequence(s) => {
            for f in s.frames() {
                push_f32(&mut bytes, f.data());
            }
        }
        Tensor::LabelSequence(s) => {
            for f in s.frames() {
                push_i32(&mut bytes, f.labels());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .take(MAX_HEADER_BYTES)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, 0, "no newline-terminated header found"))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(path, 0, format!("invalid header JSON: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic {:?}, expected {MAGIC:?}", header.magic),
        ));
    }
    if header.shape.is_empty() || header.shape.contains(&0) {
        return Err(Error::format(
            path,
            0,
            format!(
                "shape {:?} must be non-empty with positive extents",
                header.shape
            ),
        ));
    }
    let elems = header
        .shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= usize::MAX as u64)
        .ok_or_else(|| Error::format(path, 0, "shape product overflows"))? as usize;
    let payload_start = (newline + 1) as u64;
    let payload = &bytes[newline + 1..];
    let expected_bytes = elems * 4;
    if payload.len() != expected_bytes {
        return Err(Error::format(
            path,
            payload_start,
            format!(
                "payload has {} bytes, header shape {:?} needs {expected_bytes}",
                payload.len(),
                header.shape
            ),
        ));
    }

    let dims: Vec<usize> = header.shape.iter().map(|&d| d as usize).collect();
    match (header.kind.as_str(), header.dtype.as_str()) {
        ("features", "f32") => {
            if dims.len() != 3 {
                return Err(Error::format(
                    path,
                    0,
                    format!("kind \"features\" needs a [H,W,D] shape, got {dims:?}"),
                ));
            }
            let data = decode_f32(path, payload, payload_start)?;
            FeatureMap::new(dims[0], dims[1], dims[2], data).map(Tensor::Features)
        }
        ("labels", "i32") => {
            if dims.len() != 2 {
                return Err(Error::format(
                    path,
                    0,
                    format!("kind \"labels\" needs a [H,W] shape, got {dims:?}"),
                ));
            }
            let labels = decode_i32(path, payload, payload_start)?;
            LabelMap::new(dims[0], dims[1], labels).map(Tensor::Labels)
        }
        ("sequence", "f32") => {
            if dims.len() != 4 {
                return Err(Error::format(
                    path,
                    0,
                    format!("f32 sequences need a [T,H,W,D] shape, got {dims:?}"),
                ));
            }
            let data = decode_f32(path, payload, payload_start)?;
            let frame_len = dims[1] * dims[2] * dims[3];
            let frames = data
                .chunks(frame_len)
                .map(|chunk| FeatureMap::new(dims[1], dims[2], dims[3], chunk.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            FeatureSequence::new(frames).map(Tensor::FeatureSequence)
        }
        ("sequence", "i32") => {
            if dims.len() != 3 {
                return Err(Error::format(
                    path,
                    0,
                    format!("i32 sequences need a [T,H,W] shape, got {dims:?}"),
                ));
            }
            let labels = decode_i32(path, payload, payload_start)?;
            let frame_len = dims[1] * dims[2];
            let frames = labels
                .chunks(frame_len)
                .map(|chunk| LabelMap::new(dims[1], dims[2], chunk.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            SegmentationSequence::new(frames).map(Tensor::LabelSequence)
        }
        (kind, dtype) => Err(Error::format(
            path,
            0,
            format!("unsupported kind/dtype combination {kind:?}/{dtype:?}"),
        )),
    }
    .map_err(|e| attach_path(e, path))
}

/// Shape validation errors from the typed constructors become format errors
/// pointing at this file.
fn attach_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Input(msg) => Error::format(path, 0, msg),
        other => other,
    }
}

fn push_f32(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_i32(out: &mut Vec<u8>, values: &[i32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_f32(path: &Path, payload: &[u8], payload_start: u64) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(payload.len() / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::format(
                path,
                payload_start + (i * 4) as u64,
                format!("non-finite scalar {v} at element {i}"),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

fn decode_i32(path: &Path, payload: &[u8], payload_start: u64) -> Result<Vec<i32>> {
    let mut out = Vec::with_capacity(payload.len() / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = i32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if v < BACKGROUND {
            return Err(Error::format(
                path,
                payload_start + (i * 4) as u64,
                format!("label {v} at element {i} is below the background sentinel"),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

impl Tensor {
    pub fn into_feature_map(self) -> Result<FeatureMap> {
        match self {
            Tensor::Features(m) => Ok(m),
            other => Err(Error::input(format!(
                "expected a feature map, found {}",
                other.kind_name()
            ))),
        }
    }

    /// Accepts either a stored sequence or a single map promoted to one frame.
    pub fn into_feature_sequence(self) -> Result<FeatureSequence> {
        match self {
            Tensor::FeatureSequence(s) => Ok(s),
            Tensor::Features(m) => FeatureSequence::new(vec![m]),
            other => Err(Error::input(format!(
                "expected features, found {}",
                other.kind_name()
            ))),
        }
    }

    /// Accepts either a stored sequence or a single map promoted to one frame.
    pub fn into_segmentation_sequence(self) -> Result<SegmentationSequence> {
        match self {
            Tensor::LabelSequence(s) => Ok(s),
            Tensor::Labels(m) => SegmentationSequence::new(vec![m]),
            other => Err(Error::input(format!(
                "expected labels, found {}",
                other.kind_name()
            ))),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Tensor::Features(_) => "features",
            Tensor::Labels(_) => "labels",
            Tensor::FeatureSequence(_) => "feature sequence",
            Tensor::LabelSequence(_) => "label sequence",
        }
    }
}
