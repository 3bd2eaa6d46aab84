//! Slot-attention forward pass (inference only).
//!
//! Queries compete for patches through a softmax over the slot dimension on
//! logits `M = Q K^T * scale` (scale defaults to `1/sqrt(D)`), then each slot
//! becomes the attention-weighted mean of the values. In the default
//! weighted-mean mode the projections are the identity (`K = V = features`),
//! which makes the step a well-defined similarity-grouping procedure; the
//! external-gru mode loads projection and GRU matrices exported from a
//! trained model.
//!
//! Per-patch softmax denominators are summed in sorted order, so outputs
//! commute bit-exactly with permutations of the query rows.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{read_tensor, FeatureMap, LabelMap};

/// Minimum total attention mass for a slot to be updated; below this the
/// slot keeps its previous value.
const EMPTY_SLOT_MASS: f64 = 1e-12;

/// K slot vectors with stable integer identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSet {
    slots: Vec<f64>,
    dim: usize,
    identities: Vec<i32>,
}

impl SlotSet {
    pub fn new(slots: Vec<f64>, dim: usize, identities: Vec<i32>) -> Result<Self> {
        if dim == 0 || identities.is_empty() {
            return Err(Error::input("slot set needs k >= 1 and dim >= 1"));
        }
        if slots.len() != identities.len() * dim {
            return Err(Error::input(format!(
                "slot payload has {} scalars, k={} dim={} needs {}",
                slots.len(),
                identities.len(),
                dim,
                identities.len() * dim
            )));
        }
        if slots.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("slot values must be finite"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &id in &identities {
            if !seen.insert(id) {
                return Err(Error::input(format!("duplicate slot identity {id}")));
            }
        }
        Ok(SlotSet {
            slots,
            dim,
            identities,
        })
    }

    pub fn k(&self) -> usize {
        self.identities.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        &self.slots[i * self.dim..(i + 1) * self.dim]
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn identities(&self) -> &[i32] {
        &self.identities
    }

    /// Rows and identities reordered so position `i` holds input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SlotSet> {
        if perm.len() != self.k() {
            return Err(Error::input("permutation length must equal k"));
        }
        let mut slots = Vec::with_capacity(self.slots.len());
        let mut identities = Vec::with_capacity(self.k());
        for &p in perm {
            if p >= self.k() {
                return Err(Error::input("permutation index out of range"));
            }
            slots.extend_from_slice(self.slot(p));
            identities.push(self.identities[p]);
        }
        SlotSet::new(slots, self.dim, identities)
    }
}

/// K x N attention weights; each column is a softmax over slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    k: usize,
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl AttentionMap {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, slot: usize, patch: usize) -> f64 {
        self.weights[slot * self.num_patches() + patch]
    }

    /// Row `slot` over all patches.
    pub fn row(&self, slot: usize) -> &[f64] {
        let n = self.num_patches();
        &self.weights[slot * n..(slot + 1) * n]
    }

    /// Attention-weighted mean patch coordinate per slot, normalized into
    /// the unit square. Slots with vanishing mass sit at the center.
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        (0..self.k)
            .map(|i| {
                let row = self.row(i);
                let mass: f64 = row.iter().sum();
                if mass < EMPTY_SLOT_MASS {
                    return (0.5, 0.5);
                }
                let mut r_acc = 0.0;
                let mut c_acc = 0.0;
                for (j, &w) in row.iter().enumerate() {
                    r_acc += w * (j / self.width) as f64;
                    c_acc += w * (j % self.width) as f64;
                }
                let norm = |v: f64, extent: usize| {
                    if extent > 1 {
                        v / (extent - 1) as f64
                    } else {
                        0.5
                    }
                };
                (
                    norm(r_acc / mass, self.height),
                    norm(c_acc / mass, self.width),
                )
            })
            .collect()
    }

    /// Rows reordered so position `i` holds input row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> AttentionMap {
        let n = self.num_patches();
        let mut weights = Vec::with_capacity(self.weights.len());
        for &p in perm {
            weights.extend_from_slice(&self.weights[p * n..(p + 1) * n]);
        }
        AttentionMap {
            k: self.k,
            height: self.height,
            width: self.width,
            weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// Identity projections, slots become attention-weighted feature means.
    WeightedMean,
    /// Loaded projections and a GRU cell transform (slot, update) pairs.
    ExternalGru,
}

impl std::str::FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-mean" => Ok(UpdateRule::WeightedMean),
            "external-gru" => Ok(UpdateRule::ExternalGru),
            other => Err(Error::config(format!(
                "unknown update rule {other:?} (weighted-mean|external-gru)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BindingConfig {
    /// Attention iterations on the first frame.
    pub iterations_first: usize,
    /// Attention iterations on subsequent frames.
    pub iterations_rest: usize,
    /// Logit scale; `None` means `1/sqrt(D)`.
    pub temperature: Option<f64>,
    pub update_rule: UpdateRule,
    /// Weights manifest for the external-gru rule.
    pub weights_path: Option<PathBuf>,
}

impl Default for BindingConfig {
    fn default() -> Self {
        BindingConfig {
            iterations_first: 1,
            iterations_rest: 1,
            temperature: None,
            update_rule: UpdateRule::WeightedMean,
            weights_path: None,
        }
    }
}

impl BindingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations_first == 0 || self.iterations_rest == 0 {
            return Err(Error::config("iteration counts must be >= 1"));
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::config(format!(
                    "temperature must be finite and > 0, got {t}"
                )));
            }
        }
        match (self.update_rule, &self.weights_path) {
            (UpdateRule::ExternalGru, None) => Err(Error::config(
                "update rule external-gru requires a weights path",
            )),
            (UpdateRule::WeightedMean, Some(_)) => Err(Error::config(
                "weights path is only meaningful with update rule external-gru",
            )),
            _ => Ok(()),
        }
    }
}

/// Square matrix for projections and gates, row-major `rows x cols`;
/// vectors multiply from the left: `y_c = sum_r x_r * W[r][c]`.
#[derive(Debug, Clone)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (r, &xv) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xv * w;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct GruWeights {
    dim: usize,
    proj_q: Mat,
    proj_k: Mat,
    proj_v: Mat,
    w_z: Mat,
    u_z: Mat,
    b_z: Vec<f64>,
    w_r: Mat,
    u_r: Mat,
    b_r: Vec<f64>,
    w_n: Mat,
    u_n: Mat,
    b_n: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsManifest {
    format: String,
    dim: usize,
    tensors: std::collections::BTreeMap<String, String>,
}

const WEIGHTS_FORMAT: &str = "gc-weights-v1";
const MATRIX_NAMES: [&str; 9] = [
    "proj_q", "proj_k", "proj_v", "gru_w_z", "gru_u_z", "gru_w_r", "gru_u_r", "gru_w_n", "gru_u_n",
];
const BIAS_NAMES: [&str; 3] = ["gru_b_z", "gru_b_r", "gru_b_n"];

impl GruWeights {
    fn load(manifest_path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: WeightsManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(manifest_path, 0, format!("invalid manifest: {e}")))?;
        if manifest.format != WEIGHTS_FORMAT {
            return Err(Error::format(
                manifest_path,
                0,
                format!("unknown weights format {:?}", manifest.format),
            ));
        }
        let d = manifest.dim;
        if d == 0 {
            return Err(Error::format(manifest_path, 0, "dim must be >= 1"));
        }
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let load_entry = |name: &str| -> Result<FeatureMap> {
            let rel = manifest.tensors.get(name).ok_or_else(|| {
                Error::format(
                    manifest_path,
                    0,
                    format!("manifest missing tensor {name:?}"),
                )
            })?;
            read_tensor(base.join(rel))?.into_feature_map()
        };
        let load_mat = |name: &str| -> Result<Mat> {
            let m = load_entry(name)?;
            if m.dim() != 1 || m.height() != d || m.width() != d {
                return Err(Error::format(
                    manifest_path,
                    0,
                    format!(
                        "tensor {name:?} must have shape [{d}, {d}, 1], got [{}, {}, {}]",
                        m.height(),
                        m.width(),
                        m.dim()
                    ),
                ));
            }
            Ok(Mat {
                rows: d,
                cols: d,
                data: m.data().iter().map(|&v| v as f64).collect(),
            })
        };
        let load_bias = |name: &str| -> Result<Vec<f64>> {
            let m = load_entry(name)?;
            if m.dim() != 1 || m.height() != 1 || m.width() != d {
                return Err(Error::format(
                    manifest_path,
                    0,
                    format!(
                        "tensor {name:?} must have shape [1, {d}, 1], got [{}, {}, {}]",
                        m.height(),
                        m.width(),
                        m.dim()
                    ),
                ));
            }
            Ok(m.data().iter().map(|&v| v as f64).collect())
        };
        // Surface every expected name in error messages up front.
        for name in MATRIX_NAMES.iter().chain(BIAS_NAMES.iter()) {
            if !manifest.tensors.contains_key(*name) {
                return Err(Error::format(
                    manifest_path,
                    0,
                    format!("manifest missing tensor {name:?}"),
                ));
            }
        }
        Ok(GruWeights {
            dim: d,
            proj_q: load_mat("proj_q")?,
            proj_k: load_mat("proj_k")?,
            proj_v: load_mat("proj_v")?,
            w_z: load_mat("gru_w_z")?,
            u_z: load_mat("gru_u_z")?,
            b_z: load_bias("gru_b_z")?,
            w_r: load_mat("gru_w_r")?,
            u_r: load_mat("gru_u_r")?,
            b_r: load_bias("gru_b_r")?,
            w_n: load_mat("gru_w_n")?,
            u_n: load_mat("gru_u_n")?,
            b_n: load_bias("gru_b_n")?,
        })
    }

    /// `h' = (1 - z) h + z n` with standard GRU gates on `(x, h)`.
    fn cell(&self, h: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut z = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        self.w_z.apply(x, &mut z);
        self.u_z.apply(h, &mut tmp);
        for i in 0..d {
            z[i] = sigmoid(z[i] + tmp[i] + self.b_z[i]);
        }
        let mut r = vec![0.0; d];
        self.w_r.apply(x, &mut r);
        self.u_r.apply(h, &mut tmp);
        for i in 0..d {
            r[i] = sigmoid(r[i] + tmp[i] + self.b_r[i]);
        }
        let gated: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
        let mut n = vec![0.0; d];
        self.w_n.apply(x, &mut n);
        self.u_n.apply(&gated, &mut tmp);
        for i in 0..d {
            n[i] = (n[i] + tmp[i] + self.b_n[i]).tanh();
        }
        for i in 0..d {
            out[i] = (1.0 - z[i]) * h[i] + z[i] * n[i];
        }
    }
}

/// Resolved binding configuration with weights loaded once.
#[derive(Debug, Clone)]
pub struct BindingEngine {
    temperature: Option<f64>,
    weights: Option<GruWeights>,
}

impl BindingEngine {
    pub fn from_config(cfg: &BindingConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = match cfg.update_rule {
            UpdateRule::WeightedMean => None,
            UpdateRule::ExternalGru => {
                let path = cfg.weights_path.as_ref().expect("validated above");
                Some(GruWeights::load(path)?)
            }
        };
        Ok(BindingEngine {
            temperature: cfg.temperature,
            weights,
        })
    }

    /// One attention iteration: softmax over slots, then slot update.
    pub fn step(&self, queries: &SlotSet, map: &FeatureMap) -> Result<(SlotSet, AttentionMap)> {
        let d = map.dim();
        if queries.dim() != d {
            return Err(Error::config(format!(
                "query dim {} does not match feature dim {d}",
                queries.dim()
            )));
        }
        if let Some(w) = &self.weights {
            if w.dim != d {
                return Err(Error::config(format!(
                    "weights dim {} does not match feature dim {d}",
                    w.dim
                )));
            }
        }
        let k = queries.k();
        let n = map.num_patches();
        let scale = self.temperature.unwrap_or_else(|| 1.0 / (d as f64).sqrt());

        // Keys/values: identity in weighted-mean mode, projected otherwise.
        let (keys, values): (Vec<f64>, Vec<f64>) = match &self.weights {
            None => {
                let feats: Vec<f64> = map.data().iter().map(|&v| v as f64).collect();
                (feats.clone(), feats)
            }
            Some(w) => {
                let mut keys = vec![0.0; n * d];
                let mut values = vec![0.0; n * d];
                for p in 0..n {
                    let patch: Vec<f64> = map.patch(p).iter().map(|&v| v as f64).collect();
                    w.proj_k.apply(&patch, &mut keys[p * d..(p + 1) * d]);
                    w.proj_v.apply(&patch, &mut values[p * d..(p + 1) * d]);
                }
                (keys, values)
            }
        };
        let projected_queries: Vec<f64> = match &self.weights {
            None => queries.slots().to_vec(),
            Some(w) => {
                let mut out = vec![0.0; k * d];
                for i in 0..k {
                    w.proj_q
                        .apply(queries.slot(i), &mut out[i * d..(i + 1) * d]);
                }
                out
            }
        };

        // Logits, one row per slot. Row contents depend only on that slot.
        let mut logits = vec![0.0f64; k * n];
        logits.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let q = &projected_queries[i * d..(i + 1) * d];
            for (j, cell) in row.iter_mut().enumerate() {
                let key = &keys[j * d..(j + 1) * d];
                let mut dot = 0.0f64;
                for (a, b) in q.iter().zip(key) {
                    dot += a * b;
                }
                *cell = scale * dot;
            }
        });

        // Column softmax. The max and the sorted-order sum are functions of
        // the value multiset, so permuting slots permutes rows bit-exactly.
        let mut attention = vec![0.0f64; k * n];
        let mut column = vec![0.0f64; k];
        let mut sorted = vec![0.0f64; k];
        for j in 0..n {
            let mut max = f64::NEG_INFINITY;
            for i in 0..k {
                let v = logits[i * n + j];
                if v > max {
                    max = v;
                }
            }
            for i in 0..k {
                column[i] = (logits[i * n + j] - max).exp();
            }
            sorted.copy_from_slice(&column);
            sorted.sort_by(f64::total_cmp);
            let denom: f64 = sorted.iter().sum();
            for i in 0..k {
                attention[i * n + j] = column[i] / denom;
            }
        }

        // Update: attention-weighted mean of the values per slot, with the
        // empty-slot guard.
        let mut new_slots = vec![0.0f64; k * d];
        new_slots
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, out)| {
                let row = &attention[i * n..(i + 1) * n];
                let mass: f64 = row.iter().sum();
                if mass < EMPTY_SLOT_MASS {
                    out.copy_from_slice(queries.slot(i));
                    return;
                }
                let mut acc = vec![0.0f64; d];
                for (j, &w) in row.iter().enumerate() {
                    let value = &values[j * d..(j + 1) * d];
                    for (a, v) in acc.iter_mut().zip(value) {
                        *a += w * v;
                    }
                }
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o = a / mass;
                }
            });

        let updated = match &self.weights {
            None => new_slots,
            Some(w) => {
                let mut out = vec![0.0f64; k * d];
                for i in 0..k {
                    w.cell(
                        queries.slot(i),
                        &new_slots[i * d..(i + 1) * d],
                        &mut out[i * d..(i + 1) * d],
                    );
                }
                out
            }
        };

        let slots = SlotSet::new(updated, d, queries.identities().to_vec())?;
        let att = AttentionMap {
            k,
            height: map.height(),
            width: map.width(),
            weights: attention,
        };
        Ok((slots, att))
    }

    /// `iters` chained steps; returns the final slots and final attention.
    pub fn bind(
        &self,
        queries: &SlotSet,
        map: &FeatureMap,
        iters: usize,
    ) -> Result<(SlotSet, AttentionMap)> {
        if iters == 0 {
            return Err(Error::config("bind_frame needs at least one iteration"));
        }
        let mut state = self.step(queries, map)?;
        for _ in 1..iters {
            let (slots, _) = state;
            state = self.step(&slots, map)?;
        }
        Ok(state)
    }
}

/// Convenience wrapper constructing a [`BindingEngine`] per call.
pub fn slot_attention_step(
    queries: &SlotSet,
    map: &FeatureMap,
    cfg: &BindingConfig,
) -> Result<(SlotSet, AttentionMap)> {
    BindingEngine::from_config(cfg)?.step(queries, map)
}

/// Convenience wrapper constructing a [`BindingEngine`] per call.
pub fn bind_frame(
    queries: &SlotSet,
    map: &FeatureMap,
    iters: usize,
    cfg: &BindingConfig,
) -> Result<(SlotSet, AttentionMap)> {
    BindingEngine::from_config(cfg)?.bind(queries, map, iters)
}

/// Argmax decoding: per patch, the identity of the strongest slot, ties to
/// the lowest slot index.
pub fn hard_masks(att: &AttentionMap, slots: &SlotSet) -> Result<LabelMap> {
    if att.k() != slots.k() {
        return Err(Error::config(format!(
            "attention has {} slots, slot set has {}",
            att.k(),
            slots.k()
        )));
    }
    let n = att.num_patches();
    let labels: Vec<i32> = (0..n)
        .map(|j| {
            let mut best = 0usize;
            for i in 1..att.k() {
                if att.weight(i, j) > att.weight(best, j) {
                    best = i;
                }
            }
            slots.identities()[best]
        })
        .collect();
    LabelMap::new(att.height(), att.width(), labels)
}

/// K i.i.d. standard-normal query vectors from the seeded generator, with
/// identities `0..k`.
pub fn content_blind_queries(k: usize, dim: usize, seed: u64) -> Result<SlotSet> {
    if k == 0 || dim == 0 {
        return Err(Error::config("content_blind_queries needs k, dim >= 1"));
    }
    let mut rng = SplitMix64::new(seed);
    let slots: Vec<f64> = (0..k * dim).map(|_| rng.next_normal()).collect();
    SlotSet::new(slots, dim, (0..k as i32).collect())
}
