//! Per-patch objectness scoring and greedy seed selection.
//!
//! The grounded field combines two cosine-similarity statistics over a
//! feature map: local consistency `L` (mean similarity to the spatial
//! neighborhood, high inside object interiors) and global redundancy `G`
//! (similarity to the mean feature, high for background), scored as
//! `S = L - alpha * G`. Seeds are then extracted by repeatedly taking the
//! field argmax and multiplicatively suppressing everything similar to the
//! selected patch, which spreads the seeds across distinct regions.
//!
//! Norm-based and PCA-based strategies are provided as baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity, cosine_similarity_f64, FeatureMap};

/// Scalar objectness score per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyField {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl SaliencyField {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("saliency field dimensions must be >= 1"));
        }
        if scores.len() != height * width {
            return Err(Error::input(format!(
                "saliency field has {} scores, shape {height}x{width} needs {}",
                scores.len(),
                height * width
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::input("saliency scores must be finite"));
        }
        Ok(SaliencyField {
            height,
            width,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Lossy f32 view for container export, one scalar per patch.
    pub fn to_feature_map(&self) -> FeatureMap {
        let data: Vec<f32> = self.scores.iter().map(|&s| s as f32).collect();
        FeatureMap::new(self.height, self.width, 1, data)
            .expect("saliency field is always a valid 1-dim feature map")
    }
}

/// Saliency scoring strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Local consistency minus weighted global redundancy.
    Grounded,
    /// Euclidean norm of each embedding.
    Norm,
    /// Projection magnitude onto the top principal components.
    Pca,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grounded" => Ok(Strategy::Grounded),
            "norm" => Ok(Strategy::Norm),
            "pca" => Ok(Strategy::Pca),
            other => Err(Error::config(format!(
                "unknown saliency strategy {other:?} (grounded|norm|pca)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyConfig {
    /// Background penalty weight, >= 0.
    pub alpha: f64,
    /// Chebyshev neighborhood radius in patches, >= 1.
    pub radius: usize,
    pub strategy: Strategy,
    /// Component count for the PCA strategy.
    pub pca_components: usize,
    /// Count the center patch as its own neighbor.
    pub include_center: bool,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig {
            alpha: 1.0,
            radius: 1,
            strategy: Strategy::Grounded,
            pca_components: 1,
            include_center: false,
        }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.radius == 0 {
            return Err(Error::config("radius must be >= 1"));
        }
        if self.pca_components == 0 {
            return Err(Error::config("pca_components must be >= 1"));
        }
        Ok(())
    }

    /// Dense synthetic-video preset: alpha 0.5, radius 1.
    pub fn movi_d() -> Self {
        SaliencyConfig {
            alpha: 0.5,
            radius: 1,
            ..Default::default()
        }
    }

    /// Moving-camera synthetic preset: alpha 1.0, radius 1.
    pub fn movi_e() -> Self {
        SaliencyConfig {
            alpha: 1.0,
            radius: 1,
            ..Default::default()
        }
    }

    /// Real-video preset: alpha 0.5, radius 2.
    pub fn ytvis() -> Self {
        SaliencyConfig {
            alpha: 0.5,
            radius: 2,
            ..Default::default()
        }
    }
}

/// One selected seed with its selection-time snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seed {
    pub row: usize,
    pub col: usize,
    /// Raw feature of the selected patch.
    #[serde(skip)]
    pub feature: Vec<f32>,
    /// Field value at the moment of selection.
    pub score: f64,
    /// 0-based selection round.
    pub order: usize,
}

/// Seeds in selection order, with distinct coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    seeds: Vec<Seed>,
}

impl SeedSet {
    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// Mean cosine similarity of each patch to its neighbors within Chebyshev
/// distance `radius`, window clipped at the borders. A patch with no
/// neighbors (the 1x1 grid) scores 0.0.
pub fn local_consistency(map: &FeatureMap, radius: usize) -> Result<SaliencyField> {
    local_consistency_impl(map, radius, false)
}

pub(crate) fn local_consistency_impl(
    map: &FeatureMap,
    radius: usize,
    include_center: bool,
) -> Result<SaliencyField> {
    if radius == 0 {
        return Err(Error::config("radius must be >= 1"));
    }
    let (h, w) = (map.height(), map.width());
    let scores: Vec<f64> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / w, idx % w);
            let center = map.patch(idx);
            let r0 = row.saturating_sub(radius);
            let r1 = (row + radius).min(h - 1);
            let c0 = col.saturating_sub(radius);
            let c1 = (col + radius).min(w - 1);
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if !include_center && r == row && c == col {
                        continue;
                    }
                    acc += cosine_similarity(center, map.patch(r * w + c));
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                acc / count as f64
            }
        })
        .collect();
    SaliencyField::new(h, w, scores)
}

/// Cosine similarity of each patch to the mean feature. All zeros when the
/// mean itself has zero norm.
pub fn global_redundancy(map: &FeatureMap) -> Result<SaliencyField> {
    let (h, w, d) = (map.height(), map.width(), map.dim());
    let n = map.num_patches();
    let mut mean = vec![0.0f64; d];
    for p in 0..n {
        for (m, &v) in mean.iter_mut().zip(map.patch(p)) {
            *m += v as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mean_norm_sq: f64 = mean.iter().map(|v| v * v).sum();
    let scores: Vec<f64> = if mean_norm_sq == 0.0 {
        vec![0.0; n]
    } else {
        (0..n)
            .into_par_iter()
            .map(|p| {
                let patch: Vec<f64> = map.patch(p).iter().map(|&v| v as f64).collect();
                cosine_similarity_f64(&patch, &mean)
            })
            .collect()
    };
    SaliencyField::new(h, w, scores)
}

/// The grounded field `S = L - alpha * G`.
pub fn grounded_saliency(map: &FeatureMap, cfg: &SaliencyConfig) -> Result<SaliencyField> {
    cfg.validate()?;
    if cfg.strategy != Strategy::Grounded {
        return Err(Error::config(format!(
            "grounded_saliency called with strategy {:?}",
            cfg.strategy
        )));
    }
    let local = local_consistency_impl(map, cfg.radius, cfg.include_center)?;
    let global = global_redundancy(map)?;
    let scores: Vec<f64> = local
        .scores()
        .iter()
        .zip(global.scores())
        .map(|(&l, &g)| l - cfg.alpha * g)
        .collect();
    SaliencyField::new(map.height(), map.width(), scores)
}

/// Norm-based or PCA-based scoring.
pub fn baseline_saliency(map: &FeatureMap, cfg: &SaliencyConfig) -> Result<SaliencyField> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Norm => {
            let scores: Vec<f64> = (0..map.num_patches())
                .map(|p| {
                    map.patch(p)
                        .iter()
                        .map(|&v| v as f64 * v as f64)
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            SaliencyField::new(map.height(), map.width(), scores)
        }
        Strategy::Pca => pca_saliency(map, cfg.pca_components),
        Strategy::Grounded => Err(Error::config(
            "baseline_saliency called with the grounded strategy",
        )),
    }
}

/// Dispatch on the configured strategy.
pub fn compute_saliency(map: &FeatureMap, cfg: &SaliencyConfig) -> Result<SaliencyField> {
    match cfg.strategy {
        Strategy::Grounded => grounded_saliency(map, cfg),
        Strategy::Norm | Strategy::Pca => baseline_saliency(map, cfg),
    }
}

fn pca_saliency(map: &FeatureMap, components: usize) -> Result<SaliencyField> {
    let d = map.dim();
    let n = map.num_patches();
    if components > d {
        return Err(Error::config(format!(
            "pca_components {components} exceeds feature dimension {d}"
        )));
    }
    let mut mean = vec![0.0f64; d];
    for p in 0..n {
        for (m, &v) in mean.iter_mut().zip(map.patch(p)) {
            *m += v as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    // Covariance of the centered features, row-major D x D.
    let mut cov = vec![0.0f64; d * d];
    for p in 0..n {
        let patch = map.patch(p);
        for a in 0..d {
            let da = patch[a] as f64 - mean[a];
            for b in a..d {
                let db = patch[b] as f64 - mean[b];
                cov[a * d + b] += da * db;
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / n as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }

    let basis = top_eigenvectors(&mut cov, d, components);

    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let patch = map.patch(p);
            let mut sum_sq = 0.0f64;
            for v in &basis {
                let mut proj = 0.0f64;
                for a in 0..d {
                    proj += (patch[a] as f64 - mean[a]) * v[a];
                }
                sum_sq += proj * proj;
            }
            sum_sq.sqrt()
        })
        .collect();
    SaliencyField::new(map.height(), map.width(), scores)
}

/// Power iteration with deflation; 100 iterations or relative change below
/// 1e-8 per component. A vanishing iterate (rank-deficient remainder) yields
/// a zero vector, which contributes nothing to projections.
fn top_eigenvectors(cov: &mut [f64], d: usize, components: usize) -> Vec<Vec<f64>> {
    let mut basis = Vec::with_capacity(components);
    // Deterministic start direction shared by every component.
    let mut rng = crate::rng::SplitMix64::new(0x9E37_79B9);
    let start: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
    for _ in 0..components {
        let mut v = start.clone();
        normalize(&mut v);
        let mut converged_zero = false;
        for _ in 0..100 {
            let mut next = vec![0.0f64; d];
            for a in 0..d {
                let mut acc = 0.0f64;
                for b in 0..d {
                    acc += cov[a * d + b] * v[b];
                }
                next[a] = acc;
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                converged_zero = true;
                break;
            }
            for x in next.iter_mut() {
                *x /= norm;
            }
            // Sign-align with the previous iterate before measuring change.
            let dot: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
            if dot < 0.0 {
                for x in next.iter_mut() {
                    *x = -*x;
                }
            }
            let change: f64 = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            v = next;
            if change < 1e-8 {
                break;
            }
        }
        if converged_zero {
            basis.push(vec![0.0; d]);
            continue;
        }
        // Rayleigh quotient, then deflate.
        let mut cv = vec![0.0f64; d];
        for a in 0..d {
            let mut acc = 0.0f64;
            for b in 0..d {
                acc += cov[a * d + b] * v[b];
            }
            cv[a] = acc;
        }
        let lambda: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] -= lambda * v[a] * v[b];
            }
        }
        basis.push(v);
    }
    basis
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Greedy mode selection with feature suppression.
///
/// Each round takes the field argmax (ties to the smallest flat index),
/// records the patch, then scales every score by
/// `1 - clamp(cos(f_selected, f_j), 0, 1)`. Selected patches are excluded
/// from later rounds.
pub fn select_seeds(map: &FeatureMap, field: &SaliencyField, k: usize) -> Result<SeedSet> {
    let n = map.num_patches();
    if field.height() != map.height() || field.width() != map.width() {
        return Err(Error::config(format!(
            "saliency field shape {}x{} does not match map {}x{}",
            field.height(),
            field.width(),
            map.height(),
            map.width()
        )));
    }
    if k == 0 {
        return Err(Error::config("seed count must be >= 1"));
    }
    if k > n {
        return Err(Error::config(format!(
            "seed count {k} exceeds patch count {n}"
        )));
    }
    let w = map.width();
    let mut scores = field.scores().to_vec();
    let mut taken = vec![false; n];
    let mut seeds = Vec::with_capacity(k);
    for order in 0..k {
        let mut best: Option<usize> = None;
        for (idx, &s) in scores.iter().enumerate() {
            if taken[idx] {
                continue;
            }
            match best {
                Some(b) if scores[b] >= s => {}
                _ => best = Some(idx),
            }
        }
        let p = best.expect("k <= n leaves at least one unselected patch");
        taken[p] = true;
        let feature = map.patch(p).to_vec();
        seeds.push(Seed {
            row: p / w,
            col: p % w,
            feature: feature.clone(),
            score: scores[p],
            order,
        });
        for (idx, s) in scores.iter_mut().enumerate() {
            let sim = cosine_similarity(&feature, map.patch(idx));
            *s *= 1.0 - sim.clamp(0.0, 1.0);
        }
    }
    Ok(SeedSet { seeds })
}
