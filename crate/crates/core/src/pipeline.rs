//! End-to-end tracking over a feature sequence.
//!
//! Grounded-correspondence discovers slots fresh on every frame (saliency ->
//! seed selection -> binding) and chains identities through optimal
//! assignment between consecutive slot sets; the temporal step is a pure
//! function of slot values with no stored state. The baseline modes cover
//! the alternatives: propagating slots as next-frame queries, discovering
//! independently with no alignment, and content-blind Gaussian queries.

use rayon::prelude::*;
use serde::Serialize;

use crate::binding::{
    content_blind_queries, hard_masks, AttentionMap, BindingConfig, BindingEngine, SlotSet,
};
use crate::error::{Error, Result};
use crate::matching::{apply_assignment, slot_cost_matrix, solve_assignment};
use crate::metrics::{evaluate, Level, MetricReport};
use crate::saliency::{compute_saliency, select_seeds, SaliencyConfig};
use crate::tensor::{FeatureMap, FeatureSequence, SegmentationSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Per-frame grounded discovery with Hungarian identity alignment.
    GroundedCorrespondence,
    /// Grounded discovery on frame 0, then slots propagate as queries.
    IdentityPropagation,
    /// Per-frame grounded discovery with no alignment.
    IndependentDiscovery,
    /// Gaussian queries on frame 0, then slots propagate as queries.
    ContentBlind,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::GroundedCorrespondence,
        Mode::IdentityPropagation,
        Mode::IndependentDiscovery,
        Mode::ContentBlind,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::GroundedCorrespondence => "grounded-correspondence",
            Mode::IdentityPropagation => "identity-propagation",
            Mode::IndependentDiscovery => "independent-discovery",
            Mode::ContentBlind => "content-blind",
        }
    }

    /// Iteration defaults: grounded modes run 1/1, content-blind 3/2.
    pub fn default_iterations(&self) -> (usize, usize) {
        match self {
            Mode::ContentBlind => (3, 2),
            _ => (1, 1),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grounded-correspondence" => Ok(Mode::GroundedCorrespondence),
            "identity-propagation" => Ok(Mode::IdentityPropagation),
            "independent-discovery" => Ok(Mode::IndependentDiscovery),
            "content-blind" => Ok(Mode::ContentBlind),
            other => Err(Error::config(format!(
                "unknown mode {other:?} (grounded-correspondence|identity-propagation|independent-discovery|content-blind)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub saliency: SaliencyConfig,
    pub binding: BindingConfig,
    /// Slot count.
    pub k: usize,
    /// Query seed, used by content-blind mode only.
    pub seed: u64,
}

impl PipelineConfig {
    /// Mode defaults with the given slot count.
    pub fn new(mode: Mode, k: usize) -> Self {
        let (first, rest) = mode.default_iterations();
        PipelineConfig {
            mode,
            saliency: SaliencyConfig::default(),
            binding: BindingConfig {
                iterations_first: first,
                iterations_rest: rest,
                ..Default::default()
            },
            k,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("slot count k must be >= 1"));
        }
        self.saliency.validate()?;
        self.binding.validate()
    }
}

/// One frame-pair record: the solved assignment between frames `t - 1`
/// and `t` and its identity fraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDiagnostic {
    /// Index of the later frame in the pair.
    pub t: usize,
    pub ratio: f64,
    pub total_cost: f64,
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    /// Identity-consistent label maps, one per frame.
    pub masks: SegmentationSequence,
    /// Final (aligned where applicable) slots per frame.
    pub slots_per_frame: Vec<SlotSet>,
    /// One record per consecutive frame pair.
    pub diagnostics: Vec<PairDiagnostic>,
}

/// Run the configured mode over the sequence.
pub fn track(seq: &FeatureSequence, cfg: &PipelineConfig) -> Result<TrackResult> {
    cfg.validate()?;
    let n = seq.height() * seq.width();
    if cfg.k > n {
        return Err(Error::config(format!(
            "k = {} exceeds the {n} patches per frame",
            cfg.k
        )));
    }
    let engine = BindingEngine::from_config(&cfg.binding)?;
    match cfg.mode {
        Mode::GroundedCorrespondence => track_discovery(seq, cfg, &engine, true),
        Mode::IndependentDiscovery => track_discovery(seq, cfg, &engine, false),
        Mode::IdentityPropagation => track_propagation(seq, cfg, &engine, false),
        Mode::ContentBlind => track_propagation(seq, cfg, &engine, true),
    }
}

fn discover_frame(
    map: &FeatureMap,
    cfg: &PipelineConfig,
    engine: &BindingEngine,
    iters: usize,
) -> Result<(SlotSet, AttentionMap)> {
    let field = compute_saliency(map, &cfg.saliency)?;
    let seeds = select_seeds(map, &field, cfg.k)?;
    let mut slots = Vec::with_capacity(cfg.k * map.dim());
    for seed in seeds.seeds() {
        slots.extend(seed.feature.iter().map(|&v| v as f64));
    }
    let queries = SlotSet::new(slots, map.dim(), (0..cfg.k as i32).collect())?;
    engine.bind(&queries, map, iters)
}

/// Shared path for the two per-frame-discovery modes; `align` switches the
/// Hungarian chain on.
fn track_discovery(
    seq: &FeatureSequence,
    cfg: &PipelineConfig,
    engine: &BindingEngine,
    align: bool,
) -> Result<TrackResult> {
    let (first, rest) = (cfg.binding.iterations_first, cfg.binding.iterations_rest);
    // Discovery is independent per frame; the identity chain below is the
    // only sequential part.
    let discovered: Vec<(SlotSet, AttentionMap)> = seq
        .frames()
        .par_iter()
        .enumerate()
        .map(|(t, map)| discover_frame(map, cfg, engine, if t == 0 { first } else { rest }))
        .collect::<Result<_>>()?;

    let mut masks = Vec::with_capacity(seq.len());
    let mut slots_per_frame = Vec::with_capacity(seq.len());
    let mut diagnostics = Vec::with_capacity(seq.len().saturating_sub(1));
    for (t, (raw_slots, att)) in discovered.into_iter().enumerate() {
        let raw_masks = hard_masks(&att, &raw_slots)?;
        if t == 0 {
            masks.push(raw_masks);
            slots_per_frame.push(raw_slots);
            continue;
        }
        let prev = &slots_per_frame[t - 1];
        let cost = slot_cost_matrix(prev, &raw_slots)?;
        let assignment = solve_assignment(&cost)?;
        diagnostics.push(PairDiagnostic {
            t,
            ratio: assignment.identity_fraction(),
            total_cost: assignment.total_cost,
            perm: assignment.perm.clone(),
        });
        if align {
            let (aligned, relabeled) = apply_assignment(&raw_slots, &raw_masks, &assignment, prev)?;
            masks.push(relabeled);
            slots_per_frame.push(aligned);
        } else {
            masks.push(raw_masks);
            slots_per_frame.push(raw_slots);
        }
    }
    Ok(TrackResult {
        masks: SegmentationSequence::new(masks)?,
        slots_per_frame,
        diagnostics,
    })
}

/// Shared path for the two propagation modes; queries for frame `t` are the
/// slots from frame `t - 1`, and the assignment is solved for diagnostics
/// without being applied.
fn track_propagation(
    seq: &FeatureSequence,
    cfg: &PipelineConfig,
    engine: &BindingEngine,
    content_blind: bool,
) -> Result<TrackResult> {
    let first_map = &seq.frames()[0];
    let queries = if content_blind {
        content_blind_queries(cfg.k, first_map.dim(), cfg.seed)?
    } else {
        let field = compute_saliency(first_map, &cfg.saliency)?;
        let seeds = select_seeds(first_map, &field, cfg.k)?;
        let mut slots = Vec::with_capacity(cfg.k * first_map.dim());
        for seed in seeds.seeds() {
            slots.extend(seed.feature.iter().map(|&v| v as f64));
        }
        SlotSet::new(slots, first_map.dim(), (0..cfg.k as i32).collect())?
    };

    let mut masks = Vec::with_capacity(seq.len());
    let mut slots_per_frame: Vec<SlotSet> = Vec::with_capacity(seq.len());
    let mut diagnostics = Vec::with_capacity(seq.len().saturating_sub(1));
    let (slots0, att0) = engine.bind(&queries, first_map, cfg.binding.iterations_first)?;
    masks.push(hard_masks(&att0, &slots0)?);
    slots_per_frame.push(slots0);

    for (t, map) in seq.frames().iter().enumerate().skip(1) {
        let prev = slots_per_frame[t - 1].clone();
        let (slots, att) = engine.bind(&prev, map, cfg.binding.iterations_rest)?;
        let assignment = solve_assignment(&slot_cost_matrix(&prev, &slots)?)?;
        diagnostics.push(PairDiagnostic {
            t,
            ratio: assignment.identity_fraction(),
            total_cost: assignment.total_cost,
            perm: assignment.perm,
        });
        masks.push(hard_masks(&att, &slots)?);
        slots_per_frame.push(slots);
    }
    Ok(TrackResult {
        masks: SegmentationSequence::new(masks)?,
        slots_per_frame,
        diagnostics,
    })
}

/// Image- and video-level reports for one mode.
#[derive(Debug, Clone, Serialize)]
pub struct ModeComparison {
    pub mode: Mode,
    pub image: MetricReport,
    pub video: MetricReport,
}

/// Run each mode and evaluate against ground truth at both levels.
///
/// Every mode starts from `base`, with its mode field replaced and its
/// iteration counts reset to the mode defaults.
pub fn compare_modes(
    seq: &FeatureSequence,
    truth: &SegmentationSequence,
    modes: &[Mode],
    base: &PipelineConfig,
) -> Result<Vec<ModeComparison>> {
    if truth.len() != seq.len() || truth.height() != seq.height() || truth.width() != seq.width() {
        return Err(Error::input(format!(
            "truth shape {}x{}x{} does not match features {}x{}x{}",
            truth.len(),
            truth.height(),
            truth.width(),
            seq.len(),
            seq.height(),
            seq.width()
        )));
    }
    modes
        .iter()
        .map(|&mode| {
            let (first, rest) = mode.default_iterations();
            let cfg = PipelineConfig {
                mode,
                binding: BindingConfig {
                    iterations_first: first,
                    iterations_rest: rest,
                    ..base.binding.clone()
                },
                ..base.clone()
            };
            let result = track(seq, &cfg)?;
            Ok(ModeComparison {
                mode,
                image: evaluate(&result.masks, truth, Level::Image)?,
                video: evaluate(&result.masks, truth, Level::Video)?,
            })
        })
        .collect()
}

/// Aligned-text rendering of a mode comparison.
pub fn format_comparison_table(rows: &[ModeComparison]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<26} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "mode", "img-ari", "img-fgari", "img-mbo", "vid-ari", "vid-fgari", "vid-mbo"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<26} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            row.mode.name(),
            row.image.ari,
            row.image.fg_ari,
            row.image.mbo,
            row.video.ari,
            row.video.fg_ari,
            row.video.mbo
        ));
    }
    out
}

/// Identity-ratio diagnostics only, without retaining masks.
pub fn diagnose(seq: &FeatureSequence, cfg: &PipelineConfig) -> Result<Vec<PairDiagnostic>> {
    Ok(track(seq, cfg)?.diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::object_labels;
    use crate::synth::{generate_scene, SceneSpec};

    /// Synthetic prototypes are unit vectors, far below backbone feature
    /// norms, so the tests sharpen the logits explicitly.
    const TEST_TEMPERATURE: f64 = 10.0;

    fn scene_config(mode: Mode, k: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(mode, k);
        cfg.binding.temperature = Some(TEST_TEMPERATURE);
        cfg
    }

    fn noiseless_scene(seed: u64) -> crate::synth::SceneTruth {
        generate_scene(&SceneSpec {
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn single_frame_has_no_diagnostics() {
        let truth = generate_scene(&SceneSpec {
            frames: 1,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let cfg = scene_config(Mode::GroundedCorrespondence, 4);
        let result = track(&truth.features, &cfg).unwrap();
        assert!(result.diagnostics.is_empty());
        assert_eq!(result.masks.len(), 1);
    }

    #[test]
    fn grounded_correspondence_recovers_truth_on_noiseless_scene() {
        let truth = noiseless_scene(7);
        let cfg = scene_config(Mode::GroundedCorrespondence, 4);
        let result = track(&truth.features, &cfg).unwrap();
        let video = evaluate(&result.masks, &truth.labels, Level::Video).unwrap();
        assert_eq!(video.ari, 1.0);
        assert_eq!(video.mbo, 1.0);
    }

    #[test]
    fn identity_propagation_keeps_ratio_at_one() {
        let truth = noiseless_scene(13);
        let cfg = scene_config(Mode::IdentityPropagation, 4);
        let result = track(&truth.features, &cfg).unwrap();
        assert_eq!(result.diagnostics.len(), truth.features.len() - 1);
        for d in &result.diagnostics {
            assert_eq!(d.ratio, 1.0, "frame pair {} broke propagation", d.t);
        }
    }

    #[test]
    fn identity_set_is_constant_in_grounded_mode() {
        let truth = noiseless_scene(21);
        let cfg = scene_config(Mode::GroundedCorrespondence, 4);
        let result = track(&truth.features, &cfg).unwrap();
        let first: std::collections::BTreeSet<i32> = result.slots_per_frame[0]
            .identities()
            .iter()
            .copied()
            .collect();
        for slots in &result.slots_per_frame {
            let ids: std::collections::BTreeSet<i32> = slots.identities().iter().copied().collect();
            assert_eq!(ids, first);
        }
        // Masks only use slot identities.
        for frame in result.masks.frames() {
            for &l in frame.labels() {
                assert!(first.contains(&l));
            }
        }
    }

    #[test]
    fn stored_assignments_are_optimal() {
        // Reconstruct each pre-alignment slot set from the stored permutation
        // and check the recorded cost against exhaustive enumeration.
        let truth = noiseless_scene(33);
        let cfg = scene_config(Mode::GroundedCorrespondence, 4);
        let result = track(&truth.features, &cfg).unwrap();
        for d in &result.diagnostics {
            let prev = &result.slots_per_frame[d.t - 1];
            let aligned = &result.slots_per_frame[d.t];
            // aligned[i] = raw[perm[i]], so raw[j] = aligned[inverse[j]].
            let mut inverse = vec![0usize; d.perm.len()];
            for (i, &p) in d.perm.iter().enumerate() {
                inverse[p] = i;
            }
            let raw = aligned.permuted(&inverse).unwrap();
            let cost = slot_cost_matrix(prev, &raw).unwrap();
            let mut best = f64::INFINITY;
            permute_min(&cost, &mut Vec::new(), &mut vec![false; 4], &mut best);
            assert!((d.total_cost - best).abs() < 1e-9);
        }
    }

    fn permute_min(
        c: &crate::matching::CostMatrix,
        perm: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best: &mut f64,
    ) {
        if perm.len() == c.k() {
            let cost: f64 = perm.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
            if cost < *best {
                *best = cost;
            }
            return;
        }
        for j in 0..c.k() {
            if !used[j] {
                used[j] = true;
                perm.push(j);
                permute_min(c, perm, used, best);
                perm.pop();
                used[j] = false;
            }
        }
    }

    #[test]
    fn grounded_modes_agree_on_single_frame() {
        let truth = generate_scene(&SceneSpec {
            frames: 1,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let masks: Vec<SegmentationSequence> = [
            Mode::GroundedCorrespondence,
            Mode::IdentityPropagation,
            Mode::IndependentDiscovery,
        ]
        .iter()
        .map(|&mode| {
            let mut cfg = scene_config(mode, 4);
            // Align iteration counts so only the temporal machinery differs.
            cfg.binding.iterations_first = 1;
            cfg.binding.iterations_rest = 1;
            track(&truth.features, &cfg).unwrap().masks
        })
        .collect();
        assert_eq!(masks[0], masks[1]);
        assert_eq!(masks[0], masks[2]);
    }

    #[test]
    fn temporal_step_is_stateless_and_deterministic() {
        let truth = noiseless_scene(41);
        for mode in Mode::ALL {
            let cfg = scene_config(mode, 4);
            assert!(cfg.binding.weights_path.is_none());
            let a = track(&truth.features, &cfg).unwrap();
            let b = track(&truth.features, &cfg).unwrap();
            assert_eq!(a.masks, b.masks);
            assert_eq!(a.diagnostics, b.diagnostics);
            for (x, y) in a.slots_per_frame.iter().zip(&b.slots_per_frame) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn k_larger_than_patch_count_is_config_error() {
        let truth = generate_scene(&SceneSpec {
            height: 4,
            width: 4,
            num_objects: 1,
            frames: 1,
            object_radius_range: (1.0, 1.0),
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let cfg = scene_config(Mode::GroundedCorrespondence, 17);
        assert!(matches!(
            track(&truth.features, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn compare_modes_emits_all_rows() {
        let truth = noiseless_scene(55);
        let base = scene_config(Mode::GroundedCorrespondence, 4);
        let rows = compare_modes(
            &truth.features,
            &truth.labels,
            &[Mode::GroundedCorrespondence, Mode::IndependentDiscovery],
            &base,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mode, Mode::GroundedCorrespondence);
        assert_eq!(rows[0].video.ari, 1.0);
        let table = format_comparison_table(&rows);
        assert!(table.contains("grounded-correspondence"));
        assert!(table.lines().count() == 3);
    }

    #[test]
    fn masks_cover_all_objects_on_noiseless_scene() {
        let truth = noiseless_scene(61);
        let cfg = scene_config(Mode::GroundedCorrespondence, 4);
        let result = track(&truth.features, &cfg).unwrap();
        // K = objects + 1, so the predicted partition has one segment per
        // object plus background.
        let predicted = object_labels(&result.masks);
        assert_eq!(predicted.len(), 4);
    }
}
