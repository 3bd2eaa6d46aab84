//! Clustering and mask-quality metrics: ARI, foreground-restricted ARI, and
//! mean best overlap, each at image level (per frame, averaged) and video
//! level (labels pooled over all frames so identity consistency matters).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, SegmentationSequence, BACKGROUND};

/// Aggregation level for sequence metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Per-frame metrics averaged over frames (identity-insensitive).
    Image,
    /// Labels pooled across space-time (identity-sensitive).
    Video,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Level::Image),
            "video" => Ok(Level::Video),
            other => Err(Error::config(format!(
                "unknown metric level {other:?} (image|video)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameMetrics {
    pub ari: f64,
    pub fg_ari: f64,
    pub mbo: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub level: Level,
    pub ari: f64,
    pub fg_ari: f64,
    pub mbo: f64,
    /// Set when ground truth had no foreground patches anywhere (the
    /// affected metrics default to 1.0).
    pub empty_foreground_warning: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_frame: Option<Vec<FrameMetrics>>,
}

/// Adjusted Rand Index from the contingency table.
///
/// Degenerate partitions (fewer than two pairs, or identical trivial
/// clusterings where max-index equals expected-index) score 1.0.
pub fn adjusted_rand_index(pred: &[i32], truth: &[i32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::input(format!(
            "label arrays differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let mut contingency: HashMap<(i32, i32), u64> = HashMap::new();
    let mut pred_sizes: HashMap<i32, u64> = HashMap::new();
    let mut truth_sizes: HashMap<i32, u64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        *contingency.entry((p, t)).or_insert(0) += 1;
        *pred_sizes.entry(p).or_insert(0) += 1;
        *truth_sizes.entry(t).or_insert(0) += 1;
    }
    // Integer pair counts keep the result independent of map iteration order.
    let comb2 = |m: u64| -> u128 { (m as u128) * (m as u128 - 1) / 2 };
    let sum_cells: u128 = contingency.values().map(|&m| comb2(m)).sum();
    let sum_pred: u128 = pred_sizes.values().map(|&m| comb2(m)).sum();
    let sum_truth: u128 = truth_sizes.values().map(|&m| comb2(m)).sum();
    let total = comb2(n);

    let expected = (sum_pred as f64) * (sum_truth as f64) / (total as f64);
    let max_index = (sum_pred as f64 + sum_truth as f64) / 2.0;
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((sum_cells as f64 - expected) / (max_index - expected))
}

/// FG-ARI value plus a flag for the no-foreground degenerate case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgAri {
    pub value: f64,
    pub empty_foreground: bool,
}

/// ARI restricted to patches whose ground-truth label is not background.
/// Predictions on those patches keep their labels as-is; all-background
/// truth scores 1.0 with the warning flag set.
pub fn foreground_ari(pred: &LabelMap, truth: &LabelMap) -> Result<FgAri> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::input(format!(
            "label maps differ in shape: {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    foreground_ari_arrays(pred.labels(), truth.labels())
}

fn foreground_ari_arrays(pred: &[i32], truth: &[i32]) -> Result<FgAri> {
    let mut fg_pred = Vec::new();
    let mut fg_truth = Vec::new();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if t != BACKGROUND {
            fg_pred.push(p);
            fg_truth.push(t);
        }
    }
    if fg_truth.is_empty() {
        return Ok(FgAri {
            value: 1.0,
            empty_foreground: true,
        });
    }
    Ok(FgAri {
        value: adjusted_rand_index(&fg_pred, &fg_truth)?,
        empty_foreground: false,
    })
}

/// Best IoU against any predicted segment, one entry per ground-truth
/// object, iterated in ascending truth-label order. Background truth is not
/// an object, but the predicted background segment is a valid candidate.
fn best_overlaps(pred: &[i32], truth: &[i32]) -> Vec<f64> {
    let mut inter: BTreeMap<(i32, i32), u64> = BTreeMap::new();
    let mut truth_sizes: BTreeMap<i32, u64> = BTreeMap::new();
    let mut pred_sizes: BTreeMap<i32, u64> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        *pred_sizes.entry(p).or_insert(0) += 1;
        *truth_sizes.entry(t).or_insert(0) += 1;
        *inter.entry((t, p)).or_insert(0) += 1;
    }
    truth_sizes
        .iter()
        .filter(|(&t, _)| t != BACKGROUND)
        .map(|(&t, &t_size)| {
            let mut best = 0.0f64;
            for (&p, &p_size) in &pred_sizes {
                let i = *inter.get(&(t, p)).unwrap_or(&0);
                if i == 0 {
                    continue;
                }
                let union = t_size + p_size - i;
                let iou = i as f64 / union as f64;
                if iou > best {
                    best = iou;
                }
            }
            best
        })
        .collect()
}

/// Mean best overlap over ground-truth objects: per frame at image level,
/// per identity across pooled space-time patches at video level. Sequences
/// with no ground-truth objects score 1.0.
pub fn mean_best_overlap(
    pred: &SegmentationSequence,
    truth: &SegmentationSequence,
    level: Level,
) -> Result<f64> {
    check_sequence_shapes(pred, truth)?;
    let overlaps = match level {
        Level::Image => {
            let mut all = Vec::new();
            for (p, t) in pred.frames().iter().zip(truth.frames()) {
                all.extend(best_overlaps(p.labels(), t.labels()));
            }
            all
        }
        Level::Video => {
            let p = video_level_labels(pred);
            let t = video_level_labels(truth);
            best_overlaps(&p, &t)
        }
    };
    if overlaps.is_empty() {
        return Ok(1.0);
    }
    Ok(overlaps.iter().sum::<f64>() / overlaps.len() as f64)
}

/// All frames' labels concatenated in time order, so a permuted-identity
/// prediction scores high per frame but low on the pooled array.
pub fn video_level_labels(seq: &SegmentationSequence) -> Vec<i32> {
    let mut out = Vec::with_capacity(seq.len() * seq.height() * seq.width());
    for frame in seq.frames() {
        out.extend_from_slice(frame.labels());
    }
    out
}

fn check_sequence_shapes(pred: &SegmentationSequence, truth: &SegmentationSequence) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::input(format!(
            "sequences differ in frame count: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::input(format!(
            "sequences differ in shape: {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    Ok(())
}

/// Full report at the requested level; image level also carries the
/// per-frame values.
pub fn evaluate(
    pred: &SegmentationSequence,
    truth: &SegmentationSequence,
    level: Level,
) -> Result<MetricReport> {
    check_sequence_shapes(pred, truth)?;
    match level {
        Level::Image => {
            let mut frames = Vec::with_capacity(pred.len());
            let mut warned = false;
            for (p, t) in pred.frames().iter().zip(truth.frames()) {
                let ari = adjusted_rand_index(p.labels(), t.labels())?;
                let fg = foreground_ari_arrays(p.labels(), t.labels())?;
                warned |= fg.empty_foreground;
                let overlaps = best_overlaps(p.labels(), t.labels());
                let mbo = if overlaps.is_empty() {
                    1.0
                } else {
                    overlaps.iter().sum::<f64>() / overlaps.len() as f64
                };
                frames.push(FrameMetrics {
                    ari,
                    fg_ari: fg.value,
                    mbo,
                });
            }
            let n = frames.len() as f64;
            Ok(MetricReport {
                level,
                ari: frames.iter().map(|f| f.ari).sum::<f64>() / n,
                fg_ari: frames.iter().map(|f| f.fg_ari).sum::<f64>() / n,
                mbo: mean_best_overlap(pred, truth, Level::Image)?,
                empty_foreground_warning: warned,
                per_frame: Some(frames),
            })
        }
        Level::Video => {
            let p = video_level_labels(pred);
            let t = video_level_labels(truth);
            let fg = foreground_ari_arrays(&p, &t)?;
            Ok(MetricReport {
                level,
                ari: adjusted_rand_index(&p, &t)?,
                fg_ari: fg.value,
                mbo: mean_best_overlap(pred, truth, Level::Video)?,
                empty_foreground_warning: fg.empty_foreground,
                per_frame: None,
            })
        }
    }
}

/// Distinct non-background labels in a pooled sequence.
pub fn object_labels(seq: &SegmentationSequence) -> BTreeSet<i32> {
    let mut set = BTreeSet::new();
    for frame in seq.frames() {
        for &l in frame.labels() {
            if l != BACKGROUND {
                set.insert(l);
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Pair-counting oracle. Walks every pair and classifies agreement,
    /// independent of the contingency-table route.
    fn ari_pair_oracle(pred: &[i32], truth: &[i32]) -> f64 {
        let n = pred.len();
        let (mut a, mut b, mut c, mut d) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            for j in i + 1..n {
                let same_t = truth[i] == truth[j];
                let same_p = pred[i] == pred[j];
                match (same_t, same_p) {
                    (true, true) => a += 1,
                    (true, false) => b += 1,
                    (false, true) => c += 1,
                    (false, false) => d += 1,
                }
            }
        }
        let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
        let denom = (a + b) * (b + d) + (a + c) * (c + d);
        if denom == 0.0 {
            return 1.0;
        }
        2.0 * (a * d - b * c) / denom
    }

    fn seq(frames: Vec<LabelMap>) -> SegmentationSequence {
        SegmentationSequence::new(frames).unwrap()
    }

    fn frame(w: usize, labels: Vec<i32>) -> LabelMap {
        LabelMap::new(1, w, labels).unwrap()
    }

    #[test]
    fn identical_labelings_score_one() {
        let labels = vec![0, 0, 1, 2, 2, 2];
        assert_eq!(adjusted_rand_index(&labels, &labels).unwrap(), 1.0);
    }

    #[test]
    fn single_cluster_vs_balanced_is_zero() {
        let pred = vec![0, 0, 0, 0];
        let truth = vec![0, 0, 1, 1];
        assert_eq!(adjusted_rand_index(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn contingency_hand_case() {
        let pred = vec![0, 0, 1, 1];
        let truth = vec![0, 0, 1, 2];
        let ari = adjusted_rand_index(&pred, &truth).unwrap();
        assert!((ari - 0.5714).abs() < 1e-4, "got {ari}");
    }

    #[test]
    fn degenerate_cases_score_one() {
        assert_eq!(adjusted_rand_index(&[3], &[5]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[], &[]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 1], &[2, 2, 2]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_is_input_error() {
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn matches_pair_counting_oracle() {
        let mut rng = SplitMix64::new(2024);
        for _ in 0..500 {
            let n = 2 + rng.next_index(11);
            let clusters = 1 + rng.next_index(3);
            let pred: Vec<i32> = (0..n).map(|_| rng.next_index(clusters) as i32).collect();
            let truth: Vec<i32> = (0..n).map(|_| rng.next_index(clusters) as i32).collect();
            let fast = adjusted_rand_index(&pred, &truth).unwrap();
            let oracle = ari_pair_oracle(&pred, &truth);
            assert!(
                (fast - oracle).abs() < 1e-10,
                "pred {pred:?} truth {truth:?}: {fast} vs {oracle}"
            );
        }
    }

    #[test]
    fn ari_symmetric_and_relabel_invariant() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..100 {
            let n = 2 + rng.next_index(10);
            let pred: Vec<i32> = (0..n).map(|_| rng.next_index(3) as i32).collect();
            let truth: Vec<i32> = (0..n).map(|_| rng.next_index(3) as i32).collect();
            let ab = adjusted_rand_index(&pred, &truth).unwrap();
            let ba = adjusted_rand_index(&truth, &pred).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            // Bijective relabeling of one side.
            let relabeled: Vec<i32> = pred.iter().map(|&l| 100 - l * 7).collect();
            let rb = adjusted_rand_index(&relabeled, &truth).unwrap();
            assert!((ab - rb).abs() < 1e-12);
        }
    }

    #[test]
    fn fg_ari_all_background_warns() {
        let truth = frame(3, vec![-1, -1, -1]);
        let pred = frame(3, vec![0, 1, 2]);
        let fg = foreground_ari(&pred, &truth).unwrap();
        assert_eq!(fg.value, 1.0);
        assert!(fg.empty_foreground);
    }

    #[test]
    fn fg_ari_ignores_background_garbage() {
        let truth = frame(6, vec![-1, -1, 0, 0, 1, 1]);
        let clean = frame(6, vec![5, 5, 3, 3, 4, 4]);
        let garbage = frame(6, vec![9, 2, 3, 3, 4, 4]);
        let a = foreground_ari(&clean, &truth).unwrap();
        let b = foreground_ari(&garbage, &truth).unwrap();
        assert_eq!(a.value, 1.0);
        assert_eq!(a.value, b.value);
        assert!(!a.empty_foreground);
    }

    #[test]
    fn fg_ari_reduces_to_ari_on_foreground() {
        let truth = frame(4, vec![0, 0, 1, 2]);
        let pred = frame(4, vec![0, 0, 1, 1]);
        let fg = foreground_ari(&pred, &truth).unwrap();
        assert!((fg.value - 0.5714).abs() < 1e-4);
    }

    #[test]
    fn mbo_perfect_prediction() {
        let t = seq(vec![frame(4, vec![0, 0, 1, -1])]);
        assert_eq!(mean_best_overlap(&t, &t, Level::Image).unwrap(), 1.0);
        assert_eq!(mean_best_overlap(&t, &t, Level::Video).unwrap(), 1.0);
    }

    #[test]
    fn mbo_whole_frame_prediction_halves() {
        // One truth object covering half the frame; prediction is a single
        // whole-frame segment, IoU 1/2.
        let truth = seq(vec![frame(4, vec![0, 0, -1, -1])]);
        let pred = seq(vec![frame(4, vec![7, 7, 7, 7])]);
        assert_eq!(mean_best_overlap(&pred, &truth, Level::Image).unwrap(), 0.5);
    }

    #[test]
    fn mbo_split_object_hand_case() {
        // Two truth objects; one is split into two equal predicted halves
        // (best IoU 1/2), the other matches exactly.
        let truth = seq(vec![frame(8, vec![0, 0, 0, 0, 1, 1, 1, 1])]);
        let pred = seq(vec![frame(8, vec![0, 0, 1, 1, 2, 2, 2, 2])]);
        assert_eq!(
            mean_best_overlap(&pred, &truth, Level::Image).unwrap(),
            0.75
        );
    }

    #[test]
    fn mbo_background_prediction_is_a_candidate() {
        let truth = seq(vec![frame(4, vec![0, 0, -1, -1])]);
        let pred = seq(vec![frame(4, vec![-1, -1, 0, 0])]);
        // The predicted background segment overlaps the truth object exactly.
        assert_eq!(mean_best_overlap(&pred, &truth, Level::Image).unwrap(), 1.0);
    }

    #[test]
    fn mbo_bounds_and_exactness() {
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            let w = 4 + rng.next_index(6);
            let truth_labels: Vec<i32> = (0..w).map(|_| rng.next_index(3) as i32 - 1).collect();
            let pred_labels: Vec<i32> = (0..w).map(|_| rng.next_index(3) as i32 - 1).collect();
            let t = seq(vec![frame(w, truth_labels)]);
            let p = seq(vec![frame(w, pred_labels)]);
            let mbo = mean_best_overlap(&p, &t, Level::Image).unwrap();
            assert!((0.0..=1.0).contains(&mbo));
        }
    }

    #[test]
    fn video_level_labels_concatenates() {
        let s = seq(vec![frame(2, vec![0, 1]), frame(2, vec![1, 0])]);
        assert_eq!(video_level_labels(&s), vec![0, 1, 1, 0]);
    }

    #[test]
    fn swapped_identities_tank_video_ari() {
        let truth = seq(vec![frame(4, vec![0, 0, 1, 1]), frame(4, vec![0, 0, 1, 1])]);
        let pred = seq(vec![frame(4, vec![0, 0, 1, 1]), frame(4, vec![1, 1, 0, 0])]);
        let image = evaluate(&pred, &truth, Level::Image).unwrap();
        let video = evaluate(&pred, &truth, Level::Video).unwrap();
        assert_eq!(image.ari, 1.0);
        assert!(video.ari < image.ari);
        assert!((video.ari - (-1.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_labels_make_levels_agree() {
        let truth = seq(vec![frame(4, vec![0, 0, 1, 1]); 3]);
        let pred = seq(vec![frame(4, vec![1, 1, 0, 0]); 3]);
        let image = evaluate(&pred, &truth, Level::Image).unwrap();
        let video = evaluate(&pred, &truth, Level::Video).unwrap();
        assert!((image.ari - video.ari).abs() < 1e-12);
        assert_eq!(image.ari, 1.0);
    }

    #[test]
    fn single_frame_video_equals_image() {
        let truth = seq(vec![frame(4, vec![0, 0, 1, -1])]);
        let pred = seq(vec![frame(4, vec![2, 2, 0, 1])]);
        let image = evaluate(&pred, &truth, Level::Image).unwrap();
        let video = evaluate(&pred, &truth, Level::Video).unwrap();
        assert!((image.ari - video.ari).abs() < 1e-12);
        assert!((image.fg_ari - video.fg_ari).abs() < 1e-12);
        assert!((image.mbo - video.mbo).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let a = seq(vec![frame(3, vec![0, 0, 1])]);
        let b = seq(vec![frame(4, vec![0, 0, 1, 1])]);
        assert!(mean_best_overlap(&a, &b, Level::Image).is_err());
        assert!(evaluate(&a, &b, Level::Video).is_err());
    }
}
