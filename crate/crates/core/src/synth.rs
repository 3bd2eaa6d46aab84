//! Deterministic synthetic video generator.
//!
//! Scenes are rigid discs in patch space, each carrying a distinct unit
//! prototype direction over a background prototype, moving with per-object
//! velocities and reflective boundaries. Patch features are the region
//! prototype plus optional Gaussian noise, so patches of the same instance
//! have elevated similarity by construction. Everything is a pure function
//! of the seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{FeatureMap, FeatureSequence, LabelMap, SegmentationSequence, BACKGROUND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Feature dimension.
    pub dim: usize,
    pub num_objects: usize,
    pub frames: usize,
    /// Disc radius range in patches, inclusive.
    pub object_radius_range: (f64, f64),
    /// Speed range in patches per frame, inclusive.
    pub speed_range: (f64, f64),
    /// Per-coordinate Gaussian noise standard deviation.
    pub noise_sigma: f64,
    /// Minimum pairwise cosine distance between prototype directions, in (0, 2].
    pub feature_separation: f64,
    pub seed: u64,
    /// Permit blobs to overlap; overlaps render with the lower object index
    /// in front.
    #[serde(default)]
    pub allow_overlap: bool,
    /// Build prototypes as a regular simplex with every pairwise cosine
    /// distance exactly `feature_separation`, making objects fully
    /// exchangeable, instead of rejection sampling.
    #[serde(default)]
    pub symmetric_prototypes: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 16,
            width: 16,
            dim: 16,
            num_objects: 3,
            frames: 8,
            object_radius_range: (2.0, 3.0),
            speed_range: (0.3, 1.2),
            noise_sigma: 0.0,
            feature_separation: 0.8,
            seed: 0,
            allow_overlap: false,
            symmetric_prototypes: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return Err(Error::config("scene dimensions must be >= 1"));
        }
        if self.num_objects == 0 {
            return Err(Error::config("num_objects must be >= 1"));
        }
        if self.frames == 0 {
            return Err(Error::config("frames must be >= 1"));
        }
        let (r_min, r_max) = self.object_radius_range;
        if !(r_min.is_finite() && r_max.is_finite()) || r_min <= 0.0 || r_max < r_min {
            return Err(Error::config(format!(
                "invalid radius range ({r_min}, {r_max})"
            )));
        }
        let max_fit = ((self.height.min(self.width) as f64) - 1.0) / 2.0;
        if r_max > max_fit {
            return Err(Error::config(format!(
                "radius {r_max} does not fit a {}x{} grid (max {max_fit})",
                self.height, self.width
            )));
        }
        let (s_min, s_max) = self.speed_range;
        if !(s_min.is_finite() && s_max.is_finite()) || s_min < 0.0 || s_max < s_min {
            return Err(Error::config(format!(
                "invalid speed range ({s_min}, {s_max})"
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::config(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.feature_separation.is_finite()
            || self.feature_separation <= 0.0
            || self.feature_separation > 2.0
        {
            return Err(Error::config(format!(
                "feature_separation must lie in (0, 2], got {}",
                self.feature_separation
            )));
        }
        Ok(())
    }
}

/// Generated features with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub features: FeatureSequence,
    pub labels: SegmentationSequence,
    /// Object prototypes in label order, background last.
    pub prototypes: Vec<Vec<f64>>,
    /// Per-object center path, one `(row, col)` per frame.
    pub trajectories: Vec<Vec<(f64, f64)>>,
}

const PROTOTYPE_ATTEMPTS: usize = 1000;
const PLACEMENT_ATTEMPTS: usize = 1000;

struct Disc {
    row: f64,
    col: f64,
    radius: f64,
    vel_row: f64,
    vel_col: f64,
}

impl Disc {
    fn covers(&self, row: usize, col: usize) -> bool {
        let dr = row as f64 - self.row;
        let dc = col as f64 - self.col;
        dr * dr + dc * dc <= self.radius * self.radius
    }

    fn overlaps(&self, other: &Disc) -> bool {
        let dr = self.row - other.row;
        let dc = self.col - other.col;
        let min_dist = self.radius + other.radius;
        dr * dr + dc * dc <= min_dist * min_dist
    }

    /// Advance one frame, reflecting so the disc stays fully inside the grid.
    fn advance(&mut self, height: usize, width: usize) {
        let reflect = |pos: &mut f64, vel: &mut f64, lo: f64, hi: f64| {
            *pos += *vel;
            // Degenerate band: no room to move.
            if hi <= lo {
                *pos = lo;
                return;
            }
            loop {
                if *pos < lo {
                    *pos = 2.0 * lo - *pos;
                    *vel = -*vel;
                } else if *pos > hi {
                    *pos = 2.0 * hi - *pos;
                    *vel = -*vel;
                } else {
                    break;
                }
            }
        };
        let (mut r, mut vr) = (self.row, self.vel_row);
        let (mut c, mut vc) = (self.col, self.vel_col);
        reflect(
            &mut r,
            &mut vr,
            self.radius,
            height as f64 - 1.0 - self.radius,
        );
        reflect(
            &mut c,
            &mut vc,
            self.radius,
            width as f64 - 1.0 - self.radius,
        );
        self.row = r;
        self.vel_row = vr;
        self.col = c;
        self.vel_col = vc;
    }
}

/// Unit prototypes with pairwise cosine distance at least `separation`.
fn sample_prototypes(
    rng: &mut SplitMix64,
    count: usize,
    dim: usize,
    separation: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(count);
    while prototypes.len() < count {
        let mut accepted = false;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let candidate = rng.next_unit_vector(dim);
            let ok = prototypes.iter().all(|p| {
                let dot: f64 = p.iter().zip(&candidate).map(|(a, b)| a * b).sum();
                1.0 - dot >= separation
            });
            if ok {
                prototypes.push(candidate);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::config(format!(
                "cannot sample {count} prototypes with separation {separation} in {dim} dimensions"
            )));
        }
    }
    Ok(prototypes)
}

/// Unit vectors with every pairwise dot exactly `1 - separation`:
/// `v_i = a (e_i - mean) + b u` with `u` the normalized all-ones direction
/// over the first `count` coordinates, `a^2 = separation`,
/// `b^2 = 1 - separation + separation / count`.
fn simplex_prototypes(count: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if dim < count {
        return Err(Error::config(format!(
            "symmetric prototypes need dim >= {count}, got {dim}"
        )));
    }
    let target = 1.0 - separation;
    if target < -1.0 / (count as f64 - 1.0) {
        return Err(Error::config(format!(
            "separation {separation} is unreachable for {count} symmetric prototypes"
        )));
    }
    let a = separation.sqrt();
    let b = (target + separation / count as f64).sqrt();
    let inv_m = 1.0 / count as f64;
    let u = (count as f64).sqrt().recip();
    Ok((0..count)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    if d >= count {
                        0.0
                    } else {
                        let centered = if d == i { 1.0 - inv_m } else { -inv_m };
                        a * centered + b * u
                    }
                })
                .collect()
        })
        .collect())
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SceneTruth> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let prototypes = if spec.symmetric_prototypes {
        simplex_prototypes(spec.num_objects + 1, spec.dim, spec.feature_separation)?
    } else {
        sample_prototypes(
            &mut rng,
            spec.num_objects + 1,
            spec.dim,
            spec.feature_separation,
        )?
    };

    // Placement plus full-trajectory overlap check, retried as a unit so a
    // seed deterministically fixes the whole configuration.
    let mut discs: Option<Vec<Vec<Disc>>> = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        if let Some(candidate) = try_place_and_simulate(&mut rng, spec) {
            discs = Some(candidate);
            break;
        }
    }
    let per_frame = discs.ok_or_else(|| {
        Error::config(format!(
            "cannot place {} non-overlapping objects after {PLACEMENT_ATTEMPTS} attempts",
            spec.num_objects
        ))
    })?;

    let trajectories: Vec<Vec<(f64, f64)>> = (0..spec.num_objects)
        .map(|o| per_frame.iter().map(|fs| (fs[o].row, fs[o].col)).collect())
        .collect();

    let mut feature_frames = Vec::with_capacity(spec.frames);
    let mut label_frames = Vec::with_capacity(spec.frames);
    for frame_discs in &per_frame {
        let n = spec.height * spec.width;
        let mut labels = vec![BACKGROUND; n];
        let mut data = Vec::with_capacity(n * spec.dim);
        for row in 0..spec.height {
            for col in 0..spec.width {
                // Z-order: the lowest object index in front.
                let mut region = spec.num_objects; // background prototype index
                for (o, disc) in frame_discs.iter().enumerate() {
                    if disc.covers(row, col) {
                        region = o;
                        break;
                    }
                }
                if region < spec.num_objects {
                    labels[row * spec.width + col] = region as i32;
                }
                let proto = &prototypes[region];
                if spec.noise_sigma == 0.0 {
                    data.extend(proto.iter().map(|&v| v as f32));
                } else {
                    data.extend(
                        proto
                            .iter()
                            .map(|&v| (v + spec.noise_sigma * rng.next_normal()) as f32),
                    );
                }
            }
        }
        feature_frames.push(FeatureMap::new(spec.height, spec.width, spec.dim, data)?);
        label_frames.push(LabelMap::new(spec.height, spec.width, labels)?);
    }

    Ok(SceneTruth {
        features: FeatureSequence::new(feature_frames)?,
        labels: SegmentationSequence::new(label_frames)?,
        prototypes,
        trajectories,
    })
}

/// One placement attempt: initial positions, velocities, then the full
/// simulation. Returns per-frame disc states, or `None` when the
/// non-overlap constraint failed (never `None` with `allow_overlap`).
fn try_place_and_simulate(rng: &mut SplitMix64, spec: &SceneSpec) -> Option<Vec<Vec<Disc>>> {
    let mut discs: Vec<Disc> = Vec::with_capacity(spec.num_objects);
    for _ in 0..spec.num_objects {
        let radius = rng.next_range(spec.object_radius_range.0, spec.object_radius_range.1);
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let row = rng.next_range(radius, spec.height as f64 - 1.0 - radius);
            let col = rng.next_range(radius, spec.width as f64 - 1.0 - radius);
            let candidate = Disc {
                row,
                col,
                radius,
                vel_row: 0.0,
                vel_col: 0.0,
            };
            if spec.allow_overlap || discs.iter().all(|d| !candidate.overlaps(d)) {
                discs.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    for disc in discs.iter_mut() {
        let speed = rng.next_range(spec.speed_range.0, spec.speed_range.1);
        let angle = rng.next_range(0.0, 2.0 * std::f64::consts::PI);
        disc.vel_row = speed * angle.sin();
        disc.vel_col = speed * angle.cos();
    }

    let mut per_frame: Vec<Vec<Disc>> = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        if t > 0 {
            for disc in discs.iter_mut() {
                disc.advance(spec.height, spec.width);
            }
        }
        if !spec.allow_overlap {
            for a in 0..discs.len() {
                for b in a + 1..discs.len() {
                    if discs[a].overlaps(&discs[b]) {
                        return None;
                    }
                }
            }
        }
        per_frame.push(
            discs
                .iter()
                .map(|d| Disc {
                    row: d.row,
                    col: d.col,
                    radius: d.radius,
                    vel_row: d.vel_row,
                    vel_col: d.vel_col,
                })
                .collect(),
        );
    }
    Some(per_frame)
}

/// Ground truth with object identities independently permuted per frame
/// (background fixed) -- the index-permutation failure mode in isolation.
pub fn shuffle_identities(truth: &SceneTruth, seed: u64) -> SegmentationSequence {
    let mut rng = SplitMix64::new(seed);
    let objects: Vec<i32> = crate::metrics::object_labels(&truth.labels)
        .into_iter()
        .collect();
    let frames = truth
        .labels
        .frames()
        .iter()
        .map(|frame| {
            let mut target = objects.clone();
            rng.shuffle(&mut target);
            let relabel: std::collections::HashMap<i32, i32> =
                objects.iter().copied().zip(target).collect();
            let labels = frame
                .labels()
                .iter()
                .map(|&l| if l == BACKGROUND { l } else { relabel[&l] })
                .collect();
            LabelMap::new(frame.height(), frame.width(), labels)
                .expect("relabeling preserves shape and sentinel")
        })
        .collect();
    SegmentationSequence::new(frames).expect("same shape as input")
}
