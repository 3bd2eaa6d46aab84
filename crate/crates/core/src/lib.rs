//! Object-centric video tracking built on three parameter-free pieces:
//! saliency-grounded slot initialization over dense feature maps, iterative
//! slot binding, and frame-to-frame identity maintenance via optimal
//! bipartite matching.
//!
//! The crate is organized around the stages of that pipeline:
//!
//! - [`tensor`]: dense feature/label containers and the `GCT1` on-disk format
//! - [`saliency`]: the grounded saliency field and greedy seed selection,
//!   plus norm- and PCA-based baseline strategies
//! - [`binding`]: the slot-attention forward pass (inference only)
//! - [`matching`]: exact linear-sum-assignment and slot identity alignment
//! - [`metrics`]: ARI, FG-ARI, and mBO at image and video level
//! - [`synth`]: deterministic synthetic scene generator with ground truth
//! - [`pipeline`]: end-to-end tracking modes and mode comparison

pub mod binding;
pub mod error;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod saliency;
pub mod synth;
pub mod tensor;

pub use binding::{
    bind_frame, slot_attention_step, AttentionMap, BindingConfig, BindingEngine, SlotSet,
    UpdateRule,
};
pub use error::{Error, Result};
pub use matching::{solve_assignment, Assignment, CostMatrix};
pub use metrics::{Level, MetricReport};
pub use pipeline::{track, Mode, PipelineConfig, TrackResult};
pub use saliency::{select_seeds, SaliencyConfig, SaliencyField, SeedSet, Strategy};
pub use synth::{generate_scene, SceneSpec, SceneTruth};
pub use tensor::{
    read_tensor, write_tensor, FeatureMap, FeatureSequence, LabelMap, SegmentationSequence, Tensor,
};
