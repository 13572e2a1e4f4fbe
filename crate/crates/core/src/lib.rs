//! Parameter-free panoptic segmentation fusion.
//!
//! Semantic logits and instance proposals are merged into a single panoptic
//! logit tensor whose per-pixel argmax yields either a stuff class, an
//! instance, or (through an extra unknown channel) void. The crate also
//! ships the inference-time mask pruning, a heuristic combine baseline, the
//! panoptic-quality evaluator, a COCO-panoptic codec and a synthetic-scene
//! harness used to verify all of them.

pub mod category;
pub mod codec;
pub mod combine;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod panoptic;
pub mod pruning;
pub mod render;
pub mod tensor;
pub mod upst;

pub use category::{Category, CategorySet};
pub use error::{Error, Result};
pub use fusion::{
    assign_instance_classes, build_panoptic_logits, decode, fuse_decode, run_fusion,
    suppress_small_stuff, FusionConfig, FusionOutput, PanopticLogits,
};
pub use metrics::{aggregate, match_and_score, miou, EvalReport, ImageStats};
pub use panoptic::{PanopticMap, SegmentInfo, SegmentLabel, VOID_ID};
pub use pruning::{InstanceProposal, PrunedSet, PruningConfig};
pub use tensor::{BBox, Grid, LogitTensor, MaskPatch, PixelRect, Scalar};
