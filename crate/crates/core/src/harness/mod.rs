//! Synthetic scenes, input synthesis, a brute-force PQ oracle and timing
//! utilities for desk-scale verification.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64`, so scenes and
//! inputs are identical across platforms for a given seed.

pub mod bench;
pub mod oracle;
pub mod scene;
pub mod synth;

pub use bench::{bench, bench_inputs, BenchScene, BenchStats, Pipeline};
pub use oracle::oracle_pq;
pub use scene::{generate, GtInstance, GtScene, SceneSpec, Shape, StuffSite, ThingShape};
pub use synth::{occlusion_case, synthesize_inputs, OcclusionCase, SynthInputs, SynthParams};
