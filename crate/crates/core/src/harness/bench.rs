use std::time::Instant;

use serde::Serialize;

use crate::combine::{run_combine, CombineConfig};
use crate::error::{invalid, Result};
use crate::fusion::{run_fusion, FusionConfig};
use crate::harness::scene::generate;
use crate::harness::synth::{synthesize_inputs, SynthInputs, SynthParams};
use crate::category::CategorySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Fusion,
    Combine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BenchScene {
    pub height: usize,
    pub width: usize,
    pub n_stuff: usize,
    pub n_thing: usize,
    pub instances: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchStats {
    pub pipeline: Pipeline,
    pub repeats: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples_ms: Vec<f64>,
}

/// Inputs for timing: a generated scene with noisy logits and proposals.
pub fn bench_inputs(scene: &BenchScene) -> Result<(CategorySet, SynthInputs<f32>)> {
    let gt = generate(
        scene.seed,
        scene.height,
        scene.width,
        scene.n_stuff,
        scene.n_thing,
        scene.instances,
    )?;
    let params = SynthParams {
        logit_scale: 4.0,
        noise_sigma: 1.0,
        box_jitter: 0.05,
        seed: scene.seed,
    };
    let inputs = synthesize_inputs::<f32>(&gt, &params)?;
    Ok((gt.categories, inputs))
}

/// Wall-clock time of the post-network stage (logits and proposals to the
/// final panoptic map), repeated on the same inputs.
pub fn bench(
    pipeline: Pipeline,
    categories: &CategorySet,
    inputs: &SynthInputs<f32>,
    repeats: usize,
) -> Result<BenchStats> {
    if repeats == 0 {
        return Err(invalid("repeats must be at least 1"));
    }
    let fusion = FusionConfig::default();
    let combine = CombineConfig::default();
    let mut samples_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        match pipeline {
            Pipeline::Fusion => {
                std::hint::black_box(run_fusion(&inputs.logits, categories, &inputs.proposals, &fusion)?);
            }
            Pipeline::Combine => {
                std::hint::black_box(run_combine(&inputs.logits, categories, &inputs.proposals, &combine)?);
            }
        }
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchStats {
        pipeline,
        repeats,
        mean_ms: samples_ms.iter().sum::<f64>() / repeats as f64,
        min_ms: samples_ms.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: samples_ms.iter().copied().fold(0.0, f64::max),
        samples_ms,
    })
}
