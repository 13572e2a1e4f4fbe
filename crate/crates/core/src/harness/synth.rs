use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::harness::scene::{GtScene, SceneSpec, Shape, StuffSite, ThingShape};
use crate::pruning::InstanceProposal;
use crate::tensor::{BBox, Grid, LogitTensor, MaskPatch, PixelRect, Scalar, MASK_SIDE};

/// Magnitude of the rasterized ground-truth mask logits.
pub const MASK_LOGIT: f32 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub logit_scale: f64,
    pub noise_sigma: f64,
    /// Box coordinates move by up to this fraction of the box side.
    pub box_jitter: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn clean(logit_scale: f64) -> Self {
        Self {
            logit_scale,
            noise_sigma: 0.0,
            box_jitter: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInputs<T = f32> {
    pub logits: LogitTensor<T>,
    /// One proposal per visible GT instance, in scene order.
    pub proposals: Vec<InstanceProposal>,
}

/// 28x28 patch sampling `segment_id` membership at box-relative
/// nearest-neighbour positions: `+6` inside, `-6` outside.
pub fn rasterize_mask(ids: &Grid<u32>, segment_id: u32, rect: &PixelRect) -> MaskPatch {
    if rect.is_empty() {
        return MaskPatch::constant(-MASK_LOGIT);
    }
    let (h, w) = (rect.height(), rect.width());
    let mut values = Vec::with_capacity(MASK_SIDE * MASK_SIDE);
    for pr in 0..MASK_SIDE {
        let r = rect.row0 + ((pr as f64 + 0.5) * h as f64 / MASK_SIDE as f64) as usize;
        for pc in 0..MASK_SIDE {
            let c = rect.col0 + ((pc as f64 + 0.5) * w as f64 / MASK_SIDE as f64) as usize;
            let inside = r < ids.height() && c < ids.width() && *ids.get(r, c) == segment_id;
            values.push(if inside { MASK_LOGIT } else { -MASK_LOGIT });
        }
    }
    MaskPatch::new(values).expect("784 finite values")
}

/// Semantic logits `scale * onehot(gt) + N(0, sigma)` and one proposal per
/// GT instance (jittered box, rasterized visible mask, score in [0.7, 1]).
///
/// Draw order from `ChaCha8Rng::seed_from_u64(seed)`: all logit noise
/// channel-major, then per instance four jitter values, the score and 784
/// mask-noise values. Nothing is drawn for a zero sigma or zero jitter.
pub fn synthesize_inputs<T: Scalar>(scene: &GtScene, params: &SynthParams) -> Result<SynthInputs<T>> {
    if !(params.logit_scale > 0.0 && params.logit_scale.is_finite()) {
        return Err(invalid(format!("logit scale {} must be positive", params.logit_scale)));
    }
    if !(params.noise_sigma >= 0.0 && params.box_jitter >= 0.0) {
        return Err(invalid("noise and jitter must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let c = scene.categories.len();
    let sem = scene.semantic.as_slice();
    let n = sem.len();
    let mut data = Vec::with_capacity(c * n);
    for k in 0..c {
        for &g in sem {
            let mut v = if g as usize == k { params.logit_scale } else { 0.0 };
            if params.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            data.push(T::from_f64(v));
        }
    }
    let logits = LogitTensor::new(c, scene.spec.height, scene.spec.width, data)?;

    let ids = scene.panoptic.ids();
    let mut proposals = Vec::with_capacity(scene.instances.len());
    for inst in &scene.instances {
        let b = inst.bbox;
        let (bw, bh) = (b.width() as f64, b.height() as f64);
        let mut jitter = |side: f64| {
            if params.box_jitter > 0.0 {
                rng.gen_range(-params.box_jitter..=params.box_jitter) * side
            } else {
                0.0
            }
        };
        let (x0, y0) = (b.col0 as f64 + jitter(bw), b.row0 as f64 + jitter(bh));
        let (x1, y1) = (b.col1 as f64 + jitter(bw), b.row1 as f64 + jitter(bh));
        let bbox = BBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))?;
        let score = rng.gen_range(0.7..=1.0);
        let rect = bbox.rasterize(ids.height(), ids.width());
        let mut mask = rasterize_mask(ids, inst.segment_id, &rect);
        if params.noise_sigma > 0.0 {
            let noisy = mask
                .values()
                .iter()
                .map(|&v| v + noise.sample(&mut rng) as f32)
                .collect();
            mask = MaskPatch::new(noisy)?;
        }
        proposals.push(InstanceProposal {
            bbox,
            category: inst.category,
            score,
            mask,
        });
    }
    Ok(SynthInputs { logits, proposals })
}

/// A stacked-object scene: a large rectangle with a small object in front of
/// it, whose detector mask covers the whole rectangle including the part
/// hidden by the small object.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionCase {
    pub scene: GtScene,
    pub inputs: SynthInputs<f64>,
    /// GT segment id of the small front object.
    pub occluder: u32,
}

pub fn occlusion_case(seed: u64, height: usize, width: usize) -> Result<OcclusionCase> {
    if height < 32 || width < 32 {
        return Err(invalid("occlusion scenes need at least 32x32 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_stuff, n_thing) = (2, 2);
    let big_h = rng.gen_range(24..=height.min(40));
    let big_w = rng.gen_range(24..=width.min(40));
    let row0 = rng.gen_range(0..=height - big_h);
    let col0 = rng.gen_range(0..=width - big_w);
    let small_h = rng.gen_range(6..=12);
    let small_w = rng.gen_range(6..=12);
    let srow0 = row0 + rng.gen_range(1..=big_h - small_h - 1);
    let scol0 = col0 + rng.gen_range(1..=big_w - small_w - 1);
    let big_cat = n_stuff + rng.gen_range(0..n_thing);
    let small_cat = if big_cat == n_stuff { n_stuff + 1 } else { n_stuff };
    let spec = SceneSpec {
        height,
        width,
        n_stuff,
        n_thing,
        seed,
        stuff_sites: (0..3)
            .map(|i| StuffSite {
                row: rng.gen_range(0..height),
                col: rng.gen_range(0..width),
                category: i % n_stuff,
            })
            .collect(),
        instances: vec![
            ThingShape {
                shape: Shape::Rectangle,
                category: big_cat,
                row0,
                col0,
                row1: row0 + big_h,
                col1: col0 + big_w,
            },
            ThingShape {
                shape: if rng.gen_bool(0.5) {
                    Shape::Ellipse
                } else {
                    Shape::Rectangle
                },
                category: small_cat,
                row0: srow0,
                col0: scol0,
                row1: srow0 + small_h,
                col1: scol0 + small_w,
            },
        ],
    };
    let scene = spec.render()?;
    let mut inputs = synthesize_inputs::<f64>(&scene, &SynthParams::clean(4.0))?;
    inputs.proposals[0].mask = MaskPatch::constant(MASK_LOGIT);
    inputs.proposals[0].score = 0.95;
    inputs.proposals[1].score = 0.85;
    let occluder = scene.instances[1].segment_id;
    Ok(OcclusionCase {
        scene,
        inputs,
        occluder,
    })
}
