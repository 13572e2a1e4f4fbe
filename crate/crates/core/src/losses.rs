//! Training-side math of the panoptic head: target construction, the
//! pixel-wise panoptic cross entropy and the RoI cross entropy on 28x28
//! resized semantic crops, each with analytic gradients.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::category::CategorySet;
use crate::error::{invalid, Result};
use crate::fusion::PanopticLogits;
use crate::panoptic::{PanopticMap, VOID_ID};
use crate::tensor::{
    bilinear_resize, bilinear_resize_adjoint, BBox, Grid, LogitTensor, PixelRect, Scalar,
    MASK_SIDE,
};

/// Target label marking pixels excluded from the loss.
pub const IGNORE: u32 = u32::MAX;

pub const DEFAULT_UNKNOWN_RATE: f64 = 0.3;

/// Per-pixel target channel into `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticTarget {
    pub labels: Grid<u32>,
    /// Channel of the unknown class (`n_stuff + K`).
    pub unknown_channel: u32,
    /// Positions (in the instance list) retargeted to unknown, ascending.
    pub unknown_instances: Vec<usize>,
}

/// Number of instances sent to the unknown class: `round(rate * k)`.
pub fn unknown_count(rate: f64, k: usize) -> usize {
    (rate * k as f64).round() as usize
}

/// Builds the target for a `Z` whose instance channels follow
/// `instance_ids` (GT segment ids in box order).
///
/// A uniform sample without replacement of `round(rate * K)` instances is
/// drawn with `ChaCha8Rng::seed_from_u64(seed)` via
/// `rand::seq::index::sample`, and all of their pixels target the unknown
/// channel. Void and crowd pixels are ignored.
pub fn build_target(
    gt_map: &PanopticMap,
    instance_ids: &[u32],
    categories: &CategorySet,
    unknown_rate: f64,
    seed: u64,
) -> Result<PanopticTarget> {
    if !(0.0..=1.0).contains(&unknown_rate) {
        return Err(invalid(format!("unknown rate {unknown_rate} outside [0, 1]")));
    }
    let n_stuff = categories.n_stuff();
    let k = instance_ids.len();
    let mut slot: HashMap<u32, usize> = HashMap::with_capacity(k);
    for (j, &id) in instance_ids.iter().enumerate() {
        if slot.insert(id, j).is_some() {
            return Err(invalid(format!("instance id {id} listed twice")));
        }
    }
    for (id, s) in gt_map.segments() {
        if categories.is_thing(s.category) && !s.iscrowd && !slot.contains_key(id) {
            return Err(invalid(format!(
                "thing segment {id} is missing from the instance list"
            )));
        }
    }
    let n_unknown = unknown_count(unknown_rate, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled: BTreeSet<usize> = rand::seq::index::sample(&mut rng, k, n_unknown)
        .into_iter()
        .collect();
    let unknown_channel = (n_stuff + k) as u32;
    let data = gt_map
        .ids()
        .as_slice()
        .iter()
        .map(|&id| {
            if id == VOID_ID {
                return IGNORE;
            }
            let s = &gt_map.segments()[&id];
            if s.iscrowd {
                IGNORE
            } else if categories.is_stuff(s.category) {
                s.category as u32
            } else {
                let j = slot[&id];
                if sampled.contains(&j) {
                    unknown_channel
                } else {
                    (n_stuff + j) as u32
                }
            }
        })
        .collect();
    Ok(PanopticTarget {
        labels: Grid::from_vec(gt_map.height(), gt_map.width(), data)?,
        unknown_channel,
        unknown_instances: sampled.into_iter().collect(),
    })
}

/// Loss value with its gradient with respect to the logits it was given.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: LogitTensor<f64>,
    /// Pixels that contributed; zero means the loss was defined as 0.
    pub contributing: usize,
}

/// Mean pixel-wise cross entropy over non-ignored pixels.
pub fn pixel_cross_entropy<T: Scalar>(logits: &LogitTensor<T>, labels: &Grid<u32>) -> Result<LossOutput> {
    if labels.height() != logits.height() || labels.width() != logits.width() {
        return Err(invalid("target dims differ from logits"));
    }
    let c = logits.channels();
    let n = logits.plane_len();
    let data = logits.as_slice();
    if let Some(&bad) = labels
        .as_slice()
        .iter()
        .find(|&&l| l != IGNORE && l as usize >= c)
    {
        return Err(invalid(format!("target channel {bad} but logits have {c} channels")));
    }
    let contributing = labels.as_slice().iter().filter(|&&l| l != IGNORE).count();
    let mut grad = vec![0.0f64; c * n];
    if contributing == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            grad: LogitTensor::new(c, logits.height(), logits.width(), grad)?,
            contributing,
        });
    }
    let scale = 1.0 / contributing as f64;
    let mut total = 0.0;
    let mut probs = vec![0.0f64; c];
    for (q, &label) in labels.as_slice().iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        let max = (0..c)
            .map(|k| data[k * n + q].into_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (k, p) in probs.iter_mut().enumerate() {
            *p = (data[k * n + q].into_f64() - max).exp();
            sum += *p;
        }
        let target = label as usize;
        total += sum.ln() - (data[target * n + q].into_f64() - max);
        for (k, p) in probs.iter().enumerate() {
            let onehot = if k == target { 1.0 } else { 0.0 };
            grad[k * n + q] = (p / sum - onehot) * scale;
        }
    }
    Ok(LossOutput {
        loss: total * scale,
        grad: LogitTensor::new(c, logits.height(), logits.width(), grad)?,
        contributing,
    })
}

/// Panoptic head loss: cross entropy of `Z` against the target.
pub fn panoptic_ce<T: Scalar>(z: &PanopticLogits<T>, target: &PanopticTarget) -> Result<LossOutput> {
    pixel_cross_entropy(&z.z, &target.labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiLossOutput {
    pub loss: f64,
    /// Gradient with respect to the cropped logits (`C x rect.h x rect.w`).
    pub grad_crop: LogitTensor<f64>,
    pub rect: PixelRect,
}

/// RoI loss: crop semantic logits to the GT box, resize each channel to
/// 28x28, and take the cross entropy against a 28x28 label patch.
pub fn roi_ce<T: Scalar>(
    semantic_logits: &LogitTensor<T>,
    gt_box: &BBox,
    gt_label_patch: &Grid<u32>,
) -> Result<RoiLossOutput> {
    if gt_label_patch.height() != MASK_SIDE || gt_label_patch.width() != MASK_SIDE {
        return Err(invalid("RoI label patch must be 28x28"));
    }
    let rect = gt_box.rasterize(semantic_logits.height(), semantic_logits.width());
    if rect.is_empty() {
        return Err(invalid(format!("RoI box {gt_box:?} covers no pixel")));
    }
    let (bh, bw) = (rect.height(), rect.width());
    let c = semantic_logits.channels();
    let w = semantic_logits.width();
    let mut planes = Vec::with_capacity(c);
    for k in 0..c {
        let plane = semantic_logits.channel(k);
        let crop = Grid::from_fn(bh, bw, |r, col| {
            plane[(rect.row0 + r) * w + rect.col0 + col].into_f64()
        });
        planes.push(bilinear_resize(&crop, MASK_SIDE, MASK_SIDE)?);
    }
    let resized = LogitTensor::from_planes(&planes)?;
    let out = pixel_cross_entropy(&resized, gt_label_patch)?;
    let grad_planes: Vec<Grid<f64>> = (0..c)
        .map(|k| bilinear_resize_adjoint(&out.grad.plane(k), bh, bw))
        .collect();
    Ok(RoiLossOutput {
        loss: out.loss,
        grad_crop: LogitTensor::from_planes(&grad_planes)?,
        rect,
    })
}
