//! Inference-time mask pruning: class-agnostic NMS, a strict score cut, and
//! per-category canvas pasting with intersection-over-self rejection. The
//! surviving list fixes the number and order of instance channels.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::category::CategorySet;
use crate::error::{invalid, Result};
use crate::tensor::{bilinear_resize, BBox, Grid, MaskPatch, PixelRect, Scalar};

/// One detection: box, thing category, confidence and 28x28 mask logits.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceProposal {
    pub bbox: BBox,
    /// Global category index (must be a thing category).
    pub category: usize,
    pub score: f64,
    pub mask: MaskPatch,
}

impl InstanceProposal {
    pub fn validate(&self, categories: &CategorySet) -> Result<()> {
        self.bbox.validate()?;
        if !categories.is_thing(self.category) {
            return Err(invalid(format!(
                "proposal category {} is not a thing category",
                self.category
            )));
        }
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(invalid(format!("proposal score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

/// Wire form of a proposal.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProposalRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    category_id: usize,
    score: f64,
    mask: Vec<f32>,
}

pub fn proposals_from_json(text: &str, categories: &CategorySet) -> Result<Vec<InstanceProposal>> {
    let records: Vec<ProposalRecord> = serde_json::from_str(text)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let [x0, y0, x1, y1] = r.bbox;
            let p = InstanceProposal {
                bbox: BBox::new(x0, y0, x1, y1)?,
                category: r.category_id,
                score: r.score,
                mask: MaskPatch::new(r.mask)?,
            };
            p.validate(categories)
                .map_err(|e| invalid(format!("proposal {i}: {e}")))?;
            Ok(p)
        })
        .collect()
}

pub fn proposals_to_json(proposals: &[InstanceProposal]) -> String {
    let records: Vec<ProposalRecord> = proposals
        .iter()
        .map(|p| ProposalRecord {
            bbox: [p.bbox.x0, p.bbox.y0, p.bbox.x1, p.bbox.y1],
            category_id: p.category,
            score: p.score,
            mask: p.mask.values().to_vec(),
        })
        .collect();
    serde_json::to_string(&records).expect("proposals serialize")
}

/// Resizes a proposal's mask patch onto its rasterized box. `None` when the
/// box covers no pixel of the image.
pub fn resized_mask<T: Scalar>(
    proposal: &InstanceProposal,
    height: usize,
    width: usize,
) -> Option<(PixelRect, Grid<T>)> {
    let rect = proposal.bbox.rasterize(height, width);
    if rect.is_empty() {
        return None;
    }
    let grid = bilinear_resize(&proposal.mask.to_grid::<T>(), rect.height(), rect.width())
        .expect("non-empty dims");
    Some((rect, grid))
}

fn descending_score_order(proposals: &[InstanceProposal]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| proposals[b].score.total_cmp(&proposals[a].score));
    order
}

/// Greedy class-agnostic NMS on box IoU. Output is in descending score order.
pub fn class_agnostic_nms(proposals: &[InstanceProposal], iou_threshold: f64) -> Vec<InstanceProposal> {
    let mut kept: Vec<&InstanceProposal> = Vec::new();
    for i in descending_score_order(proposals) {
        let p = &proposals[i];
        if kept.iter().all(|k| k.bbox.iou(&p.bbox) <= iou_threshold) {
            kept.push(p);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Keeps proposals scoring strictly above `min_score`, sorted by descending score.
pub fn score_filter(proposals: &[InstanceProposal], min_score: f64) -> Vec<InstanceProposal> {
    descending_score_order(proposals)
        .into_iter()
        .filter(|&i| proposals[i].score > min_score)
        .map(|i| proposals[i].clone())
        .collect()
}

/// Binary mask stored over a pixel rectangle in image coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub rect: PixelRect,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn new(rect: PixelRect, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rect.area() {
            return Err(invalid("region mask size mismatch"));
        }
        Ok(Self { rect, bits })
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rect.contains(row, col)
            && self.bits[(row - self.rect.row0) * self.rect.width() + (col - self.rect.col0)]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Image coordinates of set pixels, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.rect.width();
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (self.rect.row0 + i / w, self.rect.col0 + i % w))
    }
}

/// Binarizes `sigmoid(logit) > threshold` for a proposal pasted at image scale.
pub fn binarized_mask(
    proposal: &InstanceProposal,
    height: usize,
    width: usize,
    threshold: f64,
) -> Option<RegionMask> {
    let (rect, grid) = resized_mask::<f64>(proposal, height, width)?;
    let bits = grid
        .as_slice()
        .iter()
        .map(|&v| sigmoid(v) > threshold)
        .collect();
    Some(RegionMask { rect, bits })
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    /// Box covers no image pixel.
    EmptyBox,
    /// Binarized mask has no foreground pixel.
    EmptyMask,
    /// Intersection with the category canvas over own area exceeded the threshold.
    Overlap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discarded {
    /// Position in the list handed to [`canvas_paste`].
    pub index: usize,
    pub reason: DiscardReason,
}

/// Outcome of mask pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedSet {
    /// Surviving proposals; position is the instance id.
    pub survivors: Vec<InstanceProposal>,
    /// Region each survivor actually contributed to its category canvas.
    pub clipped_masks: Vec<RegionMask>,
    pub discarded: Vec<Discarded>,
}

impl PrunedSet {
    pub fn empty() -> Self {
        Self {
            survivors: Vec::new(),
            clipped_masks: Vec::new(),
            discarded: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.survivors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.survivors.is_empty()
    }
}

/// Pastes masks in the given (descending score) order onto one canvas per
/// category.
pub fn canvas_paste(
    proposals: &[InstanceProposal],
    height: usize,
    width: usize,
    overlap_threshold: f64,
    binarize_threshold: f64,
) -> PrunedSet {
    let mut canvases: HashMap<usize, Vec<bool>> = HashMap::new();
    let mut out = PrunedSet::empty();
    for (index, p) in proposals.iter().enumerate() {
        let Some(candidate) = binarized_mask(p, height, width, binarize_threshold) else {
            out.discarded.push(Discarded {
                index,
                reason: DiscardReason::EmptyBox,
            });
            continue;
        };
        let area = candidate.area();
        if area == 0 {
            out.discarded.push(Discarded {
                index,
                reason: DiscardReason::EmptyMask,
            });
            continue;
        }
        let canvas = canvases
            .entry(p.category)
            .or_insert_with(|| vec![false; height * width]);
        let rect = candidate.rect;
        let rw = rect.width();
        let mut overlap = 0usize;
        for (r, c) in candidate.pixels() {
            overlap += usize::from(canvas[r * width + c]);
        }
        if overlap as f64 / area as f64 > overlap_threshold {
            out.discarded.push(Discarded {
                index,
                reason: DiscardReason::Overlap,
            });
            continue;
        }
        let mut clipped = vec![false; rect.area()];
        for (r, c) in candidate.pixels() {
            let cell = &mut canvas[r * width + c];
            if !*cell {
                *cell = true;
                clipped[(r - rect.row0) * rw + (c - rect.col0)] = true;
            }
        }
        out.survivors.push(p.clone());
        out.clipped_masks.push(RegionMask {
            rect,
            bits: clipped,
        });
    }
    out
}

/// Thresholds of the pruning pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruningConfig {
    pub nms_iou: f64,
    pub min_score: f64,
    pub overlap: f64,
    pub binarize: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.5,
            min_score: 0.6,
            overlap: 0.3,
            binarize: 0.5,
        }
    }
}

/// NMS, then score cut, then canvas pasting.
pub fn prune(
    proposals: &[InstanceProposal],
    height: usize,
    width: usize,
    config: &PruningConfig,
) -> PrunedSet {
    let kept = class_agnostic_nms(proposals, config.nms_iou);
    let kept = score_filter(&kept, config.min_score);
    canvas_paste(&kept, height, width, config.overlap, config.binarize)
}
