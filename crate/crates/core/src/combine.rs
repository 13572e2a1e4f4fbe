//! Heuristic combine baseline: paste instances in confidence order onto a
//! single class-agnostic canvas, fill the rest from the semantic prediction
//! where it predicts stuff, and void everything else.

use std::collections::BTreeMap;

use crate::category::CategorySet;
use crate::error::{invalid, Result};
use crate::fusion::{stuff_area, suppress_small_stuff};
use crate::panoptic::{instance_segment_id, stuff_segment_id, PanopticMap, SegmentLabel, VOID_ID};
use crate::pruning::{prune, InstanceProposal, PrunedSet, PruningConfig};
use crate::tensor::{channel_argmax, Grid, LogitTensor, Scalar};

pub const DEFAULT_OVERLAP: f64 = 0.5;

pub fn combine(
    semantic_pred: &Grid<u32>,
    pruned: &PrunedSet,
    categories: &CategorySet,
    overlap_threshold: f64,
    min_stuff_area: u64,
) -> Result<PanopticMap> {
    let (h, w) = (semantic_pred.height(), semantic_pred.width());
    if let Some(m) = pruned
        .clipped_masks
        .iter()
        .find(|m| m.rect.row1 > h || m.rect.col1 > w)
    {
        return Err(invalid(format!("instance mask {:?} exceeds {h}x{w}", m.rect)));
    }
    let n_stuff = categories.n_stuff();
    let mut ids = vec![VOID_ID; h * w];
    let mut labels = BTreeMap::new();
    for (i, (p, mask)) in pruned.survivors.iter().zip(&pruned.clipped_masks).enumerate() {
        let area = mask.area();
        if area == 0 {
            continue;
        }
        let overlap = mask.pixels().filter(|&(r, c)| ids[r * w + c] != VOID_ID).count();
        if overlap as f64 / area as f64 > overlap_threshold {
            continue;
        }
        let id = instance_segment_id(n_stuff, i);
        for (r, c) in mask.pixels() {
            let q = r * w + c;
            if ids[q] == VOID_ID {
                ids[q] = id;
            }
        }
        labels.insert(
            id,
            SegmentLabel {
                category: p.category,
                iscrowd: false,
            },
        );
    }
    for (id, &s) in ids.iter_mut().zip(semantic_pred.as_slice()) {
        if *id == VOID_ID && categories.is_stuff(s as usize) {
            *id = stuff_segment_id(s as usize);
        }
    }
    for k in 0..n_stuff {
        labels.insert(
            stuff_segment_id(k),
            SegmentLabel {
                category: k,
                iscrowd: false,
            },
        );
    }
    let map = PanopticMap::from_labels(Grid::from_vec(h, w, ids)?, &labels)?;
    suppress_small_stuff(&map, categories, min_stuff_area)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombineConfig {
    pub pruning: PruningConfig,
    pub overlap: f64,
    pub min_stuff_area: u64,
}

impl Default for CombineConfig {
    fn default() -> Self {
        Self {
            pruning: PruningConfig::default(),
            overlap: DEFAULT_OVERLAP,
            min_stuff_area: stuff_area::COCO,
        }
    }
}

/// Semantic argmax, pruning and combine, starting from logits.
pub fn run_combine<T: Scalar>(
    x: &LogitTensor<T>,
    categories: &CategorySet,
    proposals: &[InstanceProposal],
    config: &CombineConfig,
) -> Result<PanopticMap> {
    if x.channels() != categories.len() {
        return Err(invalid(format!(
            "semantic logits have {} channels, category set has {}",
            x.channels(),
            categories.len()
        )));
    }
    for p in proposals {
        p.validate(categories)?;
    }
    let semantic = channel_argmax(x);
    let pruned = prune(proposals, x.height(), x.width(), &config.pruning);
    combine(&semantic, &pruned, categories, config.overlap, config.min_stuff_area)
}
