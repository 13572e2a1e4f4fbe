//! Parameter-free panoptic head.
//!
//! The panoptic logit tensor `Z` has one channel per stuff category (copied
//! from the semantic logits), one channel per surviving instance (semantic
//! thing logits of the instance class inside its box plus its pasted mask
//! logits, both zero outside the box) and optionally a trailing unknown
//! channel `max(X_thing) - max(X_mask)`. Decoding is a per-pixel argmax.

use std::collections::BTreeMap;

use crate::category::CategorySet;
use crate::error::{invalid, Result};
use crate::panoptic::{
    instance_segment_id, stuff_segment_id, PanopticMap, SegmentLabel, VOID_CATEGORY, VOID_ID,
};
use crate::pruning::{prune, resized_mask, InstanceProposal, PrunedSet, PruningConfig};
use crate::tensor::{Grid, LogitTensor, Scalar, PIXEL_BLOCK};

/// `X_mask_i`: the semantic thing channel of the proposal's class inside its
/// rasterized box, zero elsewhere.
pub fn instance_semantic_map<T: Scalar>(
    x: &LogitTensor<T>,
    categories: &CategorySet,
    proposal: &InstanceProposal,
) -> Result<Grid<T>> {
    check_semantic_channels(x, categories)?;
    categories.thing_channel(proposal.category)?;
    let (h, w) = (x.height(), x.width());
    let plane = x.channel(proposal.category);
    let rect = proposal.bbox.rasterize(h, w);
    let mut out = Grid::filled(h, w, T::zero());
    for r in rect.row0..rect.row1 {
        let row = r * w;
        out.as_mut_slice()[row + rect.col0..row + rect.col1]
            .copy_from_slice(&plane[row + rect.col0..row + rect.col1]);
    }
    Ok(out)
}

/// `Y_mask_i`: mask logits resized onto the rasterized box and zero-padded.
/// The flag is `false` when the box covers no pixel (the map is then all zero).
pub fn instance_mask_map<T: Scalar>(
    proposal: &InstanceProposal,
    height: usize,
    width: usize,
) -> (Grid<T>, bool) {
    let mut out = Grid::filled(height, width, T::zero());
    let Some((rect, resized)) = resized_mask::<T>(proposal, height, width) else {
        return (out, false);
    };
    let rw = rect.width();
    for r in rect.row0..rect.row1 {
        let src = &resized.as_slice()[(r - rect.row0) * rw..(r - rect.row0 + 1) * rw];
        out.as_mut_slice()[r * width + rect.col0..r * width + rect.col1].copy_from_slice(src);
    }
    (out, true)
}

fn check_semantic_channels<T: Scalar>(x: &LogitTensor<T>, categories: &CategorySet) -> Result<()> {
    if x.channels() != categories.len() {
        return Err(invalid(format!(
            "semantic logits have {} channels, category set has {}",
            x.channels(),
            categories.len()
        )));
    }
    Ok(())
}

/// Assembled panoptic logits `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticLogits<T = f32> {
    pub z: LogitTensor<T>,
    pub n_stuff: usize,
    pub n_inst: usize,
    pub unknown_enabled: bool,
    /// Proposals defining instance channel order.
    pub survivors: Vec<InstanceProposal>,
}

impl<T: Scalar> PanopticLogits<T> {
    pub fn unknown_channel(&self) -> Option<usize> {
        self.unknown_enabled.then_some(self.n_stuff + self.n_inst)
    }
}

/// Per-pixel maximum over thing channels; zero when there are none.
fn max_thing<T: Scalar>(x: &LogitTensor<T>, categories: &CategorySet) -> Vec<T> {
    let n = x.plane_len();
    if categories.n_thing() == 0 {
        return vec![T::zero(); n];
    }
    let mut out = vec![T::neg_infinity(); n];
    for k in categories.n_stuff()..categories.len() {
        for (m, &v) in out.iter_mut().zip(x.channel(k)) {
            *m = m.max(v);
        }
    }
    out
}

/// Builds `Z` from semantic logits and the pruned instance set.
pub fn build_panoptic_logits<T: Scalar>(
    x: &LogitTensor<T>,
    categories: &CategorySet,
    pruned: &PrunedSet,
    enable_unknown: bool,
) -> Result<PanopticLogits<T>> {
    build_from_survivors(x, categories, &pruned.survivors, enable_unknown)
}

/// As [`build_panoptic_logits`], for an explicit ordered instance list (for
/// example ground-truth instances at training time).
pub fn build_from_survivors<T: Scalar>(
    x: &LogitTensor<T>,
    categories: &CategorySet,
    survivors: &[InstanceProposal],
    enable_unknown: bool,
) -> Result<PanopticLogits<T>> {
    check_semantic_channels(x, categories)?;
    let (h, w) = (x.height(), x.width());
    let n_stuff = categories.n_stuff();
    let n_inst = survivors.len();
    let channels = n_stuff + n_inst + usize::from(enable_unknown);
    if channels == 0 {
        return Err(invalid("panoptic logits would have zero channels"));
    }
    let n = h * w;
    let mut data = Vec::with_capacity(channels * n);
    data.extend_from_slice(&x.as_slice()[..n_stuff * n]);

    let mut max_mask = vec![T::neg_infinity(); n];
    for p in survivors {
        let sem = instance_semantic_map(x, categories, p)?;
        let (mask, _) = instance_mask_map::<T>(p, h, w);
        for ((&a, &b), m) in sem.as_slice().iter().zip(mask.as_slice()).zip(&mut max_mask) {
            data.push(a + b);
            *m = m.max(a);
        }
    }
    if enable_unknown {
        let thing = max_thing(x, categories);
        for (t, m) in thing.into_iter().zip(max_mask) {
            let m = if n_inst == 0 { T::zero() } else { m };
            data.push(t - m);
        }
    }
    Ok(PanopticLogits {
        z: LogitTensor::new(channels, h, w, data)?,
        n_stuff,
        n_inst,
        unknown_enabled: enable_unknown,
        survivors: survivors.to_vec(),
    })
}

/// Builds the decoded map from a per-pixel channel decision, where channels
/// follow the layout of `Z` (`u32::MAX` means void).
fn map_from_channels(
    h: usize,
    w: usize,
    channel: Vec<u32>,
    n_stuff: usize,
    survivors: &[InstanceProposal],
) -> Result<PanopticMap> {
    let n_inst = survivors.len();
    let ids: Vec<u32> = channel
        .into_iter()
        .map(|ch| {
            let ch = ch as usize;
            if ch < n_stuff {
                stuff_segment_id(ch)
            } else if ch < n_stuff + n_inst {
                instance_segment_id(n_stuff, ch - n_stuff)
            } else {
                VOID_ID
            }
        })
        .collect();
    let mut labels = BTreeMap::new();
    for k in 0..n_stuff {
        labels.insert(
            stuff_segment_id(k),
            SegmentLabel {
                category: k,
                iscrowd: false,
            },
        );
    }
    for (i, p) in survivors.iter().enumerate() {
        labels.insert(
            instance_segment_id(n_stuff, i),
            SegmentLabel {
                category: p.category,
                iscrowd: false,
            },
        );
    }
    PanopticMap::from_labels(Grid::from_vec(h, w, ids)?, &labels)
}

/// Per-pixel argmax of `Z` (lowest channel on ties): stuff channels become
/// the image's stuff segments, instance channels the instance segments, the
/// unknown channel void.
pub fn decode<T: Scalar>(z: &PanopticLogits<T>) -> Result<PanopticMap> {
    let t = &z.z;
    let channel = crate::tensor::channel_argmax(t).into_vec();
    map_from_channels(t.height(), t.width(), channel, z.n_stuff, &z.survivors)
}

/// Computes `decode(build_from_survivors(..))` without materializing `Z`.
///
/// Outside its box an instance channel is exactly zero, and the prefix
/// intersections of the instance boxes are nested rectangles, so the first
/// zero-valued instance channel for each pixel is found by walking those
/// rectangles.
pub fn fuse_decode<T: Scalar>(
    x: &LogitTensor<T>,
    categories: &CategorySet,
    survivors: &[InstanceProposal],
    enable_unknown: bool,
) -> Result<PanopticMap> {
    Ok(fuse_decode_impl(x, categories, survivors, enable_unknown, false)?.0)
}

/// With `want_semantic` the pass over the thing channels also yields the
/// full semantic argmax.
fn fuse_decode_impl<T: Scalar>(
    x: &LogitTensor<T>,
    categories: &CategorySet,
    survivors: &[InstanceProposal],
    enable_unknown: bool,
    want_semantic: bool,
) -> Result<(PanopticMap, Option<Grid<u32>>)> {
    check_semantic_channels(x, categories)?;
    for p in survivors {
        categories.thing_channel(p.category)?;
    }
    let (h, w) = (x.height(), x.width());
    let n = h * w;
    let n_stuff = categories.n_stuff();
    let n_inst = survivors.len();
    if n_stuff + n_inst == 0 && !enable_unknown {
        return Err(invalid("panoptic logits would have zero channels"));
    }

    let mut best = vec![T::neg_infinity(); n];
    let mut chan = vec![u32::MAX; n];
    let scan_things = enable_unknown || want_semantic;
    let mut thing = if scan_things {
        vec![T::neg_infinity(); n]
    } else {
        Vec::new()
    };
    let mut semantic = if want_semantic { vec![0u32; n] } else { Vec::new() };
    for start in (0..n).step_by(PIXEL_BLOCK) {
        let end = (start + PIXEL_BLOCK).min(n);
        let (best, chan) = (&mut best[start..end], &mut chan[start..end]);
        for k in 0..n_stuff {
            let kk = k as u32;
            for ((b, c), &v) in best.iter_mut().zip(chan.iter_mut()).zip(&x.channel(k)[start..end]) {
                if v > *b {
                    *b = v;
                    *c = kk;
                }
            }
        }
        if !scan_things {
            continue;
        }
        let thing = &mut thing[start..end];
        if want_semantic {
            let sem = &mut semantic[start..end];
            sem.copy_from_slice(chan);
            for k in n_stuff..categories.len() {
                let kk = k as u32;
                for (((m, s), &b), &v) in thing.iter_mut().zip(sem.iter_mut()).zip(&*best).zip(&x.channel(k)[start..end]) {
                    // stuff channels precede things, so a thing wins only when strictly larger
                    if v > *m {
                        *m = v;
                        if v > b {
                            *s = kk;
                        }
                    }
                }
            }
        } else {
            for k in n_stuff..categories.len() {
                for (m, &v) in thing.iter_mut().zip(&x.channel(k)[start..end]) {
                    *m = m.max(v);
                }
            }
        }
        if categories.n_thing() == 0 {
            thing.fill(T::zero());
        }
    }

    let mut max_mask = if enable_unknown {
        vec![T::neg_infinity(); n]
    } else {
        Vec::new()
    };
    let zero = T::zero();
    let mut all_cover = crate::tensor::PixelRect {
        row0: 0,
        col0: 0,
        row1: h,
        col1: w,
    };
    for (i, p) in survivors.iter().enumerate() {
        let code = (n_stuff + i) as u32;
        let rect = p.bbox.rasterize(h, w);
        // first zero channel for pixels covered by every earlier box
        for r in all_cover.row0..all_cover.row1 {
            for c in all_cover.col0..all_cover.col1 {
                if !rect.contains(r, c) {
                    let q = r * w + c;
                    if zero > best[q] {
                        best[q] = zero;
                        chan[q] = code;
                    }
                }
            }
        }
        all_cover = all_cover.intersect(&rect);
        if let Some((rect, resized)) = resized_mask::<T>(p, h, w) {
            let plane = x.channel(p.category);
            let rw = rect.width();
            for r in rect.row0..rect.row1 {
                let mrow = &resized.as_slice()[(r - rect.row0) * rw..(r - rect.row0 + 1) * rw];
                for (c, &m) in (rect.col0..rect.col1).zip(mrow) {
                    let q = r * w + c;
                    let xm = plane[q];
                    let v = xm + m;
                    if v > best[q] {
                        best[q] = v;
                        chan[q] = code;
                    }
                    if enable_unknown {
                        max_mask[q] = max_mask[q].max(xm);
                    }
                }
            }
        }
    }

    if enable_unknown {
        for r in 0..h {
            for c in 0..w {
                let q = r * w + c;
                let m = if n_inst == 0 || !all_cover.contains(r, c) {
                    max_mask[q].max(zero)
                } else {
                    max_mask[q]
                };
                if thing[q] - m > best[q] {
                    chan[q] = u32::MAX;
                }
            }
        }
    }
    let semantic = if want_semantic {
        Some(Grid::from_vec(h, w, semantic)?)
    } else {
        None
    };
    Ok((map_from_channels(h, w, chan, n_stuff, survivors)?, semantic))
}

/// Resolves each decoded instance's class: keep the detector class unless
/// the semantic majority over the instance's pixels disagrees, exceeds half
/// of them, and is a stuff class; then the pixels join that stuff segment.
pub fn assign_instance_classes(
    map: &PanopticMap,
    survivors: &[InstanceProposal],
    semantic_pred: &Grid<u32>,
    categories: &CategorySet,
) -> Result<PanopticMap> {
    if !semantic_pred.same_dims(map.ids()) {
        return Err(invalid("semantic prediction dims differ from panoptic map"));
    }
    let sem = semantic_pred.as_slice();
    let n_stuff = categories.n_stuff();
    let w = map.width();
    let ids = map.ids().as_slice();
    let mut relabel: BTreeMap<u32, u32> = BTreeMap::new();
    let mut counts = vec![0u64; categories.len()];
    for (i, p) in survivors.iter().enumerate() {
        let id = instance_segment_id(n_stuff, i);
        let Some(seg) = map.segment(id) else { continue };
        counts.iter_mut().for_each(|c| *c = 0);
        let b = seg.bbox;
        for r in b.row0..b.row1 {
            for c in b.col0..b.col1 {
                let q = r * w + c;
                if ids[q] == id {
                    let s = sem[q];
                    if s != VOID_CATEGORY && (s as usize) < counts.len() {
                        counts[s as usize] += 1;
                    }
                }
            }
        }
        let (mode, &freq) = counts
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|(_, &c)| c)
            .expect("non-empty category set");
        if freq == 0 || mode == p.category {
            continue;
        }
        if freq as f64 / seg.area as f64 > 0.5 && categories.is_stuff(mode) {
            relabel.insert(id, stuff_segment_id(mode));
        }
    }
    if relabel.is_empty() {
        return Ok(map.clone());
    }
    let mut labels = map.labels();
    for &target in relabel.values() {
        labels.entry(target).or_insert(SegmentLabel {
            category: (target - 1) as usize,
            iscrowd: false,
        });
    }
    map.remap(|id| relabel.get(&id).copied().unwrap_or(id), &labels)
}

/// Voids stuff segments smaller than `min_area` pixels.
pub fn suppress_small_stuff(
    map: &PanopticMap,
    categories: &CategorySet,
    min_area: u64,
) -> Result<PanopticMap> {
    let small: Vec<u32> = map
        .segments()
        .iter()
        .filter(|(_, s)| categories.is_stuff(s.category) && s.area < min_area)
        .map(|(&id, _)| id)
        .collect();
    if small.is_empty() {
        return Ok(map.clone());
    }
    map.remap(
        |id| if small.contains(&id) { VOID_ID } else { id },
        &map.labels(),
    )
}

/// Stuff-area thresholds used when evaluating on common benchmarks.
pub mod stuff_area {
    pub const COCO: u64 = 4096;
    pub const CITYSCAPES: u64 = 2048;
    pub const INTERNAL: u64 = 2048;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub pruning: PruningConfig,
    pub enable_unknown: bool,
    pub min_stuff_area: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            pruning: PruningConfig::default(),
            enable_unknown: true,
            min_stuff_area: stuff_area::COCO,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub map: PanopticMap,
    pub pruned: PrunedSet,
}

/// Full inference path: pruning, fused decode, instance class assignment and
/// small-stuff suppression.
pub fn run_fusion<T: Scalar>(
    x: &LogitTensor<T>,
    categories: &CategorySet,
    proposals: &[InstanceProposal],
    config: &FusionConfig,
) -> Result<FusionOutput> {
    for p in proposals {
        p.validate(categories)?;
    }
    let pruned = prune(proposals, x.height(), x.width(), &config.pruning);
    let (decoded, semantic) =
        fuse_decode_impl(x, categories, &pruned.survivors, config.enable_unknown, true)?;
    let semantic = semantic.expect("requested");
    let assigned = assign_instance_classes(&decoded, &pruned.survivors, &semantic, categories)?;
    let map = suppress_small_stuff(&assigned, categories, config.min_stuff_area)?;
    Ok(FusionOutput { map, pruned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{BBox, MaskPatch};

    fn cats() -> CategorySet {
        CategorySet::synthetic(2, 2).unwrap()
    }

    fn proposal(b: [f64; 4], category: usize, mask: f32) -> InstanceProposal {
        InstanceProposal {
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            category,
            score: 0.9,
            mask: MaskPatch::constant(mask),
        }
    }

    #[test]
    fn unknown_logit_arithmetic() {
        // one pixel: thing logits 2.0 and 1.0; instance of class 3 sees 0.5
        let x = LogitTensor::<f64>::new(4, 1, 1, vec![0.0, 0.0, 0.5, 2.0]).unwrap();
        let p = proposal([0.0, 0.0, 1.0, 1.0], 2, 1.0);
        let z = build_from_survivors(&x, &cats(), &[p], true).unwrap();
        assert_eq!(z.z.channels(), 4);
        assert_eq!(z.z.at(3, 0, 0), 1.5);
        assert_eq!(z.z.at(2, 0, 0), 1.5);
    }

    #[test]
    fn no_survivors_unknown_is_thing_max() {
        let x = LogitTensor::<f64>::new(4, 1, 2, vec![0.0, 0.0, 1.0, 1.0, 3.0, -2.0, 0.5, -4.0])
            .unwrap();
        let z = build_from_survivors(&x, &cats(), &[], true).unwrap();
        assert_eq!(z.z.channel(2), &[3.0, -2.0]);
    }

    #[test]
    fn instance_category_must_be_thing() {
        let x = LogitTensor::<f64>::zeros(4, 3, 3).unwrap();
        let p = proposal([0.0, 0.0, 2.0, 2.0], 1, 1.0);
        assert!(instance_semantic_map(&x, &cats(), &p).is_err());
        assert!(build_from_survivors(&x, &cats(), &[p], true).is_err());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = LogitTensor::<f64>::zeros(3, 3, 3).unwrap();
        assert!(build_from_survivors(&x, &cats(), &[], true).is_err());
        assert!(fuse_decode(&x, &cats(), &[], true).is_err());
    }

    #[test]
    fn zero_area_box_gives_zero_maps() {
        let x = LogitTensor::<f64>::new(4, 2, 2, (0..16).map(|v| v as f64).collect()).unwrap();
        let p = proposal([0.6, 0.6, 0.9, 0.9], 3, 5.0);
        let sem = instance_semantic_map(&x, &cats(), &p).unwrap();
        assert!(sem.as_slice().iter().all(|&v| v == 0.0));
        let (mask, covered) = instance_mask_map::<f64>(&p, 2, 2);
        assert!(!covered);
        assert!(mask.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_assignment_rules() {
        // 2 stuff (0,1), things 2,3; one instance of 4 pixels in a 2x2 image
        let cats = cats();
        let ids = Grid::from_vec(2, 2, vec![3; 4]).unwrap();
        let survivor = proposal([0.0, 0.0, 2.0, 2.0], 2, 1.0);
        let map = PanopticMap::from_ids_with(ids, |_| 2).unwrap();

        let consistent = Grid::from_vec(2, 2, vec![2, 2, 2, 0]).unwrap();
        let out = assign_instance_classes(&map, std::slice::from_ref(&survivor), &consistent, &cats).unwrap();
        assert_eq!(out, map);

        let stuff_major = Grid::from_vec(2, 2, vec![1, 1, 1, 2]).unwrap();
        let out = assign_instance_classes(&map, std::slice::from_ref(&survivor), &stuff_major, &cats).unwrap();
        assert_eq!(out.segments().len(), 1);
        assert_eq!(out.segment(stuff_segment_id(1)).unwrap().category, 1);
        assert_eq!(out.segment(stuff_segment_id(1)).unwrap().area, 4);

        let thing_major = Grid::from_vec(2, 2, vec![3, 3, 3, 3]).unwrap();
        let out = assign_instance_classes(&map, std::slice::from_ref(&survivor), &thing_major, &cats).unwrap();
        assert_eq!(out, map);

        // exactly half is not a majority
        let half = Grid::from_vec(2, 2, vec![1, 1, 2, 2]).unwrap();
        let out = assign_instance_classes(&map, &[survivor], &half, &cats).unwrap();
        assert_eq!(out, map);
    }

    #[test]
    fn suppress_small_stuff_only_touches_stuff() {
        let cats = cats();
        let ids = Grid::from_vec(1, 4, vec![1, 2, 2, 3]).unwrap();
        let map = PanopticMap::from_ids_with(ids, |id| if id == 3 { 2 } else { id as usize - 1 })
            .unwrap();
        assert_eq!(suppress_small_stuff(&map, &cats, 0).unwrap(), map);
        let out = suppress_small_stuff(&map, &cats, 2).unwrap();
        assert_eq!(out.ids().as_slice(), &[0, 2, 2, 3]);
        let out = suppress_small_stuff(&map, &cats, 2048).unwrap();
        assert_eq!(out.ids().as_slice(), &[0, 0, 0, 3]);
    }
}
