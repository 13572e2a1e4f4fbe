use std::collections::BTreeMap;

use panoptic_fusion::fusion::{
    assign_instance_classes, build_from_survivors, decode, fuse_decode, instance_mask_map,
    instance_semantic_map, run_fusion, suppress_small_stuff, FusionConfig, PanopticLogits,
};
use panoptic_fusion::harness::{generate, synthesize_inputs, SynthParams};
use panoptic_fusion::panoptic::{instance_segment_id, stuff_segment_id};
use panoptic_fusion::pruning::prune;
use panoptic_fusion::tensor::{bilinear_resize, channel_argmax, MASK_SIDE};
use panoptic_fusion::{
    BBox, CategorySet, Grid, InstanceProposal, LogitTensor, MaskPatch, PanopticMap, PruningConfig,
    SegmentLabel, VOID_ID,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn in_box(b: &BBox, r: usize, c: usize) -> bool {
    let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
    b.y0 <= y && y < b.y1 && b.x0 <= x && x < b.x1
}

fn random_logits(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, integer: bool) -> LogitTensor<f64> {
    let data = (0..c * h * w)
        .map(|_| {
            if integer {
                rng.gen_range(-2..=2) as f64
            } else {
                rng.gen_range(-4.0..4.0)
            }
        })
        .collect();
    LogitTensor::new(c, h, w, data).unwrap()
}

fn random_proposal(rng: &mut ChaCha8Rng, cats: &CategorySet, h: usize, w: usize, integer: bool) -> InstanceProposal {
    let x0 = rng.gen_range(-2.0..w as f64);
    let y0 = rng.gen_range(-2.0..h as f64);
    let x1 = x0 + rng.gen_range(0.0..w as f64);
    let y1 = y0 + rng.gen_range(0.0..h as f64);
    let mask = (0..MASK_SIDE * MASK_SIDE)
        .map(|_| {
            if integer {
                rng.gen_range(-2..=2) as f32
            } else {
                rng.gen_range(-6.0..6.0)
            }
        })
        .collect();
    InstanceProposal {
        bbox: BBox::new(x0, y0, x1, y1).unwrap(),
        category: rng.gen_range(cats.n_stuff()..cats.len()),
        score: rng.gen_range(0.0..1.0),
        mask: MaskPatch::new(mask).unwrap(),
    }
}

fn cats() -> CategorySet {
    CategorySet::synthetic(2, 2).unwrap()
}

#[test]
fn semantic_map_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_logits(&mut rng, 4, 6, 7, false);
    let mut p = random_proposal(&mut rng, &cats(), 6, 7, false);
    p.bbox = BBox::new(0.0, 0.0, 7.0, 6.0).unwrap();
    assert_eq!(instance_semantic_map(&x, &cats(), &p).unwrap(), x.plane(p.category));
    p.bbox = BBox::new(2.1, 2.1, 2.4, 2.4).unwrap();
    assert!(instance_semantic_map(&x, &cats(), &p).unwrap().as_slice().iter().all(|&v| v == 0.0));

    for _ in 0..50 {
        let p = random_proposal(&mut rng, &cats(), 6, 7, false);
        let got = instance_semantic_map(&x, &cats(), &p).unwrap();
        for r in 0..6 {
            for c in 0..7 {
                let want = if in_box(&p.bbox, r, c) { x.at(p.category, r, c) } else { 0.0 };
                assert_eq!(*got.get(r, c), want);
            }
        }
    }
}

#[test]
fn mask_map_cases() {
    let mut p = random_proposal(&mut ChaCha8Rng::seed_from_u64(2), &cats(), 9, 9, false);
    p.bbox = BBox::new(0.0, 0.0, 9.0, 9.0).unwrap();
    p.mask = MaskPatch::constant(2.5);
    let (m, covered) = instance_mask_map::<f64>(&p, 9, 9);
    assert!(covered && m.as_slice().iter().all(|&v| v == 2.5));
    p.mask = MaskPatch::constant(0.0);
    assert!(instance_mask_map::<f64>(&p, 9, 9).0.as_slice().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let p = random_proposal(&mut rng, &cats(), 20, 30, false);
        let (got, covered) = instance_mask_map::<f64>(&p, 20, 30);
        let rect = p.bbox.rasterize(20, 30);
        assert_eq!(covered, !rect.is_empty());
        let resized = (!rect.is_empty())
            .then(|| bilinear_resize(&p.mask.to_grid::<f64>(), rect.height(), rect.width()).unwrap());
        for r in 0..20 {
            for c in 0..30 {
                let want = match &resized {
                    Some(g) if in_box(&p.bbox, r, c) => *g.get(r - rect.row0, c - rect.col0),
                    _ => 0.0,
                };
                assert_eq!(*got.get(r, c), want);
            }
        }
    }
}

#[test]
fn build_matches_hand_rolled_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_logits(&mut rng, 4, 8, 8, false);
    let p = InstanceProposal {
        bbox: BBox::new(1.2, 2.7, 6.0, 7.5).unwrap(),
        category: 3,
        score: 0.9,
        mask: MaskPatch::new((0..784).map(|i| ((i * 37) % 13) as f32 - 6.0).collect()).unwrap(),
    };
    let z = build_from_survivors(&x, &cats(), std::slice::from_ref(&p), true).unwrap();
    assert_eq!(z.z.channels(), 4);
    // rows 3..7 (centers 3.5..6.5 in [2.7, 7.5)), cols 1..6 (centers 1.5..5.5 in [1.2, 6.0))
    let patch = bilinear_resize(&p.mask.to_grid::<f64>(), 4, 5).unwrap();
    for r in 0..8 {
        for c in 0..8 {
            let inside = (3..7).contains(&r) && (1..6).contains(&c);
            let (xm, ym) = if inside {
                (x.at(3, r, c), *patch.get(r - 3, c - 1))
            } else {
                (0.0, 0.0)
            };
            assert_eq!(z.z.at(0, r, c), x.at(0, r, c));
            assert_eq!(z.z.at(1, r, c), x.at(1, r, c));
            assert_eq!(z.z.at(2, r, c), xm + ym);
            let unknown = x.at(2, r, c).max(x.at(3, r, c)) - xm;
            assert_eq!(z.z.at(3, r, c), unknown);
        }
    }
}

#[test]
fn zero_survivors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_logits(&mut rng, 4, 5, 6, false);
    let z = build_from_survivors(&x, &cats(), &[], true).unwrap();
    for r in 0..5 {
        for c in 0..6 {
            assert_eq!(z.z.at(2, r, c), x.at(2, r, c).max(x.at(3, r, c)));
        }
    }
    let z = build_from_survivors(&x, &cats(), &[], false).unwrap();
    assert_eq!(z.z.channels(), 2);
    let stuff = LogitTensor::new(2, 5, 6, x.as_slice()[..60].to_vec()).unwrap();
    let map = decode(&z).unwrap();
    let want = channel_argmax(&stuff);
    for (&id, &k) in map.ids().as_slice().iter().zip(want.as_slice()) {
        assert_eq!(id, stuff_segment_id(k as usize));
    }
}

#[test]
fn dominant_instance_owns_its_region() {
    let x = LogitTensor::new(4, 6, 6, vec![0.0; 144]).unwrap();
    let p = InstanceProposal {
        bbox: BBox::new(1.0, 1.0, 4.0, 4.0).unwrap(),
        category: 2,
        score: 0.9,
        mask: MaskPatch::constant(5.0),
    };
    let map = decode(&build_from_survivors(&x, &cats(), &[p], true).unwrap()).unwrap();
    for r in 0..6 {
        for c in 0..6 {
            let inside = (1..4).contains(&r) && (1..4).contains(&c);
            assert_eq!(*map.ids().get(r, c) == instance_segment_id(2, 0), inside);
        }
    }
}

#[test]
fn decode_matches_argmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n_inst in 0..4 {
        let survivors: Vec<_> = (0..n_inst)
            .map(|_| random_proposal(&mut rng, &cats(), 7, 9, false))
            .collect();
        let z = random_logits(&mut rng, 2 + n_inst + 1, 7, 9, true);
        let logits = PanopticLogits {
            z: z.clone(),
            n_stuff: 2,
            n_inst,
            unknown_enabled: true,
            survivors: survivors.clone(),
        };
        let map = decode(&logits).unwrap();
        for q in 0..63 {
            let mut best = 0;
            for k in 1..z.channels() {
                if z.as_slice()[k * 63 + q] > z.as_slice()[best * 63 + q] {
                    best = k;
                }
            }
            let want = if best < 2 {
                best as u32 + 1
            } else if best < 2 + n_inst {
                (best + 1) as u32
            } else {
                VOID_ID
            };
            assert_eq!(map.ids().as_slice()[q], want);
            if want != VOID_ID {
                let cat = map.segment(want).unwrap().category;
                let expect = if best < 2 { best } else { survivors[best - 2].category };
                assert_eq!(cat, expect);
            }
        }
    }
}

fn labelled(h: usize, w: usize, ids: Vec<u32>, labels: &[(u32, usize)]) -> PanopticMap {
    let labels: BTreeMap<_, _> = labels
        .iter()
        .map(|&(id, category)| (id, SegmentLabel { category, iscrowd: false }))
        .collect();
    PanopticMap::from_labels(Grid::from_vec(h, w, ids).unwrap(), &labels).unwrap()
}

#[test]
fn class_assignment_rules() {
    // indices 0..3 stuff, 3..10 things; instance segment id 4 covers the first 10 pixels
    let cats = CategorySet::synthetic(3, 7).unwrap();
    let ids: Vec<u32> = (0..20).map(|i| if i < 10 { 4 } else { 1 }).collect();
    let map = labelled(4, 5, ids, &[(4, 7), (1, 0)]);
    let det = InstanceProposal {
        bbox: BBox::new(0.0, 0.0, 5.0, 2.0).unwrap(),
        category: 7,
        score: 0.9,
        mask: MaskPatch::constant(6.0),
    };
    let sem = |mode: u32, count: usize| {
        Grid::from_vec(4, 5, (0..20).map(|i| if i < count { mode } else { 7 }).collect::<Vec<u32>>()).unwrap()
    };
    let survivors = std::slice::from_ref(&det);
    let same = assign_instance_classes(&map, survivors, &sem(7, 0), &cats).unwrap();
    assert_eq!(same, map);

    let merged = assign_instance_classes(&map, survivors, &sem(2, 6), &cats).unwrap();
    assert!(merged.segment(4).is_none());
    assert_eq!(merged.segment(3).unwrap().area, 10);
    assert_eq!(merged.segment(3).unwrap().category, 2);

    let thing = assign_instance_classes(&map, survivors, &sem(9, 8), &cats).unwrap();
    assert_eq!(thing.segment(4).unwrap().category, 7);

    // exactly half is not a majority
    let half = assign_instance_classes(&map, survivors, &sem(2, 5), &cats).unwrap();
    assert_eq!(half, map);
}

#[test]
fn small_stuff_suppression() {
    let cats = CategorySet::synthetic(2, 1).unwrap();
    let ids: Vec<u32> = (0..100).map(|i| if i < 10 { 1 } else if i < 60 { 2 } else { 3 }).collect();
    let map = labelled(10, 10, ids, &[(1, 0), (2, 1), (3, 2)]);
    assert_eq!(suppress_small_stuff(&map, &cats, 0).unwrap(), map);
    let out = suppress_small_stuff(&map, &cats, 2048).unwrap();
    assert_eq!(out.void_count(), 60);
    assert!(out.segment(3).is_some());

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (h, w) = (rng.gen_range(40..90), rng.gen_range(40..90));
        let ids: Vec<u32> = (0..h * w).map(|q| ((q / 997) % 6) as u32).collect();
        let labels: Vec<(u32, usize)> = (1..6).map(|id| (id, rng.gen_range(0..3))).collect();
        let map = labelled(h, w, ids, &labels);
        let out = suppress_small_stuff(&map, &cats, 4096).unwrap();
        for (&before, &after) in map.ids().as_slice().iter().zip(out.ids().as_slice()) {
            let drop = before != VOID_ID && {
                let s = &map.segments()[&before];
                cats.is_stuff(s.category) && s.area < 4096
            };
            assert_eq!(after, if drop { VOID_ID } else { before });
        }
    }
}

fn case_strategy() -> impl Strategy<Value = (u64, bool, bool)> {
    (0u64..100_000, any::<bool>(), any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fast_decode_equals_decode_of_build((seed, integer, unknown) in case_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_stuff, n_thing) = (rng.gen_range(0..3), rng.gen_range(1..3));
        let cats = CategorySet::synthetic(n_stuff, n_thing).unwrap();
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let x = random_logits(&mut rng, cats.len(), h, w, integer);
        let survivors: Vec<_> = (0..rng.gen_range(0..5))
            .map(|_| random_proposal(&mut rng, &cats, h, w, integer))
            .collect();
        if n_stuff + survivors.len() == 0 && !unknown {
            prop_assert!(fuse_decode(&x, &cats, &survivors, unknown).is_err());
            return Ok(());
        }
        let z = build_from_survivors(&x, &cats, &survivors, unknown).unwrap();
        prop_assert_eq!(fuse_decode(&x, &cats, &survivors, unknown).unwrap(), decode(&z).unwrap());
    }

    #[test]
    fn build_invariants((seed, integer, unknown) in case_strategy(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cats = CategorySet::synthetic(rng.gen_range(1..3), rng.gen_range(1..3)).unwrap();
        let (h, w) = (rng.gen_range(1..10), rng.gen_range(1..10));
        let x = random_logits(&mut rng, cats.len(), h, w, integer);
        let survivors: Vec<_> = (0..rng.gen_range(0..4))
            .map(|_| random_proposal(&mut rng, &cats, h, w, integer))
            .collect();
        let z = build_from_survivors(&x, &cats, &survivors, unknown).unwrap();
        let n = h * w;
        prop_assert_eq!(&z.z.as_slice()[..cats.n_stuff() * n], &x.as_slice()[..cats.n_stuff() * n]);

        if unknown {
            let u = z.unknown_channel().unwrap();
            for r in 0..h {
                for c in 0..w {
                    if survivors.iter().all(|p| !in_box(&p.bbox, r, c)) {
                        let thing = (cats.n_stuff()..cats.len()).map(|k| x.at(k, r, c)).fold(f64::NEG_INFINITY, f64::max);
                        prop_assert_eq!(z.z.at(u, r, c), thing);
                    }
                }
            }
        }

        let map = decode(&z).unwrap();
        for &id in map.ids().as_slice() {
            prop_assert!(id == VOID_ID || map.segment(id).is_some());
        }
        let mut shifted = z.clone();
        shifted.z = LogitTensor::new(z.z.channels(), h, w, z.z.as_slice().iter().map(|v| v + shift).collect()).unwrap();
        let moved = decode(&shifted).unwrap();
        // rounding may merge near-equal channels into a tie, never reorder them
        let channel_of = |id: u32| match id {
            VOID_ID => z.z.channels() - 1,
            id => id as usize - 1,
        };
        for q in 0..n {
            let (a, b) = (map.ids().as_slice()[q], moved.ids().as_slice()[q]);
            if a != b {
                let sz = shifted.z.as_slice();
                prop_assert_eq!(sz[channel_of(a) * n + q], sz[channel_of(b) * n + q]);
            }
        }
    }

    #[test]
    fn clean_inputs_reproduce_ground_truth(seed in 0u64..10_000, scale in 0.5f64..20.0) {
        let gt = generate(seed, 48, 48, 2, 2, 6).unwrap();
        let inputs = synthesize_inputs::<f64>(&gt, &SynthParams::clean(scale)).unwrap();
        let pruned = prune(&inputs.proposals, 48, 48, &PruningConfig::default());
        prop_assert_eq!(pruned.len(), gt.instances.len());
        let map = fuse_decode(&inputs.logits, &gt.categories, &pruned.survivors, true).unwrap();
        // map survivor ids back to GT ids through the shared proposal boxes
        let mut rename = BTreeMap::new();
        for (i, p) in pruned.survivors.iter().enumerate() {
            let j = inputs.proposals.iter().position(|q| q == p).unwrap();
            rename.insert(instance_segment_id(2, i), gt.instances[j].segment_id);
        }
        let renamed: Vec<u32> = map.ids().as_slice().iter().map(|id| *rename.get(id).unwrap_or(id)).collect();
        prop_assert_eq!(renamed.as_slice(), gt.panoptic.ids().as_slice());
    }
}

#[test]
fn run_fusion_on_clean_scene_matches_ground_truth_partition() {
    let gt = generate(77, 64, 64, 3, 2, 8).unwrap();
    let inputs = synthesize_inputs::<f32>(&gt, &SynthParams::clean(4.0)).unwrap();
    let config = FusionConfig {
        min_stuff_area: 0,
        ..FusionConfig::default()
    };
    let out = run_fusion(&inputs.logits, &gt.categories, &inputs.proposals, &config).unwrap();
    assert!(out.pruned.discarded.is_empty());
    let areas = |m: &PanopticMap| {
        let mut v: Vec<(usize, u64)> = m.segments().values().map(|s| (s.category, s.area)).collect();
        v.sort_unstable();
        v
    };
    assert_eq!(areas(&out.map), areas(&gt.panoptic));
}
