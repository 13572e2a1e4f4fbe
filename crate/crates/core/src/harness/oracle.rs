//! Brute-force PQ: every (prediction, GT) segment pair is scored by a full
//! pixel scan, with no intersection table. Slow on purpose; it checks the
//! indexed evaluator.

use crate::category::CategorySet;
use crate::metrics::{ClassReport, EvalReport, PqCounts};
use crate::panoptic::{PanopticMap, VOID_CATEGORY, VOID_ID};

fn count_pixels(pred: &PanopticMap, gt: &PanopticMap, f: impl Fn(u32, u32) -> bool) -> u64 {
    pred.ids()
        .as_slice()
        .iter()
        .zip(gt.ids().as_slice())
        .filter(|(&p, &g)| f(p, g))
        .count() as u64
}

fn score_image(pred: &PanopticMap, gt: &PanopticMap, counts: &mut [PqCounts]) {
    let preds: Vec<(u32, usize)> = pred.segments().iter().map(|(&i, s)| (i, s.category)).collect();
    let gts: Vec<(u32, usize, bool)> = gt
        .segments()
        .iter()
        .map(|(&i, s)| (i, s.category, s.iscrowd))
        .collect();
    let mut pred_hit = vec![false; preds.len()];
    let mut gt_hit = vec![false; gts.len()];
    for (gi, &(g, gcat, crowd)) in gts.iter().enumerate() {
        if crowd {
            continue;
        }
        for (pi, &(p, pcat)) in preds.iter().enumerate() {
            if pcat != gcat {
                continue;
            }
            let inter = count_pixels(pred, gt, |a, b| a == p && b == g);
            if inter == 0 {
                continue;
            }
            let union = count_pixels(pred, gt, |a, b| (a == p && b != VOID_ID) || b == g);
            let iou = inter as f64 / union as f64;
            if iou > 0.5 {
                assert!(!pred_hit[pi] && !gt_hit[gi], "segment matched twice");
                counts[gcat].tp += 1;
                counts[gcat].iou_sum += iou;
                pred_hit[pi] = true;
                gt_hit[gi] = true;
            }
        }
    }
    for (gi, &(_, gcat, crowd)) in gts.iter().enumerate() {
        if !crowd && !gt_hit[gi] {
            counts[gcat].fn_ += 1;
        }
    }
    for (pi, &(p, pcat)) in preds.iter().enumerate() {
        if pred_hit[pi] {
            continue;
        }
        let area = count_pixels(pred, gt, |a, _| a == p);
        let ignored = count_pixels(pred, gt, |a, b| {
            a == p
                && (b == VOID_ID
                    || gts
                        .iter()
                        .any(|&(g, gcat, crowd)| crowd && g == b && gcat == pcat))
        });
        if 2 * ignored <= area {
            counts[pcat].fp += 1;
        }
    }
}

fn oracle_miou(pairs: &[(&PanopticMap, &PanopticMap)], n: usize) -> Option<f64> {
    let mut ious = Vec::new();
    for c in 0..n as u32 {
        let (mut tp, mut gt_px, mut pred_px) = (0u64, 0u64, 0u64);
        for (pred, gt) in pairs {
            let ps = pred.semantic_map();
            let gs = gt.semantic_map();
            for (&p, &g) in ps.as_slice().iter().zip(gs.as_slice()) {
                if g == VOID_CATEGORY {
                    continue;
                }
                tp += u64::from(p == c && g == c);
                gt_px += u64::from(g == c);
                pred_px += u64::from(p == c);
            }
        }
        if gt_px > 0 {
            ious.push(tp as f64 / (gt_px + pred_px - tp) as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Direct PQ/SQ/RQ over (prediction, GT) pairs.
pub fn oracle_pq(pairs: &[(&PanopticMap, &PanopticMap)], categories: &CategorySet) -> EvalReport {
    let n = categories.len();
    let mut counts = vec![PqCounts::default(); n];
    for (pred, gt) in pairs {
        score_image(pred, gt, &mut counts);
    }
    let class = |c: &PqCounts| {
        let tp = c.tp as f64;
        let denom = tp + c.fp as f64 / 2.0 + c.fn_ as f64 / 2.0;
        let sq = if c.tp == 0 { 0.0 } else { c.iou_sum / tp };
        let rq = if denom == 0.0 { 0.0 } else { tp / denom };
        let pq = if denom == 0.0 { 0.0 } else { c.iou_sum / denom };
        (pq, sq, rq)
    };
    let mut sums = [[0.0f64; 3]; 3];
    let mut ns = [0usize; 3];
    for (k, c) in counts.iter().enumerate() {
        if c.tp + c.fp + c.fn_ == 0 {
            continue;
        }
        let (pq, sq, rq) = class(c);
        for bucket in [Some(0), Some(if categories.is_thing(k) { 1 } else { 2 })]
            .into_iter()
            .flatten()
        {
            sums[bucket][0] += pq;
            sums[bucket][1] += sq;
            sums[bucket][2] += rq;
            ns[bucket] += 1;
        }
    }
    let avg = |b: usize, m: usize| if ns[b] == 0 { 0.0 } else { sums[b][m] / ns[b] as f64 };
    EvalReport {
        pq: avg(0, 0),
        sq: avg(0, 1),
        rq: avg(0, 2),
        pq_th: avg(1, 0),
        sq_th: avg(1, 1),
        rq_th: avg(1, 2),
        pq_st: avg(2, 0),
        sq_st: avg(2, 1),
        rq_st: avg(2, 2),
        n: ns[0],
        n_th: ns[1],
        n_st: ns[2],
        miou: oracle_miou(pairs, n),
        images: pairs.len(),
        per_class: counts
            .iter()
            .zip(categories.categories())
            .map(|(c, cat)| {
                let (pq, sq, rq) = class(c);
                ClassReport {
                    category_id: cat.id,
                    name: cat.name.clone(),
                    isthing: cat.isthing,
                    counts: *c,
                    pq,
                    sq,
                    rq,
                }
            })
            .collect(),
    }
}
