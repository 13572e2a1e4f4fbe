//! Panoptic quality (PQ = SQ x RQ) and confusion-matrix mIoU.
//!
//! Matching follows the standard panoptic protocol: same-category pairs with
//! IoU > 0.5 match (unique by construction), GT void pixels are removed from
//! the union, unmatched predictions lying mostly on void or same-category
//! crowd regions are ignored, and crowd GT segments never count as FN.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::category::CategorySet;
use crate::error::{invalid, Result};
use crate::panoptic::{PanopticMap, VOID_CATEGORY, VOID_ID};
use crate::tensor::Grid;

pub const MATCH_IOU: f64 = 0.5;

/// Running PQ counters of one category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PqCounts {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PqCounts {
    pub fn merge(&mut self, other: &PqCounts) {
        self.iou_sum += other.iou_sum;
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn participates(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    fn denominator(&self) -> f64 {
        self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64
    }

    pub fn pq(&self) -> f64 {
        let d = self.denominator();
        if d > 0.0 {
            self.iou_sum / d
        } else {
            0.0
        }
    }

    pub fn sq(&self) -> f64 {
        if self.tp > 0 {
            self.iou_sum / self.tp as f64
        } else {
            0.0
        }
    }

    pub fn rq(&self) -> f64 {
        let d = self.denominator();
        if d > 0.0 {
            self.tp as f64 / d
        } else {
            0.0
        }
    }
}

/// Pixel confusion matrix; rows are GT categories, columns predictions, with
/// an extra trailing column for void predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * (n + 1)],
        }
    }

    /// Adds one image. GT-void pixels are skipped.
    pub fn add(&mut self, pred: &Grid<u32>, gt: &Grid<u32>) -> Result<()> {
        if !pred.same_dims(gt) {
            return Err(invalid("semantic maps differ in size"));
        }
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            if g == VOID_CATEGORY {
                continue;
            }
            let g = g as usize;
            if g >= self.n {
                return Err(invalid(format!("GT category {g} outside category set")));
            }
            let col = if (p as usize) < self.n { p as usize } else { self.n };
            self.counts[g * (self.n + 1) + col] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.n + 1) + pred]
    }

    fn gt_total(&self, c: usize) -> u64 {
        (0..=self.n).map(|p| self.get(c, p)).sum()
    }

    /// IoU per category; `None` for categories neither in GT nor predicted.
    pub fn ious(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|c| {
                let gt_total = self.gt_total(c);
                let pred_total: u64 = (0..self.n).map(|g| self.get(g, c)).sum();
                let tp = self.get(c, c);
                let union = gt_total + pred_total - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over categories present in the GT.
    pub fn mean_iou(&self) -> Option<f64> {
        let present: Vec<f64> = self
            .ious()
            .into_iter()
            .enumerate()
            .filter(|&(c, _)| self.gt_total(c) > 0)
            .filter_map(|(_, v)| v)
            .collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouReport {
    pub per_category: Vec<Option<f64>>,
    pub miou: Option<f64>,
}

pub fn miou(pred_sem: &Grid<u32>, gt_sem: &Grid<u32>, categories: &CategorySet) -> Result<MiouReport> {
    let mut cm = ConfusionMatrix::new(categories.len());
    cm.add(pred_sem, gt_sem)?;
    Ok(MiouReport {
        per_category: cm.ious(),
        miou: cm.mean_iou(),
    })
}

/// Per-image statistics: PQ counters per category plus the semantic
/// confusion matrix of the category maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStats {
    pub per_category: Vec<PqCounts>,
    pub confusion: ConfusionMatrix,
}

pub fn match_and_score(
    pred: &PanopticMap,
    gt: &PanopticMap,
    categories: &CategorySet,
) -> Result<ImageStats> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(invalid(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    for (id, s) in pred.segments().iter().chain(gt.segments()) {
        if s.category >= categories.len() {
            return Err(invalid(format!(
                "segment {id} has category {} outside the category set",
                s.category
            )));
        }
    }
    let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&g, &p) in gt.ids().as_slice().iter().zip(pred.ids().as_slice()) {
        if p != VOID_ID {
            *inter.entry((g, p)).or_default() += 1;
        }
    }
    let mut per_category = vec![PqCounts::default(); categories.len()];
    let mut gt_matched = std::collections::BTreeSet::new();
    let mut pred_matched = std::collections::BTreeSet::new();
    for (&(g, p), &count) in &inter {
        if g == VOID_ID {
            continue;
        }
        let gs = &gt.segments()[&g];
        let ps = &pred.segments()[&p];
        if gs.iscrowd || gs.category != ps.category {
            continue;
        }
        let void = inter.get(&(VOID_ID, p)).copied().unwrap_or(0);
        let union = ps.area + gs.area - count - void;
        let iou = count as f64 / union as f64;
        if iou > MATCH_IOU {
            per_category[gs.category].tp += 1;
            per_category[gs.category].iou_sum += iou;
            gt_matched.insert(g);
            pred_matched.insert(p);
        }
    }
    for (g, s) in gt.segments() {
        if !s.iscrowd && !gt_matched.contains(g) {
            per_category[s.category].fn_ += 1;
        }
    }
    for (p, s) in pred.segments() {
        if pred_matched.contains(p) {
            continue;
        }
        let mut ignored = inter.get(&(VOID_ID, *p)).copied().unwrap_or(0);
        for (g, gs) in gt.segments() {
            if gs.iscrowd && gs.category == s.category {
                ignored += inter.get(&(*g, *p)).copied().unwrap_or(0);
            }
        }
        if ignored as f64 / s.area as f64 > 0.5 {
            continue;
        }
        per_category[s.category].fp += 1;
    }
    let mut confusion = ConfusionMatrix::new(categories.len());
    confusion.add(&pred.semantic_map(), &gt.semantic_map())?;
    Ok(ImageStats {
        per_category,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub category_id: u32,
    pub name: String,
    pub isthing: bool,
    #[serde(flatten)]
    pub counts: PqCounts,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_th: f64,
    pub sq_th: f64,
    pub rq_th: f64,
    pub pq_st: f64,
    pub sq_st: f64,
    pub rq_st: f64,
    /// Number of categories averaged in `pq`, `pq_th`, `pq_st`.
    pub n: usize,
    pub n_th: usize,
    pub n_st: usize,
    pub miou: Option<f64>,
    pub images: usize,
    pub per_class: Vec<ClassReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialize")
    }

    /// Builds a report from per-category totals.
    pub fn from_counts(
        totals: &[PqCounts],
        categories: &CategorySet,
        miou: Option<f64>,
        images: usize,
    ) -> Self {
        let mean = |filter: &dyn Fn(usize) -> bool| {
            let picked: Vec<&PqCounts> = totals
                .iter()
                .enumerate()
                .filter(|(k, c)| filter(*k) && c.participates())
                .map(|(_, c)| c)
                .collect();
            let n = picked.len();
            if n == 0 {
                return (0.0, 0.0, 0.0, 0);
            }
            let avg = |f: fn(&PqCounts) -> f64| picked.iter().map(|c| f(c)).sum::<f64>() / n as f64;
            (avg(PqCounts::pq), avg(PqCounts::sq), avg(PqCounts::rq), n)
        };
        let (pq, sq, rq, n) = mean(&|_| true);
        let (pq_th, sq_th, rq_th, n_th) = mean(&|k| categories.is_thing(k));
        let (pq_st, sq_st, rq_st, n_st) = mean(&|k| categories.is_stuff(k));
        let per_class = totals
            .iter()
            .zip(categories.categories())
            .map(|(c, cat)| ClassReport {
                category_id: cat.id,
                name: cat.name.clone(),
                isthing: cat.isthing,
                counts: *c,
                pq: c.pq(),
                sq: c.sq(),
                rq: c.rq(),
            })
            .collect();
        Self {
            pq,
            sq,
            rq,
            pq_th,
            sq_th,
            rq_th,
            pq_st,
            sq_st,
            rq_st,
            n,
            n_th,
            n_st,
            miou,
            images,
            per_class,
        }
    }
}

/// Sums per-image statistics in order and computes the report.
pub fn aggregate(stats: &[ImageStats], categories: &CategorySet) -> EvalReport {
    let mut totals = vec![PqCounts::default(); categories.len()];
    let mut confusion = ConfusionMatrix::new(categories.len());
    for s in stats {
        for (t, c) in totals.iter_mut().zip(&s.per_category) {
            t.merge(c);
        }
        confusion.merge(&s.confusion);
    }
    EvalReport::from_counts(&totals, categories, confusion.mean_iou(), stats.len())
}
