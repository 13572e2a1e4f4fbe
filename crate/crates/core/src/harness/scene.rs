use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::CategorySet;
use crate::error::{invalid, Result};
use crate::panoptic::{instance_segment_id, stuff_segment_id, PanopticMap, SegmentLabel};
use crate::tensor::{Grid, PixelRect};

/// Minimum visible area of a generated instance.
pub const MIN_INSTANCE_AREA: usize = 16;
/// Largest allowed IoU between visible boxes of two instances, so that
/// class-agnostic NMS at 0.5 keeps every clean proposal.
pub const MAX_BOX_IOU: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

/// A thing instance: a shape filling (rectangle) or inscribed in (ellipse)
/// its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThingShape {
    pub shape: Shape,
    pub category: usize,
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl ThingShape {
    pub fn rect(&self) -> PixelRect {
        PixelRect {
            row0: self.row0,
            col0: self.col0,
            row1: self.row1,
            col1: self.col1,
        }
    }

    pub fn covers(&self, row: usize, col: usize) -> bool {
        if !self.rect().contains(row, col) {
            return false;
        }
        match self.shape {
            Shape::Rectangle => true,
            Shape::Ellipse => {
                let cy = (self.row0 + self.row1) as f64 / 2.0;
                let cx = (self.col0 + self.col1) as f64 / 2.0;
                let ry = (self.row1 - self.row0) as f64 / 2.0;
                let rx = (self.col1 - self.col0) as f64 / 2.0;
                let dy = (row as f64 + 0.5 - cy) / ry;
                let dx = (col as f64 + 0.5 - cx) / rx;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

/// Voronoi site of the stuff background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StuffSite {
    pub row: usize,
    pub col: usize,
    pub category: usize,
}

/// Complete description of a synthetic scene. Instances are listed back to
/// front: later instances occlude earlier ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_stuff: usize,
    pub n_thing: usize,
    pub seed: u64,
    pub stuff_sites: Vec<StuffSite>,
    pub instances: Vec<ThingShape>,
}

/// Ground truth of one visible instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtInstance {
    pub segment_id: u32,
    pub category: usize,
    /// Bounding box of the visible pixels.
    pub bbox: PixelRect,
    pub area: usize,
}

/// Rendered ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GtScene {
    pub spec: SceneSpec,
    pub categories: CategorySet,
    pub panoptic: PanopticMap,
    /// Category per pixel.
    pub semantic: Grid<u32>,
    /// Visible instances in spec order.
    pub instances: Vec<GtInstance>,
}

impl GtScene {
    pub fn instance_ids(&self) -> Vec<u32> {
        self.instances.iter().map(|i| i.segment_id).collect()
    }
}

fn stuff_layout(spec: &SceneSpec) -> Vec<usize> {
    let mut out = Vec::with_capacity(spec.height * spec.width);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let mut best = (u64::MAX, 0usize);
            for s in &spec.stuff_sites {
                let dr = r.abs_diff(s.row) as u64;
                let dc = c.abs_diff(s.col) as u64;
                let d = dr * dr + dc * dc;
                if d < best.0 {
                    best = (d, s.category);
                }
            }
            out.push(best.1);
        }
    }
    out
}

/// Per-pixel index (1-based) of the front-most instance, 0 for background.
fn owner_canvas(spec: &SceneSpec) -> Vec<u32> {
    let w = spec.width;
    let mut owner = vec![0u32; spec.height * w];
    for (j, inst) in spec.instances.iter().enumerate() {
        paint(&mut owner, w, inst, j as u32 + 1);
    }
    owner
}

fn paint(owner: &mut [u32], width: usize, inst: &ThingShape, tag: u32) {
    for r in inst.row0..inst.row1 {
        for c in inst.col0..inst.col1 {
            if inst.covers(r, c) {
                owner[r * width + c] = tag;
            }
        }
    }
}

fn visible_stats(owner: &[u32], width: usize, inst: &ThingShape, tag: u32) -> (usize, PixelRect) {
    let mut area = 0;
    let mut rect = PixelRect {
        row0: usize::MAX,
        col0: usize::MAX,
        row1: 0,
        col1: 0,
    };
    for r in inst.row0..inst.row1 {
        for c in inst.col0..inst.col1 {
            if owner[r * width + c] == tag {
                area += 1;
                rect.row0 = rect.row0.min(r);
                rect.col0 = rect.col0.min(c);
                rect.row1 = rect.row1.max(r + 1);
                rect.col1 = rect.col1.max(c + 1);
            }
        }
    }
    (area, rect)
}

fn rect_iou(a: &PixelRect, b: &PixelRect) -> f64 {
    let inter = a.intersect(b).area();
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

impl SceneSpec {
    /// Renders the ground truth. Stuff segment ids are `k + 1`, instance `j`
    /// gets `n_stuff + 1 + j`.
    pub fn render(&self) -> Result<GtScene> {
        let categories = CategorySet::synthetic(self.n_stuff, self.n_thing)?;
        if self.n_stuff == 0 || self.stuff_sites.is_empty() {
            return Err(invalid("scenes need at least one stuff category"));
        }
        for inst in &self.instances {
            if !categories.is_thing(inst.category)
                || inst.row1 > self.height
                || inst.col1 > self.width
                || inst.row0 >= inst.row1
                || inst.col0 >= inst.col1
            {
                return Err(invalid(format!("bad instance {inst:?}")));
            }
        }
        let w = self.width;
        let stuff = stuff_layout(self);
        let owner = owner_canvas(self);
        let ids: Vec<u32> = owner
            .iter()
            .zip(&stuff)
            .map(|(&o, &s)| {
                if o == 0 {
                    stuff_segment_id(s)
                } else {
                    instance_segment_id(self.n_stuff, o as usize - 1)
                }
            })
            .collect();
        let mut labels = BTreeMap::new();
        for k in 0..self.n_stuff {
            labels.insert(
                stuff_segment_id(k),
                SegmentLabel {
                    category: k,
                    iscrowd: false,
                },
            );
        }
        let mut instances = Vec::new();
        for (j, inst) in self.instances.iter().enumerate() {
            let id = instance_segment_id(self.n_stuff, j);
            labels.insert(
                id,
                SegmentLabel {
                    category: inst.category,
                    iscrowd: false,
                },
            );
            let (area, bbox) = visible_stats(&owner, w, inst, j as u32 + 1);
            if area > 0 {
                instances.push(GtInstance {
                    segment_id: id,
                    category: inst.category,
                    bbox,
                    area,
                });
            }
        }
        let panoptic = PanopticMap::from_labels(Grid::from_vec(self.height, w, ids)?, &labels)?;
        let semantic = panoptic.semantic_map();
        Ok(GtScene {
            spec: self.clone(),
            categories,
            panoptic,
            semantic,
            instances,
        })
    }
}

/// Largest instance box side for the given image size.
pub fn max_instance_side(height: usize, width: usize) -> usize {
    (height.min(width) / 5).max(4)
}

/// Generates a scene deterministically from `seed`.
///
/// Stuff is a Voronoi layout over `n_stuff` to `2 n_stuff` sites. Instances
/// are rejection-sampled so that every visible area is at least 16 pixels
/// and visible boxes overlap with IoU at most 0.5.
pub fn generate(
    seed: u64,
    height: usize,
    width: usize,
    n_stuff: usize,
    n_thing: usize,
    k_instances: usize,
) -> Result<GtScene> {
    if n_stuff == 0 {
        return Err(invalid("n_stuff must be at least 1"));
    }
    if k_instances > 0 && n_thing == 0 {
        return Err(invalid("instances requested but n_thing is 0"));
    }
    if k_instances > 0 && (height < 4 || width < 4) {
        return Err(invalid(format!("{height}x{width} is too small to place instances")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sites = n_stuff + rng.gen_range(0..=n_stuff);
    let stuff_sites = (0..n_sites)
        .map(|i| StuffSite {
            row: rng.gen_range(0..height.max(1)),
            col: rng.gen_range(0..width.max(1)),
            category: if i < n_stuff { i } else { rng.gen_range(0..n_stuff) },
        })
        .collect();
    let mut spec = SceneSpec {
        height,
        width,
        n_stuff,
        n_thing,
        seed,
        stuff_sites,
        instances: Vec::with_capacity(k_instances),
    };
    let max_side = max_instance_side(height, width).min(height).min(width);
    let mut owner = vec![0u32; height * width];
    let mut stats: Vec<(usize, PixelRect)> = Vec::new();
    for j in 0..k_instances {
        let tag = j as u32 + 1;
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let h = rng.gen_range(4..=max_side);
            let w = rng.gen_range(4..=max_side);
            let row0 = rng.gen_range(0..=height - h);
            let col0 = rng.gen_range(0..=width - w);
            let cand = ThingShape {
                shape: if rng.gen_bool(0.5) {
                    Shape::Ellipse
                } else {
                    Shape::Rectangle
                },
                category: n_stuff + rng.gen_range(0..n_thing),
                row0,
                col0,
                row1: row0 + h,
                col1: col0 + w,
            };
            let rect = cand.rect();
            let saved: Vec<u32> = (rect.row0..rect.row1)
                .flat_map(|r| owner[r * width + rect.col0..r * width + rect.col1].to_vec())
                .collect();
            paint(&mut owner, width, &cand, tag);
            let mut new_stats = stats.clone();
            for (i, s) in new_stats.iter_mut().enumerate() {
                if s.1.intersect(&rect).area() > 0 {
                    *s = visible_stats(&owner, width, &spec.instances[i], i as u32 + 1);
                }
            }
            new_stats.push(visible_stats(&owner, width, &cand, tag));
            // occlusion can shrink earlier boxes, so every pair is rechecked
            let ok = new_stats.iter().all(|s| s.0 >= MIN_INSTANCE_AREA)
                && new_stats.iter().enumerate().all(|(a, sa)| {
                    new_stats[..a]
                        .iter()
                        .all(|sb| rect_iou(&sa.1, &sb.1) <= MAX_BOX_IOU)
                });
            if ok {
                spec.instances.push(cand);
                stats = new_stats;
                placed = true;
                break;
            }
            let rw = rect.width();
            for r in rect.row0..rect.row1 {
                let src = &saved[(r - rect.row0) * rw..(r - rect.row0 + 1) * rw];
                owner[r * width + rect.col0..r * width + rect.col1].copy_from_slice(src);
            }
        }
        if !placed {
            return Err(invalid(format!(
                "could not place instance {j} of {k_instances} in a {height}x{width} image"
            )));
        }
    }
    spec.render()
}
