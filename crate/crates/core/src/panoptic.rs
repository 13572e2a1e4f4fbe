use std::collections::BTreeMap;

use crate::category::CategorySet;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Grid, PixelRect};

/// Segment id reserved for void pixels.
pub const VOID_ID: u32 = 0;

/// Category value marking void pixels in semantic category maps.
pub const VOID_CATEGORY: u32 = u32::MAX;

/// Segment id used for the (single) segment of stuff category `k`.
#[inline]
pub fn stuff_segment_id(category: usize) -> u32 {
    category as u32 + 1
}

/// Segment id used for surviving instance `i`.
#[inline]
pub fn instance_segment_id(n_stuff: usize, instance: usize) -> u32 {
    (n_stuff + 1 + instance) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentInfo {
    /// Index into the [`CategorySet`].
    pub category: usize,
    pub area: u64,
    pub bbox: PixelRect,
    pub iscrowd: bool,
}

/// Per-pixel segment ids plus the segment table.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticMap {
    ids: Grid<u32>,
    segments: BTreeMap<u32, SegmentInfo>,
}

/// Category and crowd flag for a segment id; area and bbox are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLabel {
    pub category: usize,
    pub iscrowd: bool,
}

impl PanopticMap {
    /// Builds a map from pixel ids and labels, deriving areas and boxes.
    /// Labels for ids absent from the pixels are dropped.
    pub fn from_labels(ids: Grid<u32>, labels: &BTreeMap<u32, SegmentLabel>) -> Result<Self> {
        let mut stats: BTreeMap<u32, (u64, PixelRect)> = BTreeMap::new();
        let w = ids.width();
        // ids come in horizontal runs; the table is touched once per run
        for (r, row) in ids.as_slice().chunks(w.max(1)).enumerate() {
            let mut c = 0;
            while c < row.len() {
                let id = row[c];
                let start = c;
                while c < row.len() && row[c] == id {
                    c += 1;
                }
                if id == VOID_ID {
                    continue;
                }
                let e = stats.entry(id).or_insert((
                    0,
                    PixelRect {
                        row0: r,
                        col0: start,
                        row1: r + 1,
                        col1: c,
                    },
                ));
                e.0 += (c - start) as u64;
                e.1.row0 = e.1.row0.min(r);
                e.1.col0 = e.1.col0.min(start);
                e.1.row1 = e.1.row1.max(r + 1);
                e.1.col1 = e.1.col1.max(c);
            }
        }
        let missing: Vec<u32> = stats
            .keys()
            .copied()
            .filter(|id| !labels.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnknownSegmentIds(missing));
        }
        let segments = stats
            .into_iter()
            .map(|(id, (area, bbox))| {
                let l = labels[&id];
                (
                    id,
                    SegmentInfo {
                        category: l.category,
                        area,
                        bbox,
                        iscrowd: l.iscrowd,
                    },
                )
            })
            .collect();
        Ok(Self { ids, segments })
    }

    /// Map where every pixel id is its own category's stuff/thing label
    /// taken from a closure over ids.
    pub fn from_ids_with(ids: Grid<u32>, mut category_of: impl FnMut(u32) -> usize) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for &id in ids.as_slice() {
            if id != VOID_ID {
                labels.entry(id).or_insert_with(|| SegmentLabel {
                    category: category_of(id),
                    iscrowd: false,
                });
            }
        }
        Self::from_labels(ids, &labels)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.ids.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.ids.width()
    }

    pub fn ids(&self) -> &Grid<u32> {
        &self.ids
    }

    pub fn segments(&self) -> &BTreeMap<u32, SegmentInfo> {
        &self.segments
    }

    pub fn segment(&self, id: u32) -> Option<&SegmentInfo> {
        self.segments.get(&id)
    }

    pub fn labels(&self) -> BTreeMap<u32, SegmentLabel> {
        self.segments
            .iter()
            .map(|(&id, s)| {
                (
                    id,
                    SegmentLabel {
                        category: s.category,
                        iscrowd: s.iscrowd,
                    },
                )
            })
            .collect()
    }

    pub fn void_count(&self) -> u64 {
        self.ids.as_slice().iter().filter(|&&id| id == VOID_ID).count() as u64
    }

    /// Category per pixel, [`VOID_CATEGORY`] on void.
    pub fn semantic_map(&self) -> Grid<u32> {
        let data = self
            .ids
            .as_slice()
            .iter()
            .map(|&id| match self.segments.get(&id) {
                Some(s) => s.category as u32,
                None => VOID_CATEGORY,
            })
            .collect();
        Grid::from_vec(self.height(), self.width(), data).expect("same dims")
    }

    /// Rewrites pixel ids through `f` (returning [`VOID_ID`] voids a pixel)
    /// and rebuilds the table with the supplied labels.
    pub fn remap(
        &self,
        mut f: impl FnMut(u32) -> u32,
        labels: &BTreeMap<u32, SegmentLabel>,
    ) -> Result<Self> {
        let data = self.ids.as_slice().iter().map(|&id| f(id)).collect();
        let ids = Grid::from_vec(self.height(), self.width(), data)?;
        Self::from_labels(ids, labels)
    }

    /// Checks the table against the pixels.
    pub fn validate(&self, categories: &CategorySet) -> Result<()> {
        let rebuilt = Self::from_labels(self.ids.clone(), &self.labels())?;
        if rebuilt.segments != self.segments {
            return Err(invalid("segment table disagrees with pixel ids"));
        }
        if let Some((id, s)) = self
            .segments
            .iter()
            .find(|(_, s)| s.category >= categories.len())
        {
            return Err(invalid(format!(
                "segment {id} has category {} outside the category set",
                s.category
            )));
        }
        Ok(())
    }
}
