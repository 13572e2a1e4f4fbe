//! COCO-panoptic interchange: RGB PNGs with `id = R + 256 G + 256^2 B` and
//! JSON annotations carrying `segments_info`.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::category::{Category, CategorySet};
use crate::error::{invalid, Error, Result};
use crate::panoptic::{PanopticMap, SegmentLabel, VOID_ID};
use crate::tensor::Grid;

/// Largest encodable segment id.
pub const MAX_SEGMENT_ID: u32 = (1 << 24) - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: u32,
    pub category_id: u32,
    pub area: u64,
    /// `[x, y, width, height]`
    #[serde(deserialize_with = "int_quad")]
    pub bbox: [u64; 4],
    #[serde(default)]
    pub iscrowd: u8,
}

fn int_quad<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<[u64; 4], D::Error> {
    let v = <[f64; 4]>::deserialize(d)?;
    Ok(v.map(|x| x.max(0.0).round() as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticAnnotation {
    pub image_id: u64,
    pub file_name: String,
    pub segments_info: Vec<SegmentRecord>,
}

/// A COCO-panoptic JSON document (only the fields this crate uses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticDocument {
    pub annotations: Vec<PanopticAnnotation>,
    pub categories: Vec<Category>,
}

impl PanopticDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serialize")
    }
}

pub fn encode_png(map: &PanopticMap) -> Result<Vec<u8>> {
    let ids = map.ids();
    if let Some(&bad) = ids.as_slice().iter().find(|&&id| id > MAX_SEGMENT_ID) {
        return Err(invalid(format!("segment id {bad} does not fit in 24 bits")));
    }
    let mut rgb = Vec::with_capacity(ids.as_slice().len() * 3);
    for &id in ids.as_slice() {
        rgb.extend_from_slice(&id.to_le_bytes()[..3]);
    }
    write_rgb_png(ids.width(), ids.height(), &rgb)
}

pub(crate) fn write_rgb_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(rgb)?;
    }
    Ok(out)
}

/// Decodes pixel ids of an 8-bit RGB (or RGBA, alpha ignored) PNG.
pub fn decode_png_ids(bytes: &[u8]) -> Result<Grid<u32>> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("expected 8-bit PNG, got {:?}", info.bit_depth)));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::Format(format!("expected RGB PNG, got {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut ids = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..w * stride].chunks_exact(stride) {
            ids.push(u32::from(px[0]) | u32::from(px[1]) << 8 | u32::from(px[2]) << 16);
        }
    }
    Grid::from_vec(h, w, ids)
}

/// Inverse of [`encode_png`]. Segments whose `category_id` is not in the
/// category set are treated as void. Pixel ids missing from `segments_info`
/// are an error, as are areas that disagree with the pixels.
pub fn decode_png(
    bytes: &[u8],
    segments_info: &[SegmentRecord],
    categories: &CategorySet,
) -> Result<PanopticMap> {
    let ids = decode_png_ids(bytes)?;
    map_from_ids(ids, segments_info, categories)
}

pub fn map_from_ids(
    ids: Grid<u32>,
    segments_info: &[SegmentRecord],
    categories: &CategorySet,
) -> Result<PanopticMap> {
    let mut labels = BTreeMap::new();
    let mut voided = Vec::new();
    for s in segments_info {
        match categories.index_of_id(s.category_id) {
            Some(category) => {
                labels.insert(
                    s.id,
                    SegmentLabel {
                        category,
                        iscrowd: s.iscrowd != 0,
                    },
                );
            }
            None => voided.push(s.id),
        }
    }
    let ids = if voided.is_empty() {
        ids
    } else {
        let data = ids
            .as_slice()
            .iter()
            .map(|id| if voided.contains(id) { VOID_ID } else { *id })
            .collect();
        Grid::from_vec(ids.height(), ids.width(), data)?
    };
    let map = PanopticMap::from_labels(ids, &labels)?;
    for s in segments_info {
        if let Some(seg) = map.segment(s.id) {
            if seg.area != s.area {
                return Err(Error::Format(format!(
                    "segment {} declares area {} but covers {} pixels",
                    s.id, s.area, seg.area
                )));
            }
        }
    }
    Ok(map)
}

pub fn segments_info(map: &PanopticMap, categories: &CategorySet) -> Vec<SegmentRecord> {
    map.segments()
        .iter()
        .map(|(&id, s)| SegmentRecord {
            id,
            category_id: categories.get(s.category).map_or(0, |c| c.id),
            area: s.area,
            bbox: [
                s.bbox.col0 as u64,
                s.bbox.row0 as u64,
                s.bbox.width() as u64,
                s.bbox.height() as u64,
            ],
            iscrowd: u8::from(s.iscrowd),
        })
        .collect()
}

pub fn annotation(
    map: &PanopticMap,
    categories: &CategorySet,
    image_id: u64,
    file_name: impl Into<String>,
) -> PanopticAnnotation {
    PanopticAnnotation {
        image_id,
        file_name: file_name.into(),
        segments_info: segments_info(map, categories),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats() -> CategorySet {
        CategorySet::synthetic(1, 1).unwrap()
    }

    #[test]
    fn all_void_is_black() {
        let map = PanopticMap::from_ids_with(Grid::filled(2, 3, 0u32), |_| 0).unwrap();
        let png = encode_png(&map).unwrap();
        let ids = decode_png_ids(&png).unwrap();
        assert!(ids.as_slice().iter().all(|&v| v == 0));
    }

    #[test]
    fn id_one_is_red_one() {
        let map = PanopticMap::from_ids_with(Grid::filled(1, 1, 1u32), |_| 0).unwrap();
        let png = encode_png(&map).unwrap();
        let mut reader = png::Decoder::new(&png[..]).read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        reader.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..3], &[1, 0, 0]);
    }

    #[test]
    fn oversized_id_rejected() {
        let map = PanopticMap::from_ids_with(Grid::filled(1, 1, 1u32 << 24), |_| 0).unwrap();
        assert!(encode_png(&map).is_err());
    }

    #[test]
    fn missing_segment_info_listed() {
        let map = PanopticMap::from_ids_with(Grid::from_vec(1, 3, vec![1, 9, 4]).unwrap(), |_| 0)
            .unwrap();
        let png = encode_png(&map).unwrap();
        let info = vec![SegmentRecord {
            id: 1,
            category_id: 1,
            area: 1,
            bbox: [0, 0, 1, 1],
            iscrowd: 0,
        }];
        match decode_png(&png, &info, &cats()).unwrap_err() {
            Error::UnknownSegmentIds(ids) => assert_eq!(ids, vec![4, 9]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_category_normalized_to_void() {
        let map = PanopticMap::from_ids_with(Grid::from_vec(1, 2, vec![1, 2]).unwrap(), |_| 0)
            .unwrap();
        let png = encode_png(&map).unwrap();
        let info = vec![
            SegmentRecord { id: 1, category_id: 1, area: 1, bbox: [0, 0, 1, 1], iscrowd: 0 },
            SegmentRecord { id: 2, category_id: 99, area: 1, bbox: [1, 0, 1, 1], iscrowd: 0 },
        ];
        let out = decode_png(&png, &info, &cats()).unwrap();
        assert_eq!(out.ids().as_slice(), &[1, 0]);
    }

    #[test]
    fn area_mismatch_rejected() {
        let map = PanopticMap::from_ids_with(Grid::filled(1, 2, 1u32), |_| 0).unwrap();
        let png = encode_png(&map).unwrap();
        let info = vec![SegmentRecord { id: 1, category_id: 1, area: 5, bbox: [0, 0, 2, 1], iscrowd: 0 }];
        assert!(decode_png(&png, &info, &cats()).is_err());
    }

    #[test]
    fn malformed_png_rejected() {
        assert!(decode_png_ids(b"not a png").is_err());
    }

    #[test]
    fn float_bbox_accepted() {
        let json = r#"{"id":3,"category_id":1,"area":4,"bbox":[1.0,2.0,2.0,2.0],"iscrowd":0}"#;
        let r: SegmentRecord = serde_json::from_str(json).unwrap();
        assert_eq!(r.bbox, [1, 2, 2, 2]);
    }
}
