use std::collections::BTreeMap;

use panoptic_fusion::codec::{
    annotation, decode_png, decode_png_ids, encode_png, map_from_ids, segments_info, PanopticDocument,
    MAX_SEGMENT_ID,
};
use panoptic_fusion::render::{palette, render_png};
use panoptic_fusion::upst::RawTensor;
use panoptic_fusion::{CategorySet, Error, Grid, LogitTensor, PanopticMap, SegmentLabel, VOID_ID};
use proptest::prelude::*;

fn cats() -> CategorySet {
    CategorySet::synthetic(2, 2).unwrap()
}

fn labelled(ids: Grid<u32>) -> PanopticMap {
    let labels: BTreeMap<u32, SegmentLabel> = ids
        .as_slice()
        .iter()
        .filter(|&&id| id != VOID_ID)
        .map(|&id| (id, SegmentLabel { category: (id % 4) as usize, iscrowd: id % 7 == 0 }))
        .collect();
    PanopticMap::from_labels(ids, &labels).unwrap()
}

fn map_strategy() -> impl Strategy<Value = PanopticMap> {
    (1usize..12, 1usize..12, prop::collection::vec(1u32..=MAX_SEGMENT_ID, 1..6)).prop_flat_map(|(h, w, pool)| {
        prop::collection::vec(0..=pool.len(), h * w).prop_map(move |picks| {
            let ids = picks.iter().map(|&i| if i == 0 { VOID_ID } else { pool[i - 1] }).collect();
            labelled(Grid::from_vec(h, w, ids).unwrap())
        })
    })
}

proptest! {
    #[test]
    fn png_round_trip(map in map_strategy()) {
        let png = encode_png(&map).unwrap();
        let info = segments_info(&map, &cats());
        let back = decode_png(&png, &info, &cats()).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn segments_info_survives_json(map in map_strategy()) {
        let info = segments_info(&map, &cats());
        let text = serde_json::to_string(&info).unwrap();
        let back: Vec<panoptic_fusion::codec::SegmentRecord> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, info);
    }
}

#[test]
fn extreme_ids_round_trip() {
    let ids = Grid::from_vec(1, 4, vec![1, 255, 65_536, MAX_SEGMENT_ID]).unwrap();
    let map = labelled(ids.clone());
    assert_eq!(decode_png_ids(&encode_png(&map).unwrap()).unwrap(), ids);
}

#[test]
fn oversized_id_is_rejected() {
    let map = PanopticMap::from_ids_with(Grid::filled(1, 1, MAX_SEGMENT_ID + 1), |_| 0).unwrap();
    assert!(matches!(encode_png(&map), Err(Error::InvalidArgument(_))));
}

#[test]
fn unknown_category_becomes_void() {
    let map = labelled(Grid::from_vec(1, 3, vec![1, 2, 2]).unwrap());
    let png = encode_png(&map).unwrap();
    let mut info = segments_info(&map, &cats());
    info[1].category_id = 99;
    let back = decode_png(&png, &info, &cats()).unwrap();
    assert_eq!(back.ids().as_slice(), &[1, 0, 0]);
    assert!(back.segment(2).is_none());
}

#[test]
fn inconsistent_annotations_error() {
    let map = labelled(Grid::from_vec(1, 3, vec![1, 2, 2]).unwrap());
    let png = encode_png(&map).unwrap();
    let mut info = segments_info(&map, &cats());
    info[1].area = 3;
    assert!(matches!(decode_png(&png, &info, &cats()), Err(Error::Format(_))));

    let missing = &segments_info(&map, &cats())[..1];
    assert!(matches!(decode_png(&png, missing, &cats()), Err(Error::UnknownSegmentIds(_))));
    assert!(decode_png(b"not a png", &[], &cats()).is_err());
}

#[test]
fn rgba_png_decodes_ignoring_alpha() {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, 2, 1);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[1, 0, 0, 255, 2, 1, 0, 0]).unwrap();
    }
    assert_eq!(decode_png_ids(&bytes).unwrap().as_slice(), &[1, 258]);
}

#[test]
fn document_json() {
    let text = r#"{
        "annotations": [{
            "image_id": 3, "file_name": "a.png",
            "segments_info": [{"id": 5, "category_id": 2, "area": 4, "bbox": [0.0, 1.0, 2.4, 2.0], "iscrowd": 1}]
        }],
        "categories": [
            {"id": 1, "name": "sky", "isthing": 0},
            {"id": 2, "name": "car", "isthing": 1}
        ]
    }"#;
    let doc = PanopticDocument::from_json(text).unwrap();
    assert_eq!(doc.annotations[0].segments_info[0].bbox, [0, 1, 2, 2]);
    assert!(doc.categories[1].isthing && !doc.categories[0].isthing);
    assert_eq!(PanopticDocument::from_json(&doc.to_json()).unwrap(), doc);

    let cats = CategorySet::new(doc.categories.clone()).unwrap();
    let ids = Grid::from_vec(2, 3, vec![0, 0, 0, 5, 5, 0]).unwrap();
    let mut info = doc.annotations[0].segments_info.clone();
    info[0].area = 2;
    let map = map_from_ids(ids, &info, &cats).unwrap();
    let ann = annotation(&map, &cats, 3, "a.png");
    assert_eq!(ann.segments_info[0].bbox, [0, 1, 2, 1]);
    assert_eq!(ann.segments_info[0].iscrowd, 1);
}

#[test]
fn upst_round_trip_and_errors() {
    let t = LogitTensor::new(2, 3, 4, (0..24).map(|v| v as f32 * 0.37 - 3.0).collect()).unwrap();
    let raw = RawTensor::from(&t);
    let bytes = raw.to_bytes().unwrap();
    let back = RawTensor::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.into_logits().unwrap(), t);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(RawTensor::from_bytes(&bad).is_err());
    assert!(RawTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let flat = RawTensor { dims: vec![24], data: vec![0.0; 24] };
    assert!(flat.into_logits().is_err());
}

#[test]
fn render_is_stable() {
    let map = labelled(Grid::from_fn(6, 7, |r, c| ((r * 7 + c) % 5) as u32));
    let a = render_png(&map).unwrap();
    assert_eq!(a, render_png(&map).unwrap());
    assert_eq!(palette(VOID_ID), [0, 0, 0]);
    // colours are a function of the id alone
    assert_eq!(palette(1_000_003), palette(1_000_003));
    let colours: std::collections::BTreeSet<[u8; 3]> = (1..200).map(palette).collect();
    assert!(colours.len() > 190);
    assert!((1..200).all(|id| palette(id) != [0, 0, 0]));
}
