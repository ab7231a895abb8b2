mod common;

use canopy::annotation::{
    build_index, parse_polygon_json, parse_voc_xml, read_index, validate, write_index,
    ParsedAnnotation,
};
use canopy::geometry::{BBox, Point, Polygon};
use common::voc_xml;
use proptest::prelude::*;

#[test]
fn voc_files_on_disk_build_a_clean_index() {
    let dir = tempfile::tempdir().unwrap();
    let names = common::write_voc_dataset(dir.path(), 25, 3);
    let mut parses = Vec::new();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        parses.push(parse_voc_xml(&text).unwrap());
    }
    let index = build_index(parses, None).unwrap();
    let mut sorted = names.clone();
    sorted.sort();
    let got: Vec<&str> = index.images.iter().map(|i| i.file_name.as_str()).collect();
    assert_eq!(got, sorted);
    assert_eq!(index.image_ids(), (1..=25).collect::<Vec<u64>>());
    assert!(validate(&index).is_empty());
    assert_eq!(read_index(&write_index(&index).unwrap()).unwrap(), index);
}

#[test]
fn voc_and_polygon_sources_merge() {
    let voc = voc_xml(
        "a.jpg",
        100,
        80,
        &[
            ("leaf", [1.0, 2.0, 50.0, 60.0]),
            ("red_rust", [5.0, 5.0, 9.0, 9.0]),
        ],
    );
    let poly = r#"{"shapes":[{"label":"red_rust","points":[[1,1],[20,2],[10,30]],"shape_type":"polygon"},
                            {"label":"leaf","points":[[0,0],[5,5]],"shape_type":"rectangle"}],
                   "imagePath":"b.jpg","imageHeight":40,"imageWidth":40}"#;
    let p = parse_polygon_json(poly).unwrap();
    assert_eq!(p.skipped_shapes, 1);
    let index = build_index(vec![p, parse_voc_xml(&voc).unwrap()], None).unwrap();
    // ids follow sorted file names, not input order
    assert_eq!(index.images[0].file_name, "a.jpg");
    assert_eq!(index.categories.id_of("leaf"), Some(1));
    assert_eq!(index.categories.id_of("red_rust"), Some(2));
    let b = &index.images[1];
    assert_eq!(b.polygons[0].category_id, 2);
    assert_eq!(
        b.object_boxes()[0].bbox,
        BBox::new(1.0, 1.0, 20.0, 30.0).unwrap()
    );
}

fn arb_parse(name: String) -> impl Strategy<Value = ParsedAnnotation> {
    let label = prop::sample::select(vec!["leaf", "red_rust", "helopeltis"]);
    let bx = (label.clone(), 0u32..90, 0u32..90, 1u32..10, 1u32..10).prop_map(|(l, x, y, w, h)| {
        (
            l.to_string(),
            BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap(),
        )
    });
    let tri = (label, 0u32..50, 0u32..50, 1u32..40, 1u32..40).prop_map(|(l, x, y, w, h)| {
        let (x, y, w, h) = (x as f64, y as f64, w as f64, h as f64);
        let p = Polygon::new(vec![
            Point::new(x, y),
            Point::new(x + w, y),
            Point::new(x, y + h),
        ])
        .unwrap();
        (l.to_string(), p)
    });
    (
        prop::collection::vec(bx, 0..5),
        prop::collection::vec(tri, 0..3),
    )
        .prop_map(move |(boxes, polygons)| ParsedAnnotation {
            file_name: name.clone(),
            width: 100,
            height: 100,
            boxes,
            polygons,
            skipped_shapes: 0,
        })
}

proptest! {
    #[test]
    fn combined_index_roundtrips(parses in (1usize..6).prop_flat_map(|n| {
        (0..n).map(|i| arb_parse(format!("img_{i}.png"))).collect::<Vec<_>>()
    })) {
        let index = build_index(parses, None).unwrap();
        prop_assert!(validate(&index).is_empty());
        let json = write_index(&index).unwrap();
        prop_assert_eq!(read_index(&json).unwrap(), index);
    }

    #[test]
    fn category_ids_are_dense_from_one(parses in (1usize..6).prop_flat_map(|n| {
        (0..n).map(|i| arb_parse(format!("img_{i}.png"))).collect::<Vec<_>>()
    })) {
        let index = build_index(parses, None).unwrap();
        let ids: Vec<u64> = index.categories.ids().collect();
        prop_assert_eq!(ids, (1..=index.categories.len() as u64).collect::<Vec<_>>());
    }
}
