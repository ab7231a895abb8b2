//! Parse a VOC XML file and a polygon JSON file into one combined index,
//! validate it and print the index JSON.

use canopy::annotation::{build_index, parse_polygon_json, parse_voc_xml, validate, write_index};

const VOC: &str = r#"<annotation>
  <filename>tea_0001.jpg</filename>
  <size><width>640</width><height>480</height><depth>3</depth></size>
  <object><name>red_rust</name><bndbox><xmin>120</xmin><ymin>88</ymin><xmax>190</xmax><ymax>140</ymax></bndbox></object>
  <object><name>helopeltis</name><bndbox><xmin>300</xmin><ymin>210</ymin><xmax>352</xmax><ymax>260</ymax></bndbox></object>
</annotation>"#;

const POLYGONS: &str = r#"{
  "shapes": [
    {"label": "leaf", "points": [[40, 30], [600, 50], [580, 440], [60, 420]], "shape_type": "polygon"},
    {"label": "red_rust", "points": [[200, 200], [260, 205], [240, 270]], "shape_type": "polygon"},
    {"label": "note", "points": [[10, 10], [20, 20]], "shape_type": "rectangle"}
  ],
  "imagePath": "tea_0002.jpg",
  "imageWidth": 640,
  "imageHeight": 480
}"#;

fn main() {
    let voc = parse_voc_xml(VOC).expect("valid VOC");
    let poly = parse_polygon_json(POLYGONS).expect("valid polygon JSON");
    println!("{}: {} boxes", voc.file_name, voc.boxes.len());
    println!(
        "{}: {} polygons, {} non-polygon shapes skipped",
        poly.file_name,
        poly.polygons.len(),
        poly.skipped_shapes
    );

    let index = build_index(vec![voc, poly], None).expect("consistent labels");
    for (id, name) in index.categories.iter() {
        println!("category {id}: {name}");
    }
    let violations = validate(&index);
    println!("{} violations", violations.len());
    println!("{}", write_index(&index).unwrap());
}
