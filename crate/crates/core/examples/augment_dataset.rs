//! Plan and apply the rotate + crop expansion on a small synthetic dataset.

use canopy::annotation::{build_index, ParsedAnnotation};
use canopy::augment::{expand_index, plan, AugmentConfig};
use canopy::geometry::BBox;

fn main() {
    let parses = (0..6)
        .map(|i| ParsedAnnotation {
            file_name: format!("tea_{i:02}.jpg"),
            width: 400,
            height: 300,
            boxes: vec![
                (
                    "red_rust".into(),
                    BBox::new(40.0 + 10.0 * i as f64, 50.0, 120.0, 110.0).unwrap(),
                ),
                (
                    "helopeltis".into(),
                    BBox::new(200.0, 150.0, 260.0, 220.0).unwrap(),
                ),
            ],
            ..Default::default()
        })
        .collect();
    let index = build_index(parses, None).unwrap();

    let config = AugmentConfig::default();
    let p = plan(&index, 42, &config).unwrap();
    for item in &p.items {
        println!(
            "image {}: rotate {:>8.3} deg, crop window {:?}",
            item.image_id, item.angle, item.window
        );
    }
    let (expanded, summary) = expand_index(&index, &p, &config).unwrap();
    println!("{summary:?}");
    for img in expanded.images.iter().take(3) {
        println!(
            "{} ({}x{}): {} boxes",
            img.file_name,
            img.width,
            img.height,
            img.boxes.len()
        );
    }

    let right = AugmentConfig {
        right_angles_only: true,
        ..AugmentConfig::default()
    };
    let angles: Vec<f64> = plan(&index, 42, &right)
        .unwrap()
        .items
        .iter()
        .map(|i| i.angle)
        .collect();
    println!("right-angle mode draws {angles:?}");
}
