//! Rasterize leaf and disease polygons, assign diseases to leaves and report
//! the damaged fraction of each leaf. Disease masks are written as PGM files
//! under the system temp directory.

use std::collections::BTreeSet;

use canopy::damage::{analyze, leaf_disease_mask, polygon_to_mask, render_pgm, InstanceMask};
use canopy::geometry::{Point, Polygon};

const LEAF: u64 = 1;
const RED_RUST: u64 = 2;

fn instance(category: u64, points: &[(f64, f64)]) -> InstanceMask {
    let poly = Polygon::new(points.iter().map(|&p| Point::from(p)).collect()).unwrap();
    InstanceMask::from_mask(category, 1.0, polygon_to_mask(&poly, 240, 160)).unwrap()
}

fn main() {
    let instances = vec![
        instance(
            LEAF,
            &[(10.0, 10.0), (110.0, 15.0), (105.0, 140.0), (15.0, 130.0)],
        ),
        instance(
            RED_RUST,
            &[(30.0, 30.0), (60.0, 30.0), (60.0, 60.0), (30.0, 60.0)],
        ),
        instance(RED_RUST, &[(50.0, 50.0), (80.0, 50.0), (65.0, 90.0)]),
        instance(
            LEAF,
            &[(130.0, 20.0), (230.0, 20.0), (230.0, 150.0), (130.0, 150.0)],
        ),
        // sticks out of the second leaf, so nobody owns it
        instance(
            RED_RUST,
            &[
                (220.0, 100.0),
                (239.0, 100.0),
                (239.0, 120.0),
                (220.0, 120.0),
            ],
        ),
    ];
    let report = analyze(&instances, LEAF, &BTreeSet::from([RED_RUST])).unwrap();
    for leaf in &report.leaves {
        println!(
            "leaf {}: {} px, diseases {:?} cover {} px -> {:.2}% damaged",
            leaf.leaf, leaf.leaf_area_px, leaf.diseases, leaf.disease_area_px, leaf.damage_pct
        );
    }
    println!("unowned disease instances: {:?}", report.unowned);

    let dir = std::env::temp_dir().join("canopy-leaf-damage");
    std::fs::create_dir_all(&dir).unwrap();
    for leaf in &report.leaves {
        let owned = leaf.diseases.iter().map(|&d| &instances[d]);
        let union = leaf_disease_mask(&instances[leaf.leaf], owned).unwrap();
        let path = dir.join(format!("leaf{}_disease.pgm", leaf.leaf));
        std::fs::write(&path, render_pgm(&union)).unwrap();
        println!("wrote {}", path.display());
    }
}
