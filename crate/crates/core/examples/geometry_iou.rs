//! Box overlap, ROI corners, leaf/disease containment and box rotation.

use canopy::geometry::{contains_strict, iou, roi_to_coordinates, rotate_box, BBox, Roi};

fn main() {
    let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let b = BBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
    println!("iou({a:?}, {b:?}) = {:.6}", iou(&a, &b));

    // ROIs come out of the segmentation model as [y1, x1, y2, x2]
    let leaf = Roi::from_array([1032.0, 2139.0, 1962.0, 2550.0]).unwrap();
    let corners = roi_to_coordinates(&leaf);
    println!("leaf corners (TL, TR, BR, BL):");
    for p in corners.points() {
        println!("  ({}, {})", p.x, p.y);
    }

    let spot = Roi::from_array([1200.0, 2200.0, 1300.0, 2300.0]).unwrap();
    let edge = Roi::from_array([1900.0, 2500.0, 1962.0, 2540.0]).unwrap();
    println!("spot inside leaf: {}", contains_strict(&leaf, &spot));
    println!(
        "spot touching the leaf's bottom edge: {}",
        contains_strict(&leaf, &edge)
    );

    for angle in [90.0, 45.0, -30.0] {
        let r = rotate_box(
            &BBox::new(10.0, 20.0, 60.0, 40.0).unwrap(),
            angle,
            200.0,
            100.0,
        );
        println!(
            "rotate {angle:>5} deg -> canvas {:.1}x{:.1}, box {:?}",
            r.canvas_w, r.canvas_h, r.bbox
        );
    }
}
