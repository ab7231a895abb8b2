//! Score noisy synthetic detections: NMS, COCO-style mAP/AR and the
//! simplified per-class precision mAP, printed as a table.

use canopy::annotation::{build_index, ParsedAnnotation};
use canopy::geometry::BBox;
use canopy::metrics::{map_range, match_detections, nms, precision, recall, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let labels = ["red_rust", "helopeltis", "red_spider_mite"];
    let parses: Vec<ParsedAnnotation> = (0..20)
        .map(|i| ParsedAnnotation {
            file_name: format!("eval_{i:02}.jpg"),
            width: 320,
            height: 240,
            boxes: (0..rng.gen_range(1..4))
                .map(|_| {
                    let x = rng.gen_range(0.0..260.0);
                    let y = rng.gen_range(0.0..180.0);
                    let label = labels[rng.gen_range(0..3)].to_string();
                    (label, BBox::new(x, y, x + 50.0, y + 50.0).unwrap())
                })
                .collect(),
            ..Default::default()
        })
        .collect();
    let index = build_index(parses, Some(&labels.map(String::from))).unwrap();

    // each object is found up to three times with jittered boxes, plus clutter
    let mut dets = Vec::new();
    for img in &index.images {
        for gt in img.object_boxes() {
            for _ in 0..rng.gen_range(0..=3) {
                let j = |v: f64, rng: &mut ChaCha8Rng| v + rng.gen_range(-8.0..8.0);
                let [x0, y0, x1, y1] = gt.bbox.to_array();
                let (x0, y0) = (j(x0, &mut rng).max(0.0), j(y0, &mut rng).max(0.0));
                let b = BBox::new(
                    x0,
                    y0,
                    j(x1, &mut rng).max(x0 + 1.0),
                    j(y1, &mut rng).max(y0 + 1.0),
                )
                .unwrap();
                dets.push(
                    Detection::new(img.image_id, gt.category_id, rng.gen_range(0.3..1.0), b)
                        .unwrap(),
                );
            }
        }
        let x = rng.gen_range(0.0..300.0);
        let clutter = BBox::new(x, 0.0, x + 20.0, 20.0).unwrap();
        dets.push(
            Detection::new(
                img.image_id,
                rng.gen_range(1..=3),
                rng.gen_range(0.0..0.5),
                clutter,
            )
            .unwrap(),
        );
    }

    let kept = nms(&dets, 0.5, 200);
    println!("NMS kept {} of {} detections", kept.len(), dets.len());

    let first = &index.images[0];
    let own: Vec<Detection> = kept
        .iter()
        .filter(|d| d.image_id == first.image_id)
        .copied()
        .collect();
    let m = match_detections(&first.object_boxes(), &own, 0.5);
    println!(
        "{}: tp {} fp {} fn {}, precision {:.3}, recall {:.3}",
        first.file_name,
        m.tp,
        m.fp,
        m.fn_,
        precision(&m),
        recall(&m)
    );

    let report = map_range(&index, &kept, 0.5).unwrap();
    print!("{}", report.to_table("synthetic"));
}
