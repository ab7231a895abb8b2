//! Reference implementations used only by tests. They share no code with the
//! library: IOU by counting grid cells, AP by brute force over integer
//! recall levels, point-in-polygon by ray crossing, CRC-32C bit by bit.
#![allow(dead_code)]

use canopy::annotation::{build_index, DatasetIndex, ParsedAnnotation};
use canopy::geometry::BBox;
use canopy::metrics::Detection;
use rand::Rng;

/// Integer box `[xmin, ymin, xmax, ymax]`.
pub type IBox = [i64; 4];

pub fn bbox(b: IBox) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64).unwrap()
}

fn cells(b: IBox) -> impl Iterator<Item = (i64, i64)> {
    (b[0]..b[2]).flat_map(move |x| (b[1]..b[3]).map(move |y| (x, y)))
}

fn covers(b: IBox, (x, y): (i64, i64)) -> bool {
    b[0] <= x && x < b[2] && b[1] <= y && y < b[3]
}

/// `(intersection, union)` cell counts.
pub fn grid_counts(a: IBox, b: IBox) -> (i64, i64) {
    let inter = cells(a).filter(|&c| covers(b, c)).count() as i64;
    let area = |r: IBox| cells(r).count() as i64;
    (inter, area(a) + area(b) - inter)
}

pub fn grid_iou(a: IBox, b: IBox) -> f64 {
    let (i, u) = grid_counts(a, b);
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

pub fn random_ibox(rng: &mut impl Rng, extent: i64) -> IBox {
    let x0 = rng.gen_range(0..extent);
    let y0 = rng.gen_range(0..extent);
    let x1 = rng.gen_range(x0 + 1..=extent);
    let y1 = rng.gen_range(y0 + 1..=extent);
    [x0, y0, x1, y1]
}

/// Rectangle overlap by corner arithmetic, for scenes too large to grid-count.
pub fn rect_counts(a: IBox, b: IBox) -> (i64, i64) {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0);
    let area = |r: IBox| (r[2] - r[0]) * (r[3] - r[1]);
    (w * h, area(a) + area(b) - w * h)
}

/// `iou >= pct / 100` decided in integers.
pub fn iou_at_least(a: IBox, b: IBox, pct: i64) -> bool {
    let (i, u) = rect_counts(a, b);
    100 * i >= pct * u
}

#[derive(Debug, Clone)]
pub struct SceneDet {
    pub image: usize,
    pub category: u64,
    pub score: f64,
    pub bbox: IBox,
}

/// A small evaluation problem on 100x100 images with integer boxes.
#[derive(Debug, Clone)]
pub struct Scene {
    pub categories: usize,
    /// `gts[image]` = list of `(category, box)`
    pub gts: Vec<Vec<(u64, IBox)>>,
    pub dets: Vec<SceneDet>,
}

fn jitter(rng: &mut impl Rng, b: IBox) -> IBox {
    let mut j = |v: i64| (v + rng.gen_range(-3..=3)).clamp(0, 100);
    let (mut x0, mut y0, mut x1, mut y1) = (j(b[0]), j(b[1]), j(b[2]), j(b[3]));
    if x1 <= x0 {
        (x0, x1) = (x0.min(99), x0.min(99) + 1);
    }
    if y1 <= y0 {
        (y0, y1) = (y0.min(99), y0.min(99) + 1);
    }
    [x0, y0, x1, y1]
}

impl Scene {
    /// Up to 5 images, 3 categories, at most 6 ground truths and 8
    /// detections per category per image. Scores are drawn from a coarse
    /// grid so ties occur; about half the detections are jittered copies of
    /// a ground truth so many IOUs land near the thresholds.
    pub fn random(rng: &mut impl Rng) -> Scene {
        let images = rng.gen_range(1..=5);
        let categories = 3;
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for image in 0..images {
            let mut img = Vec::new();
            for c in 1..=categories as u64 {
                let n_gt = rng.gen_range(0..=6);
                let boxes: Vec<IBox> = (0..n_gt).map(|_| random_ibox(rng, 100)).collect();
                img.extend(boxes.iter().map(|&b| (c, b)));
                for _ in 0..rng.gen_range(0..=8) {
                    let b = if !boxes.is_empty() && rng.gen_bool(0.6) {
                        let src = boxes[rng.gen_range(0..boxes.len())];
                        jitter(rng, src)
                    } else {
                        random_ibox(rng, 100)
                    };
                    dets.push(SceneDet {
                        image,
                        category: c,
                        score: rng.gen_range(0..=10) as f64 / 10.0,
                        bbox: b,
                    });
                }
            }
            gts.push(img);
        }
        // interleave categories and images in the input order
        let n = dets.len();
        for i in (1..n).rev() {
            dets.swap(i, rng.gen_range(0..=i));
        }
        Scene {
            categories,
            gts,
            dets,
        }
    }

    pub fn image_name(i: usize) -> String {
        format!("img{i:03}.jpg")
    }

    pub fn category_names(&self) -> Vec<String> {
        (1..=self.categories).map(|c| format!("class{c}")).collect()
    }

    /// Library index. Image `i` gets id `i + 1` because names sort in order.
    pub fn index(&self) -> DatasetIndex {
        let names = self.category_names();
        let parses = self
            .gts
            .iter()
            .enumerate()
            .map(|(i, objs)| ParsedAnnotation {
                file_name: Scene::image_name(i),
                width: 100,
                height: 100,
                boxes: objs
                    .iter()
                    .map(|&(c, b)| (names[c as usize - 1].clone(), bbox(b)))
                    .collect(),
                ..Default::default()
            })
            .collect();
        build_index(parses, Some(&names)).unwrap()
    }

    pub fn detections(&self) -> Vec<Detection> {
        self.dets
            .iter()
            .map(|d| Detection::new(d.image as u64 + 1, d.category, d.score, bbox(d.bbox)).unwrap())
            .collect()
    }
}

/// Per-category oracle result.
#[derive(Debug, Clone)]
pub struct OracleCategory {
    pub num_gt: usize,
    pub ap: Vec<f64>,
    pub final_recall: Vec<f64>,
    pub tp_fp: Vec<(usize, usize)>,
}

/// Hit flags of detections of `category`, ranked by descending score with
/// input order breaking ties, matched greedily per image at `pct` percent.
fn ranked_hits(scene: &Scene, category: u64, pct: i64) -> Vec<bool> {
    let mut order: Vec<&SceneDet> = scene
        .dets
        .iter()
        .filter(|d| d.category == category)
        .collect();
    // insertion sort: stable by construction
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && order[j - 1].score < order[j].score {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used: Vec<Vec<bool>> = scene.gts.iter().map(|g| vec![false; g.len()]).collect();
    order
        .iter()
        .map(|d| {
            let mut best: Option<(usize, i64, i64)> = None; // (gt index, inter, union)
            for (g, &(c, gb)) in scene.gts[d.image].iter().enumerate() {
                if c != category || used[d.image][g] || !iou_at_least(d.bbox, gb, pct) {
                    continue;
                }
                let (i, u) = rect_counts(d.bbox, gb);
                // strictly larger IOU replaces, compared as cross products
                if best.is_none_or(|(_, bi, bu)| i * bu > bi * u) {
                    best = Some((g, i, u));
                }
            }
            if let Some((g, _, _)) = best {
                used[d.image][g] = true;
                true
            } else {
                false
            }
        })
        .collect()
}

/// 101-point AP straight from the definition: at recall level `k/100`, take
/// the best precision among all prefixes whose recall reaches it.
pub fn ap101(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut prefixes = Vec::new();
    let mut tp = 0usize;
    for (n, &h) in hits.iter().enumerate() {
        tp += h as usize;
        prefixes.push((tp, n + 1));
    }
    let mut sum = 0.0;
    for k in 0..=100usize {
        let best = prefixes
            .iter()
            .filter(|&&(tp, _)| 100 * tp >= k * num_gt)
            .map(|&(tp, n)| tp as f64 / n as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// Area under the interpolated precision envelope, integrated exactly.
pub fn staircase_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut prefixes = Vec::new();
    let mut tp = 0usize;
    for (n, &h) in hits.iter().enumerate() {
        tp += h as usize;
        prefixes.push((tp, n + 1));
    }
    // recall steps up by 1/num_gt at every hit; on (r_{j-1}, r_j] the
    // envelope is the best precision with at least j true positives
    (1..=tp)
        .map(|j| {
            prefixes
                .iter()
                .filter(|&&(t, _)| t >= j)
                .map(|&(t, n)| t as f64 / n as f64)
                .fold(0.0, f64::max)
                / num_gt as f64
        })
        .sum()
}

pub fn oracle_category(scene: &Scene, category: u64, simple_pct: i64) -> OracleCategory {
    let num_gt = scene
        .gts
        .iter()
        .flatten()
        .filter(|(c, _)| *c == category)
        .count();
    let mut ap = Vec::new();
    let mut final_recall = Vec::new();
    for pct in (50..=95).step_by(5) {
        let hits = ranked_hits(scene, category, pct);
        ap.push(ap101(&hits, num_gt));
        let tp = hits.iter().filter(|&&h| h).count();
        final_recall.push(if num_gt == 0 {
            0.0
        } else {
            tp as f64 / num_gt as f64
        });
    }
    let hits = ranked_hits(scene, category, simple_pct);
    let tp = hits.iter().filter(|&&h| h).count();
    OracleCategory {
        num_gt,
        ap,
        final_recall,
        tp_fp: vec![(tp, hits.len() - tp)],
    }
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub categories: Vec<OracleCategory>,
    pub map: f64,
    pub ar: f64,
    pub ap50: f64,
    pub simple_map: f64,
}

fn avg(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Means are taken over categories with at least one ground truth.
pub fn oracle_report(scene: &Scene, simple_pct: i64) -> OracleReport {
    let categories: Vec<OracleCategory> = (1..=scene.categories as u64)
        .map(|c| oracle_category(scene, c, simple_pct))
        .collect();
    let present: Vec<&OracleCategory> = categories.iter().filter(|c| c.num_gt > 0).collect();
    let map = avg(&present.iter().map(|c| avg(&c.ap)).collect::<Vec<_>>());
    let ar = avg(&present
        .iter()
        .map(|c| avg(&c.final_recall))
        .collect::<Vec<_>>());
    let ap50 = avg(&present.iter().map(|c| c.ap[0]).collect::<Vec<_>>());
    let simple_map = avg(&present
        .iter()
        .map(|c| {
            let (tp, fp) = c.tp_fp[0];
            if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            }
        })
        .collect::<Vec<_>>());
    OracleReport {
        categories,
        map,
        ar,
        ap50,
        simple_map,
    }
}

/// Even-odd point-in-polygon test by casting a ray towards +x.
pub fn pnpoly(vertices: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = vertices.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = vertices[i];
        let (xj, yj) = vertices[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// CRC-32C (Castagnoli), reflected, one bit at a time.
pub fn crc32c_bitwise(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        crc ^= byte as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0x82F6_3B78
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

pub fn masked_bitwise(data: &[u8]) -> u32 {
    crc32c_bitwise(data)
        .rotate_right(15)
        .wrapping_add(0xa282_ead8)
}

/// A valid example with 0..6 boxes and up to 64 image bytes.
pub fn random_payload(rng: &mut impl Rng, i: usize) -> canopy::record::ExamplePayload {
    use canopy::record::{BoxRecord, ExamplePayload};
    let (width, height) = (rng.gen_range(1..=640u32), rng.gen_range(1..=480u32));
    let n = rng.gen_range(0..6);
    let mut boxes = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let xmin = rng.gen_range(0.0..width as f64 - 0.5);
        let ymin = rng.gen_range(0.0..height as f64 - 0.5);
        boxes.push(BoxRecord {
            category_id: rng.gen_range(1..=4),
            xmin,
            ymin,
            xmax: rng.gen_range(xmin + 0.25..=width as f64),
            ymax: rng.gen_range(ymin + 0.25..=height as f64),
        });
        labels.push(
            ["red rust", "helopeltis", "red spider mite", "leaf"][rng.gen_range(0..4)].to_string(),
        );
    }
    let len = rng.gen_range(0..64);
    ExamplePayload {
        file_name: format!("IMG_{i:05}.jpg"),
        width,
        height,
        image_bytes: (0..len).map(|_| rng.gen()).collect(),
        boxes,
        labels,
    }
}

/// Random simple-or-not polygon with 3..=12 vertices spilling slightly past
/// a `size`x`size` grid. Consecutive duplicates are avoided.
pub fn random_polygon(rng: &mut impl Rng, size: f64) -> Vec<(f64, f64)> {
    let n = rng.gen_range(3..=12);
    let mut v: Vec<(f64, f64)> = Vec::with_capacity(n);
    while v.len() < n {
        let p = if rng.gen_bool(0.3) {
            // integer and half-integer vertices exercise exact hits on
            // pixel centres and edges
            let s = size as i64;
            (
                rng.gen_range(-4..=s + 4) as f64,
                rng.gen_range(-8..=2 * s + 8) as f64 / 2.0,
            )
        } else {
            (
                rng.gen_range(-4.0..size + 4.0),
                rng.gen_range(-4.0..size + 4.0),
            )
        };
        if v.last() != Some(&p) && (v.len() + 1 < n || v.first() != Some(&p)) {
            v.push(p);
        }
    }
    v
}

pub fn voc_xml(file_name: &str, width: u32, height: u32, objects: &[(&str, [f64; 4])]) -> String {
    let mut s = format!(
        "<annotation>\n  <folder>leaves</folder>\n  <filename>{file_name}</filename>\n  \
         <size><width>{width}</width><height>{height}</height><depth>3</depth></size>\n"
    );
    for (name, [x0, y0, x1, y1]) in objects {
        s.push_str(&format!(
            "  <object><name>{name}</name><pose>Unspecified</pose><truncated>0</truncated><difficult>0</difficult>\
             <bndbox><xmin>{x0}</xmin><ymin>{y0}</ymin><xmax>{x1}</xmax><ymax>{y1}</ymax></bndbox></object>\n"
        ));
    }
    s.push_str("</annotation>\n");
    s
}

pub const DISEASES: [&str; 3] = ["red_rust", "helopeltis", "red_spider_mite"];

/// Writes `n` VOC files with 1..=4 random integer boxes each on 200x150
/// images. Returns the file names.
pub fn write_voc_dataset(dir: &std::path::Path, n: usize, seed: u64) -> Vec<String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let name = format!("tea_{i:05}.jpg");
            let objects: Vec<(&str, [f64; 4])> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let x0 = rng.gen_range(0..180) as f64;
                    let y0 = rng.gen_range(0..130) as f64;
                    let x1 = x0 + rng.gen_range(5..=20) as f64;
                    let y1 = y0 + rng.gen_range(5..=20) as f64;
                    (DISEASES[rng.gen_range(0..3)], [x0, y0, x1, y1])
                })
                .collect();
            std::fs::write(
                dir.join(format!("tea_{i:05}.xml")),
                voc_xml(&name, 200, 150, &objects),
            )
            .unwrap();
            name
        })
        .collect()
}
