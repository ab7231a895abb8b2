//! Detection matching, precision/recall, COCO-style average precision, and
//! non-maximum suppression.
//!
//! Matching follows the COCO evaluator: detections are ranked by score
//! (ties keep input order), each detection claims the unmatched ground truth
//! of the same image and category with the highest IOU, and the claim counts
//! as a true positive when that IOU is `>=` the threshold. AP uses 101-point
//! interpolation of the precision envelope at recall `0.00, 0.01, ..., 1.00`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{DatasetIndex, LabeledBox};
use crate::geometry::{iou, BBox};

pub const DEFAULT_NMS_MAX_KEPT: usize = 200;
pub const RECALL_POINTS: usize = 101;

/// IOU thresholds `0.50, 0.55, ..., 0.95`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("detection {index}: unknown image id {image_id}")]
    UnknownImage { index: usize, image_id: u64 },
    #[error("detection {index}: unknown category id {category_id}")]
    UnknownCategory { index: usize, category_id: u64 },
    #[error("detection line {line}: {message}")]
    InvalidDetection { line: usize, message: String },
    #[error("invalid detection: {0}")]
    Invalid(String),
    #[error("at least one class is required")]
    NoClasses,
    #[error("IOU threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(
        image_id: u64,
        category_id: u64,
        score: f64,
        bbox: BBox,
    ) -> Result<Self, MetricsError> {
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(MetricsError::Invalid(format!(
                "score {score} outside [0, 1]"
            )));
        }
        if category_id == 0 {
            return Err(MetricsError::Invalid("category id 0 is background".into()));
        }
        Ok(Self {
            image_id,
            category_id,
            score,
            bbox,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    image_id: u64,
    category_id: u64,
    score: f64,
    bbox: [f64; 4],
}

/// Parses JSON lines of `{image_id, category_id, score, bbox: [xmin, ymin, xmax, ymax]}`.
/// Blank lines are ignored; line numbers in errors are 1-based.
pub fn parse_detections_jsonl(text: &str) -> Result<Vec<Detection>, MetricsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |message: String| MetricsError::InvalidDetection {
                line: i + 1,
                message,
            };
            let d: DetectionLine = serde_json::from_str(l).map_err(|e| bad(e.to_string()))?;
            let [x0, y0, x1, y1] = d.bbox;
            let bbox = BBox::new(x0, y0, x1, y1).map_err(|e| bad(e.to_string()))?;
            Detection::new(d.image_id, d.category_id, d.score, bbox).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

pub fn detections_to_jsonl(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let line = DetectionLine {
            image_id: d.image_id,
            category_id: d.category_id,
            score: d.score,
            bbox: d.bbox.to_array(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

/// Indices of `dets` by descending score; equal scores keep input order.
fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Best still-unmatched ground truth for `det`, if it clears the threshold.
/// IOU ties go to the lower ground-truth index.
fn best_match<'a>(
    det: &BBox,
    candidates: impl Iterator<Item = (usize, &'a BBox)>,
    taken: &[bool],
    threshold: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in candidates {
        if taken[g] {
            continue;
        }
        let v = iou(det, gt);
        if v >= threshold && best.is_none_or(|(_, b)| v > b) {
            best = Some((g, v));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Match {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<Match>,
}

/// Greedy matching of one image's detections against its ground truth.
/// A detection only ever matches a ground truth of its own category.
pub fn match_detections(gts: &[LabeledBox], dets: &[Detection], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut matches = Vec::new();
    for d in ranked(dets) {
        let det = &dets[d];
        let candidates = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.category_id == det.category_id)
            .map(|(i, g)| (i, &g.bbox));
        if let Some((g, v)) = best_match(&det.bbox, candidates, &taken, iou_threshold) {
            taken[g] = true;
            matches.push(Match {
                detection: d,
                ground_truth: g,
                iou: v,
            });
        }
    }
    let tp = matches.len();
    MatchResult {
        tp,
        fp: dets.len() - tp,
        fn_: gts.len() - tp,
        matches,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `tp / (tp + fp)`, or 0 when nothing was predicted.
pub fn precision(m: &MatchResult) -> f64 {
    ratio(m.tp, m.tp + m.fp)
}

/// `tp / (tp + fn)`, or 0 when there is no ground truth.
pub fn recall(m: &MatchResult) -> f64 {
    ratio(m.tp, m.tp + m.fn_)
}

/// A ground-truth box tagged with its image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Score of the detection whose inclusion produced this point.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

impl PrCurve {
    pub fn final_recall(&self) -> f64 {
        ratio(self.tp, self.num_gt)
    }

    /// 101-point interpolated AP. Zero when there is no ground truth.
    pub fn interpolated_ap(&self) -> f64 {
        if self.num_gt == 0 || self.points.is_empty() {
            return 0.0;
        }
        let mut envelope: Vec<f64> = self.points.iter().map(|p| p.precision).collect();
        for i in (0..envelope.len() - 1).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let sum: f64 = (0..RECALL_POINTS)
            .map(|k| {
                let r = k as f64 / 100.0;
                let i = self.points.partition_point(|p| p.recall < r);
                envelope.get(i).copied().unwrap_or(0.0)
            })
            .sum();
        sum / RECALL_POINTS as f64
    }
}

/// Builds the precision/recall curve for one category across images by
/// sweeping the score-ranked detections. Detections and ground truths must
/// already be restricted to a single category.
pub fn pr_curve(gts: &[GroundTruth], dets: &[Detection], iou_threshold: f64) -> PrCurve {
    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(dets.len());
    for d in ranked(dets) {
        let det = &dets[d];
        let candidates = by_image
            .get(&det.image_id)
            .into_iter()
            .flatten()
            .map(|&g| (g, &gts[g].bbox));
        match best_match(&det.bbox, candidates, &taken, iou_threshold) {
            Some((g, _)) => {
                taken[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        points.push(PrPoint {
            recall: ratio(tp, gts.len()),
            precision: ratio(tp, tp + fp),
            score: det.score,
        });
    }
    PrCurve {
        points,
        num_gt: gts.len(),
        tp,
        fp,
    }
}

/// 101-point AP for a single category.
pub fn average_precision(gts: &[GroundTruth], dets: &[Detection], iou_threshold: f64) -> f64 {
    pr_curve(gts, dets, iou_threshold).interpolated_ap()
}

/// Mean over classes of `tp / (tp + fp)`; classes without predictions add 0.
pub fn simple_map(per_class: &[(usize, usize)]) -> Result<f64, MetricsError> {
    if per_class.is_empty() {
        return Err(MetricsError::NoClasses);
    }
    let sum: f64 = per_class.iter().map(|&(tp, fp)| ratio(tp, tp + fp)).sum();
    Ok(sum / per_class.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryEval {
    pub category_id: u64,
    pub name: String,
    pub gt_count: usize,
    pub det_count: usize,
    /// AP at each threshold of the sweep; `None` when the category has no
    /// ground truth (such categories are left out of every mean).
    pub ap_per_threshold: Option<Vec<f64>>,
    pub recall_per_threshold: Option<Vec<f64>>,
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    /// Counts at the single matching threshold used for the simplified mAP.
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    pub categories: Vec<CategoryEval>,
    /// Mean over categories of the per-category mean AP over the sweep.
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AR")]
    pub ar: f64,
    /// Mean per-class precision at `simple_map_iou`.
    pub simple_map: f64,
    pub simple_map_iou: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// COCO-style evaluation over IOU `0.50:0.95`, plus the simplified mAP at
/// `simple_map_iou`. Ground truth is [`ImageAnnotation::object_boxes`].
///
/// [`ImageAnnotation::object_boxes`]: crate::annotation::ImageAnnotation::object_boxes
pub fn map_range(
    index: &DatasetIndex,
    dets: &[Detection],
    simple_map_iou: f64,
) -> Result<EvalReport, MetricsError> {
    if !(simple_map_iou > 0.0 && simple_map_iou <= 1.0) {
        return Err(MetricsError::BadThreshold(simple_map_iou));
    }
    let known_images: HashMap<u64, usize> = index
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.image_id, i))
        .collect();
    for (i, d) in dets.iter().enumerate() {
        if !known_images.contains_key(&d.image_id) {
            return Err(MetricsError::UnknownImage {
                index: i,
                image_id: d.image_id,
            });
        }
        if !index.categories.contains_id(d.category_id) {
            return Err(MetricsError::UnknownCategory {
                index: i,
                category_id: d.category_id,
            });
        }
    }

    let mut gts: BTreeMap<u64, Vec<GroundTruth>> = BTreeMap::new();
    for img in &index.images {
        for b in img.object_boxes() {
            gts.entry(b.category_id).or_default().push(GroundTruth {
                image_id: img.image_id,
                bbox: b.bbox,
            });
        }
    }
    let mut per_cat_dets: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        per_cat_dets.entry(d.category_id).or_default().push(*d);
    }

    let thresholds = coco_iou_thresholds();
    let categories: Vec<(u64, String)> = index
        .categories
        .iter()
        .map(|(id, n)| (id, n.to_string()))
        .collect();
    let rows: Vec<CategoryEval> = categories
        .par_iter()
        .map(|(id, name)| {
            let g = gts.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let d = per_cat_dets.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let simple = pr_curve(g, d, simple_map_iou);
            let (ap_t, rc_t) = if g.is_empty() {
                (None, None)
            } else {
                let curves: Vec<PrCurve> = thresholds.iter().map(|&t| pr_curve(g, d, t)).collect();
                (
                    Some(
                        curves
                            .iter()
                            .map(PrCurve::interpolated_ap)
                            .collect::<Vec<_>>(),
                    ),
                    Some(curves.iter().map(PrCurve::final_recall).collect::<Vec<_>>()),
                )
            };
            CategoryEval {
                category_id: *id,
                name: name.clone(),
                gt_count: g.len(),
                det_count: d.len(),
                ap: ap_t.as_ref().map(|v| mean(v.iter().copied())),
                ar: rc_t.as_ref().map(|v| mean(v.iter().copied())),
                ap_per_threshold: ap_t,
                recall_per_threshold: rc_t,
                tp: simple.tp,
                fp: simple.fp,
            }
        })
        .collect();

    let scored: Vec<&CategoryEval> = rows.iter().filter(|c| c.ap.is_some()).collect();
    let map = mean(scored.iter().filter_map(|c| c.ap));
    let ar = mean(scored.iter().filter_map(|c| c.ar));
    let ap50 = mean(
        scored
            .iter()
            .filter_map(|c| c.ap_per_threshold.as_ref().map(|v| v[0])),
    );
    let simple = if scored.is_empty() {
        0.0
    } else {
        simple_map(&scored.iter().map(|c| (c.tp, c.fp)).collect::<Vec<_>>())?
    };
    Ok(EvalReport {
        iou_thresholds: thresholds,
        categories: rows,
        map,
        ap50,
        ar,
        simple_map: simple,
        simple_map_iou,
    })
}

impl EvalReport {
    /// Plain-text table: one summary row in the usual
    /// `Model | AP@[.50:.95] | AR@[.50:.95] | mAP` layout, then per-category rows.
    pub fn to_table(&self, model: &str) -> String {
        let mut s = String::new();
        let w = model.len().max(8);
        s.push_str(&format!(
            "{:<w$}  {:>34}  {:>31}  {:>7}\n",
            "Model", "Average Precision(IOU= 0.50:0.95)", "Average Recall(IOU= 0.50:0.95)", "mAP"
        ));
        s.push_str(&format!(
            "{:<w$}  {:>34.3}  {:>31.3}  {:>7.4}\n",
            model, self.map, self.ar, self.map
        ));
        s.push('\n');
        s.push_str(&format!(
            "{:<20} {:>6} {:>6} {:>8} {:>8} {:>8} {:>6} {:>6}\n",
            "Category", "GT", "Dets", "AP", "AP50", "AR", "TP", "FP"
        ));
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for c in &self.categories {
            s.push_str(&format!(
                "{:<20} {:>6} {:>6} {:>8} {:>8} {:>8} {:>6} {:>6}\n",
                c.name,
                c.gt_count,
                c.det_count,
                opt(c.ap),
                opt(c.ap_per_threshold.as_ref().map(|v| v[0])),
                opt(c.ar),
                c.tp,
                c.fp
            ));
        }
        s.push('\n');
        s.push_str(&format!("AP@0.50: {:.4}\n", self.ap50));
        s.push_str(&format!(
            "Simplified mAP (mean TP/(TP+FP) at IOU {:.2}): {:.4}\n",
            self.simple_map_iou, self.simple_map
        ));
        s
    }
}

/// Greedy non-maximum suppression. Boxes are visited by descending score;
/// a box is dropped when it overlaps an already kept box of the same image
/// and category with IOU `>= iou_threshold`. At most `max_kept` survive.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_kept: usize) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::with_capacity(max_kept.min(dets.len()));
    for i in ranked(dets) {
        if kept.len() >= max_kept {
            break;
        }
        let d = dets[i];
        let suppressed = kept.iter().any(|k| {
            k.image_id == d.image_id
                && k.category_id == d.category_id
                && iou(&k.bbox, &d.bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
