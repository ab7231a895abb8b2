//! Seeded rotation and crop augmentation of annotations.
//!
//! Every source image gets exactly two variants: one rotated copy and one
//! cropped copy. Planning draws all random numbers up front from a single
//! ChaCha8 stream, so a plan is a pure function of `(index, seed, config)`;
//! applying a plan involves no randomness at all.
//!
//! Only geometry is transformed here. Resampling image pixels is left to
//! whatever raster tool consumes the plan file.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{DatasetIndex, ImageAnnotation, LabeledBox, LabeledPolygon};
use crate::geometry::{crop_box, BBox, Point, Rotation};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("image {image_id}: crop window {window:?} is not inside the {width}x{height} image")]
    WindowOutside {
        image_id: u64,
        window: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("plan references unknown image id {0}")]
    UnknownImage(u64),
    #[error("augmented file name {0:?} collides with an existing image")]
    NameCollision(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Rotation angles are drawn uniformly from `[lo, hi)` degrees.
    pub angle_range: [f64; 2],
    /// Draw angles from {-180, -90, 90} instead of a continuous range.
    pub right_angles_only: bool,
    /// Crop side lengths, as fractions of the image side, drawn uniformly
    /// from this range. The lower bound may not go below 0.5 so that every
    /// window keeps at least a quarter of the image.
    pub crop_side_range: [f64; 2],
    /// A box survives a crop only if this fraction of its area remains.
    pub min_kept_fraction: f64,
    /// Extra crop draws allowed when no box survives the first one.
    pub max_retries: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            angle_range: [-180.0, 180.0],
            right_angles_only: false,
            crop_side_range: [0.5, 1.0],
            min_kept_fraction: 0.3,
            max_retries: 10,
        }
    }
}

impl AugmentConfig {
    pub fn check(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Config(m.to_string()));
        let [alo, ahi] = self.angle_range;
        if !(alo.is_finite() && ahi.is_finite() && -180.0 <= alo && alo < ahi && ahi <= 180.0) {
            return bad("angle_range must satisfy -180 <= lo < hi <= 180");
        }
        let [clo, chi] = self.crop_side_range;
        if !(0.5 <= clo && clo <= chi && chi <= 1.0) {
            return bad("crop_side_range must satisfy 0.5 <= lo <= hi <= 1");
        }
        if !(0.0..=1.0).contains(&self.min_kept_fraction) {
            return bad("min_kept_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanItem {
    pub image_id: u64,
    pub angle: f64,
    /// `[xmin, ymin, xmax, ymax]`, integer-aligned.
    pub window: [f64; 4],
    /// Set when no sampled window kept any box and the full image was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate_crop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub seed: u64,
    pub items: Vec<PlanItem>,
}

impl AugmentPlan {
    pub const VARIANTS_PER_IMAGE: usize = 2;

    pub fn variant_count(&self) -> usize {
        self.items.len() * Self::VARIANTS_PER_IMAGE
    }

    /// Originals plus variants.
    pub fn total_images(&self) -> usize {
        self.items.len() + self.variant_count()
    }
}

fn sample_angle(rng: &mut ChaCha8Rng, config: &AugmentConfig) -> f64 {
    if config.right_angles_only {
        [-180.0, -90.0, 90.0][rng.gen_range(0..3)]
    } else {
        rng.gen_range(config.angle_range[0]..config.angle_range[1])
    }
}

fn sample_window(rng: &mut ChaCha8Rng, ann: &ImageAnnotation, config: &AugmentConfig) -> BBox {
    let [lo, hi] = config.crop_side_range;
    let mut side = |len: u32| -> (u32, u32) {
        let f = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        let size = ((f * len as f64).ceil() as u32).clamp(1, len);
        let start = rng.gen_range(0..=len - size);
        (start, size)
    };
    let (x0, w) = side(ann.width);
    let (y0, h) = side(ann.height);
    BBox::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64)
        .expect("window has positive size")
}

/// Draws one rotation angle and one crop window per image, in image-id order.
pub fn plan(
    index: &DatasetIndex,
    seed: u64,
    config: &AugmentConfig,
) -> Result<AugmentPlan, AugmentError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images: Vec<&ImageAnnotation> = index.images.iter().collect();
    images.sort_by_key(|i| i.image_id);

    let mut items = Vec::with_capacity(images.len());
    for ann in images {
        let angle = sample_angle(&mut rng, config);
        let objects = ann.object_boxes();
        let mut chosen = None;
        for _ in 0..=config.max_retries {
            let window = sample_window(&mut rng, ann, config);
            let survives = objects.is_empty()
                || objects
                    .iter()
                    .any(|o| crop_box(&o.bbox, &window, config.min_kept_fraction).is_some());
            if survives {
                chosen = Some(window);
                break;
            }
        }
        let degenerate_crop = chosen.is_none();
        if degenerate_crop {
            log::debug!(
                "image {}: no crop kept a box, using full image",
                ann.image_id
            );
        }
        let window = chosen.unwrap_or_else(|| ann.full_window());
        items.push(PlanItem {
            image_id: ann.image_id,
            angle,
            window: window.to_array(),
            degenerate_crop,
        });
    }
    Ok(AugmentPlan { seed, items })
}

/// A transformed annotation plus how many objects fell out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub annotation: ImageAnnotation,
    pub dropped_boxes: usize,
    pub dropped_polygons: usize,
}

fn canvas_side(v: f64) -> u32 {
    ((v - 1e-9).ceil() as u32).max(1)
}

/// Rotates all objects about the image centre onto the expanded canvas.
/// Canvas dimensions are rounded up to whole pixels; objects keep the
/// continuous coordinates of the exact canvas anchored at the origin.
pub fn apply_rotation(ann: &ImageAnnotation, angle: f64) -> Augmented {
    let rot = Rotation::new(angle, ann.width as f64, ann.height as f64);
    let (cw, ch) = rot.canvas();
    let (width, height) = (canvas_side(cw), canvas_side(ch));

    let boxes: Vec<LabeledBox> = ann
        .boxes
        .iter()
        .filter_map(|b| {
            rot.apply_box(&b.bbox).map(|bbox| LabeledBox {
                category_id: b.category_id,
                bbox,
            })
        })
        .collect();
    let polygons: Vec<LabeledPolygon> = ann
        .polygons
        .iter()
        .filter_map(|p| {
            p.polygon
                .map_points(|pt| {
                    let q = rot.apply(pt);
                    Point::new(q.x.clamp(0.0, cw), q.y.clamp(0.0, ch))
                })
                .ok()
                .map(|polygon| LabeledPolygon {
                    category_id: p.category_id,
                    polygon,
                })
        })
        .collect();

    Augmented {
        dropped_boxes: ann.boxes.len() - boxes.len(),
        dropped_polygons: ann.polygons.len() - polygons.len(),
        annotation: ImageAnnotation {
            width,
            height,
            boxes,
            polygons,
            ..ann.clone()
        },
    }
}

/// Crops all objects to `window` and shifts them into window coordinates.
/// Polygons are clipped to the window and dropped under the same kept-area
/// rule as boxes.
pub fn apply_crop(
    ann: &ImageAnnotation,
    window: &BBox,
    min_kept_fraction: f64,
) -> Result<Augmented, AugmentError> {
    if !window.fits_in(ann.width as f64, ann.height as f64) {
        return Err(AugmentError::WindowOutside {
            image_id: ann.image_id,
            window: window.to_array(),
            width: ann.width,
            height: ann.height,
        });
    }
    let (wx, wy) = (window.xmin(), window.ymin());
    let (ww, wh) = (window.width(), window.height());
    let boxes: Vec<LabeledBox> = ann
        .boxes
        .iter()
        .filter_map(|b| {
            crop_box(&b.bbox, window, min_kept_fraction).map(|bbox| LabeledBox {
                category_id: b.category_id,
                bbox,
            })
        })
        .collect();
    let polygons: Vec<LabeledPolygon> = ann
        .polygons
        .iter()
        .filter_map(|p| {
            let clipped = p.polygon.clip_to(window)?;
            if clipped.area() < min_kept_fraction * p.polygon.area() {
                return None;
            }
            let polygon = clipped
                .map_points(|pt| Point::new((pt.x - wx).clamp(0.0, ww), (pt.y - wy).clamp(0.0, wh)))
                .ok()?;
            Some(LabeledPolygon {
                category_id: p.category_id,
                polygon,
            })
        })
        .collect();

    Ok(Augmented {
        dropped_boxes: ann.boxes.len() - boxes.len(),
        dropped_polygons: ann.polygons.len() - polygons.len(),
        annotation: ImageAnnotation {
            width: ww.ceil() as u32,
            height: wh.ceil() as u32,
            boxes,
            polygons,
            ..ann.clone()
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub originals: usize,
    pub rotated: usize,
    pub cropped: usize,
    pub total: usize,
    pub dropped_boxes: usize,
    pub dropped_polygons: usize,
    pub degenerate_crops: usize,
}

fn variant_name(file_name: &str, suffix: &str) -> String {
    let p = Path::new(file_name);
    match (p.file_stem(), p.extension()) {
        (Some(stem), Some(ext)) => {
            let name = format!(
                "{}__{suffix}.{}",
                stem.to_string_lossy(),
                ext.to_string_lossy()
            );
            match p.parent() {
                Some(dir) if !dir.as_os_str().is_empty() => {
                    format!("{}/{name}", dir.to_string_lossy())
                }
                _ => name,
            }
        }
        _ => format!("{file_name}__{suffix}"),
    }
}

/// Applies a plan and returns a new index holding every original followed by
/// its rotated (`<stem>__rot.<ext>`) and cropped (`<stem>__crop.<ext>`)
/// variants. Image ids are reassigned `1..=3N` in that order.
pub fn expand_index(
    index: &DatasetIndex,
    plan: &AugmentPlan,
    config: &AugmentConfig,
) -> Result<(DatasetIndex, AugmentSummary), AugmentError> {
    let triples = plan
        .items
        .par_iter()
        .map(|item| {
            let ann = index
                .image(item.image_id)
                .ok_or(AugmentError::UnknownImage(item.image_id))?;
            let rotated = apply_rotation(ann, item.angle);
            let [x0, y0, x1, y1] = item.window;
            let window = BBox::new(x0, y0, x1, y1).map_err(|_| AugmentError::WindowOutside {
                image_id: ann.image_id,
                window: item.window,
                width: ann.width,
                height: ann.height,
            })?;
            let cropped = apply_crop(ann, &window, config.min_kept_fraction)?;
            Ok((ann, rotated, cropped, item.degenerate_crop))
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;

    let mut summary = AugmentSummary::default();
    let mut images = Vec::with_capacity(triples.len() * 3);
    let mut names = HashSet::new();
    for (orig, rot, crop, degenerate) in triples {
        summary.originals += 1;
        summary.rotated += 1;
        summary.cropped += 1;
        summary.dropped_boxes += rot.dropped_boxes + crop.dropped_boxes;
        summary.dropped_polygons += rot.dropped_polygons + crop.dropped_polygons;
        summary.degenerate_crops += degenerate as usize;
        let mut rot = rot.annotation;
        rot.file_name = variant_name(&orig.file_name, "rot");
        let mut crop = crop.annotation;
        crop.file_name = variant_name(&orig.file_name, "crop");
        for mut ann in [orig.clone(), rot, crop] {
            if !names.insert(ann.file_name.clone()) {
                return Err(AugmentError::NameCollision(ann.file_name));
            }
            ann.image_id = images.len() as u64 + 1;
            images.push(ann);
        }
    }
    summary.total = images.len();
    Ok((
        DatasetIndex {
            categories: index.categories.clone(),
            images,
        },
        summary,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::CategoryMap;
    use crate::geometry::Polygon;

    fn bb(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    fn image(id: u64, w: u32, h: u32, boxes: &[BBox]) -> ImageAnnotation {
        ImageAnnotation {
            image_id: id,
            file_name: format!("img_{id:04}.jpg"),
            width: w,
            height: h,
            boxes: boxes
                .iter()
                .map(|&bbox| LabeledBox {
                    category_id: 1,
                    bbox,
                })
                .collect(),
            polygons: vec![],
        }
    }

    fn index(n: u64) -> DatasetIndex {
        DatasetIndex {
            categories: CategoryMap::new(vec!["red_rust".into()]).unwrap(),
            images: (1..=n)
                .map(|i| {
                    image(
                        i,
                        200,
                        150,
                        &[bb(20.0, 30.0, 60.0, 90.0), bb(150.0, 10.0, 190.0, 40.0)],
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn plan_counts_and_determinism() {
        let idx = index(1500);
        let cfg = AugmentConfig::default();
        let p = plan(&idx, 42, &cfg).unwrap();
        assert_eq!(p.items.len(), 1500);
        assert_eq!(p.variant_count(), 3000);
        assert_eq!(p.total_images(), 4500);
        assert_eq!(p, plan(&idx, 42, &cfg).unwrap());
        assert_ne!(p, plan(&idx, 43, &cfg).unwrap());

        let per_class = plan(&index(450), 7, &cfg).unwrap();
        assert_eq!(per_class.variant_count(), 900);

        for item in &p.items {
            assert!((-180.0..180.0).contains(&item.angle));
            let w = bb(
                item.window[0],
                item.window[1],
                item.window[2],
                item.window[3],
            );
            assert!(w.fits_in(200.0, 150.0));
            assert!(w.area() >= 0.25 * 200.0 * 150.0);
            assert!(!item.degenerate_crop);
        }
    }

    #[test]
    fn unreachable_boxes_fall_back_to_full_window() {
        let idx = DatasetIndex {
            categories: CategoryMap::new(vec!["x".into()]).unwrap(),
            images: vec![image(1, 100, 100, &[bb(0.0, 0.0, 100.0, 100.0)])],
        };
        let cfg = AugmentConfig {
            min_kept_fraction: 1.0,
            crop_side_range: [0.5, 0.6],
            ..Default::default()
        };
        let p = plan(&idx, 1, &cfg).unwrap();
        assert!(p.items[0].degenerate_crop);
        assert_eq!(p.items[0].window, [0.0, 0.0, 100.0, 100.0]);
    }

    #[test]
    fn right_angle_mode() {
        let cfg = AugmentConfig {
            right_angles_only: true,
            ..Default::default()
        };
        let p = plan(&index(50), 3, &cfg).unwrap();
        assert!(p
            .items
            .iter()
            .all(|i| [-180.0, -90.0, 90.0].contains(&i.angle)));
    }

    #[test]
    fn rotation_examples() {
        let ann = image(1, 200, 150, &[bb(20.0, 30.0, 60.0, 90.0)]);
        let same = apply_rotation(&ann, 0.0);
        assert_eq!(same.annotation, ann);

        let quarter = apply_rotation(&ann, 90.0);
        assert_eq!(
            (quarter.annotation.width, quarter.annotation.height),
            (150, 200)
        );
        assert_eq!(quarter.annotation.boxes.len(), 1);
        // (x, y) -> (y, W - x)
        assert_eq!(
            quarter.annotation.boxes[0].bbox,
            bb(30.0, 140.0, 90.0, 180.0)
        );

        let half = apply_rotation(&ann, 180.0);
        assert_eq!((half.annotation.width, half.annotation.height), (200, 150));
        assert_eq!(half.annotation.boxes[0].bbox, bb(140.0, 60.0, 180.0, 120.0));
    }

    #[test]
    fn rotated_boxes_stay_on_canvas() {
        let ann = image(
            1,
            200,
            150,
            &[bb(0.0, 0.0, 200.0, 150.0), bb(190.0, 140.0, 200.0, 150.0)],
        );
        for angle in [-170.0, -33.0, 12.5, 45.0, 135.0] {
            let r = apply_rotation(&ann, angle).annotation;
            for b in &r.boxes {
                assert!(b.bbox.fits_in(r.width as f64, r.height as f64), "{angle}");
            }
        }
    }

    #[test]
    fn crop_examples() {
        let ann = image(
            1,
            100,
            80,
            &[bb(10.0, 10.0, 20.0, 20.0), bb(60.0, 50.0, 90.0, 70.0)],
        );
        let full = apply_crop(&ann, &ann.full_window(), 0.3).unwrap();
        assert_eq!(full.annotation, ann);

        let none = apply_crop(&ann, &bb(30.0, 20.0, 50.0, 40.0), 0.3).unwrap();
        assert!(none.annotation.boxes.is_empty());
        assert_eq!(none.dropped_boxes, 2);
        assert_eq!((none.annotation.width, none.annotation.height), (20, 20));

        let half = apply_crop(&ann, &bb(0.0, 0.0, 15.0, 30.0), 0.3).unwrap();
        assert_eq!(half.annotation.boxes.len(), 1);
        assert_eq!(half.annotation.boxes[0].bbox, bb(10.0, 10.0, 15.0, 20.0));
        assert_eq!(half.dropped_boxes, 1);

        assert!(matches!(
            apply_crop(&ann, &bb(50.0, 0.0, 120.0, 10.0), 0.3),
            Err(AugmentError::WindowOutside { .. })
        ));
    }

    #[test]
    fn crop_clips_polygons() {
        let mut ann = image(1, 100, 100, &[]);
        ann.polygons.push(LabeledPolygon {
            category_id: 1,
            polygon: Polygon::new(vec![
                Point::new(10.0, 10.0),
                Point::new(30.0, 10.0),
                Point::new(30.0, 30.0),
                Point::new(10.0, 30.0),
            ])
            .unwrap(),
        });
        let out = apply_crop(&ann, &bb(20.0, 0.0, 100.0, 100.0), 0.3).unwrap();
        let p = &out.annotation.polygons[0].polygon;
        assert_eq!(p.area(), 200.0);
        assert_eq!(p.bounding_box(), Some(bb(0.0, 10.0, 10.0, 30.0)));
        let out = apply_crop(&ann, &bb(25.0, 0.0, 100.0, 100.0), 0.3).unwrap();
        assert_eq!(out.dropped_polygons, 1);
    }

    #[test]
    fn expanded_index_triples() {
        let idx = index(4);
        let cfg = AugmentConfig::default();
        let p = plan(&idx, 9, &cfg).unwrap();
        let (out, summary) = expand_index(&idx, &p, &cfg).unwrap();
        assert_eq!(summary.total, 12);
        assert_eq!(out.images.len(), 12);
        assert_eq!(out.images[1].file_name, "img_0001__rot.jpg");
        assert_eq!(out.images[2].file_name, "img_0001__crop.jpg");
        assert_eq!(out.image_ids(), (1..=12).collect::<Vec<_>>());
        assert!(crate::annotation::validate(&out).is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = AugmentConfig {
            crop_side_range: [0.3, 1.0],
            ..Default::default()
        };
        assert!(matches!(
            plan(&index(1), 1, &bad),
            Err(AugmentError::Config(_))
        ));
        let bad = AugmentConfig {
            angle_range: [-200.0, 0.0],
            ..Default::default()
        };
        assert!(bad.check().is_err());
    }
}
