//! Rectangle and polygon primitives.
//!
//! Coordinates are continuous pixel coordinates: a box `(xmin, ymin, xmax, ymax)`
//! covers the half-open region `[xmin, xmax) x [ymin, ymax)` and has area
//! `(xmax - xmin) * (ymax - ymin)`. On integer boxes this equals the number of
//! unit cells covered, so there is no `+1` convention anywhere in the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("negative coordinate in {0}")]
    Negative(&'static str),
    #[error("inverted box: min ({min}) must be strictly less than max ({max}) on the {axis} axis")]
    Inverted { axis: char, min: f64, max: f64 },
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has identical consecutive vertices at index {0}")]
    RepeatedVertex(usize),
}

/// A 2-D point in pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

fn check_corners(
    what: &'static str,
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
) -> Result<(), GeometryError> {
    if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite(what));
    }
    if xmin < 0.0 || ymin < 0.0 {
        return Err(GeometryError::Negative(what));
    }
    if xmin >= xmax {
        return Err(GeometryError::Inverted {
            axis: 'x',
            min: xmin,
            max: xmax,
        });
    }
    if ymin >= ymax {
        return Err(GeometryError::Inverted {
            axis: 'y',
            min: ymin,
            max: ymax,
        });
    }
    Ok(())
}

/// Axis-aligned box in corner form. Always has positive area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        check_corners("box", xmin, ymin, xmax, ymax)?;
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    /// Builds a box from `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.width(), self.height()]
    }

    /// Overlap region, or `None` when the boxes are disjoint or only touch.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let xmin = self.xmin.max(other.xmin);
        let ymin = self.ymin.max(other.ymin);
        let xmax = self.xmax.min(other.xmax);
        let ymax = self.ymax.min(other.ymax);
        (xmin < xmax && ymin < ymax).then_some(BBox {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// True when `self` lies within `[0, width] x [0, height]`.
    pub fn fits_in(&self, width: f64, height: f64) -> bool {
        self.xmax <= width && self.ymax <= height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<BBox, GeometryError> {
        BBox::new(
            self.xmin + dx,
            self.ymin + dy,
            self.xmax + dx,
            self.ymax + dy,
        )
    }

    pub fn to_roi(&self) -> Roi {
        Roi {
            y1: self.ymin,
            x1: self.xmin,
            y2: self.ymax,
            x2: self.xmax,
        }
    }
}

/// Intersection over union. Zero for disjoint or edge-touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    match a.intersection(b) {
        None => 0.0,
        Some(inter) => {
            let inter = inter.area();
            let union = a.area() + b.area() - inter;
            // identical boxes must give exactly 1
            if union <= inter {
                1.0
            } else {
                inter / union
            }
        }
    }
}

/// Region of interest in `[y1, x1, y2, x2]` order, as produced by
/// instance-segmentation models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    y1: f64,
    x1: f64,
    y2: f64,
    x2: f64,
}

impl Roi {
    pub fn new(y1: f64, x1: f64, y2: f64, x2: f64) -> Result<Self, GeometryError> {
        if ![y1, x1, y2, x2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("roi"));
        }
        if x1 >= x2 {
            return Err(GeometryError::Inverted {
                axis: 'x',
                min: x1,
                max: x2,
            });
        }
        if y1 >= y2 {
            return Err(GeometryError::Inverted {
                axis: 'y',
                min: y1,
                max: y2,
            });
        }
        Ok(Self { y1, x1, y2, x2 })
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.y1, self.x1, self.y2, self.x2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    /// Corner points starting top-left and going clockwise on screen.
    pub fn to_coordinates(&self) -> CornerQuad {
        CornerQuad {
            top_left: Point::new(self.x1, self.y1),
            top_right: Point::new(self.x2, self.y1),
            bottom_right: Point::new(self.x2, self.y2),
            bottom_left: Point::new(self.x1, self.y2),
        }
    }

    /// Strict containment on all four sides; a shared edge does not count.
    pub fn contains_strict(&self, inner: &Roi) -> bool {
        contains_strict(self, inner)
    }

    /// Converts to a corner-form box. Fails for ROIs with negative coordinates.
    pub fn to_bbox(&self) -> Result<BBox, GeometryError> {
        BBox::new(self.x1, self.y1, self.x2, self.y2)
    }
}

pub fn roi_to_coordinates(r: &Roi) -> CornerQuad {
    r.to_coordinates()
}

/// Compares the corner coordinates of two ROIs:
///
/// ```text
/// outer.x1 < inner.x1 && outer.y1 < inner.y1   (top-left)
/// outer.x2 > inner.x2 && outer.y1 < inner.y1   (top-right)
/// outer.x2 > inner.x2 && outer.y2 > inner.y2   (bottom-right)
/// outer.x1 < inner.x1 && outer.y2 > inner.y2   (bottom-left)
/// ```
pub fn contains_strict(outer: &Roi, inner: &Roi) -> bool {
    let o = outer.to_coordinates();
    let i = inner.to_coordinates();
    let top_left = o.top_left.x < i.top_left.x && o.top_left.y < i.top_left.y;
    let top_right = o.top_right.x > i.top_right.x && o.top_right.y < i.top_right.y;
    let bottom_right = o.bottom_right.x > i.bottom_right.x && o.bottom_right.y > i.bottom_right.y;
    let bottom_left = o.bottom_left.x < i.bottom_left.x && o.bottom_left.y > i.bottom_left.y;
    top_left && top_right && bottom_right && bottom_left
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerQuad {
    pub top_left: Point,
    pub top_right: Point,
    pub bottom_right: Point,
    pub bottom_left: Point,
}

impl CornerQuad {
    pub fn points(&self) -> [Point; 4] {
        [
            self.top_left,
            self.top_right,
            self.bottom_right,
            self.bottom_left,
        ]
    }
}

/// Half-plane membership test used by polygon clipping.
type InsideTest = fn(&Point, f64) -> bool;

/// Simple closed polygon. The last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(GeometryError::NonFinite("polygon"));
        }
        let n = vertices.len();
        if let Some(i) = (0..n).find(|&i| vertices[i] == vertices[(i + 1) % n]) {
            return Err(GeometryError::RepeatedVertex(i));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Edges as `(from, to)` pairs, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Absolute shoelace area.
    pub fn area(&self) -> f64 {
        let twice: f64 = self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
        twice.abs() / 2.0
    }

    /// Axis-aligned hull, `None` for polygons that collapse to a line.
    pub fn bounding_box(&self) -> Option<BBox> {
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            xmin = xmin.min(p.x);
            ymin = ymin.min(p.y);
            xmax = xmax.max(p.x);
            ymax = ymax.max(p.y);
        }
        BBox::new(xmin, ymin, xmax, ymax).ok()
    }

    /// Flat `[x1, y1, x2, y2, ...]` list.
    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(coords: &[f64]) -> Result<Self, GeometryError> {
        if !coords.len().is_multiple_of(2) {
            return Err(GeometryError::TooFewVertices(coords.len() / 2));
        }
        Self::new(
            coords
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )
    }

    /// Clips against an axis-aligned window (Sutherland-Hodgman). Returns
    /// `None` when fewer than 3 distinct vertices remain.
    pub fn clip_to(&self, window: &BBox) -> Option<Polygon> {
        let mut pts = self.vertices.clone();
        let planes: [(InsideTest, f64, bool); 4] = [
            (|p, v| p.x >= v, window.xmin(), true),
            (|p, v| p.x <= v, window.xmax(), true),
            (|p, v| p.y >= v, window.ymin(), false),
            (|p, v| p.y <= v, window.ymax(), false),
        ];
        for (inside, value, vertical) in planes {
            if pts.is_empty() {
                break;
            }
            let input = std::mem::take(&mut pts);
            let n = input.len();
            for i in 0..n {
                let cur = input[i];
                let prev = input[(i + n - 1) % n];
                let (cur_in, prev_in) = (inside(&cur, value), inside(&prev, value));
                if cur_in != prev_in {
                    pts.push(crossing(prev, cur, value, vertical));
                }
                if cur_in {
                    pts.push(cur);
                }
            }
        }
        pts.dedup();
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        Polygon::new(pts).ok()
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Polygon, GeometryError> {
        let mut pts: Vec<Point> = self.vertices.iter().map(|&p| f(p)).collect();
        pts.dedup();
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        Polygon::new(pts)
    }
}

fn crossing(a: Point, b: Point, value: f64, vertical: bool) -> Point {
    if vertical {
        let t = (value - a.x) / (b.x - a.x);
        Point::new(value, a.y + t * (b.y - a.y))
    } else {
        let t = (value - a.y) / (b.y - a.y);
        Point::new(a.x + t * (b.x - a.x), value)
    }
}

/// Reduces any angle in degrees to `[-180, 180)`.
pub fn normalize_angle(degrees: f64) -> f64 {
    let a = (degrees + 180.0).rem_euclid(360.0) - 180.0;
    if a >= 180.0 {
        a - 360.0
    } else {
        a
    }
}

/// Rotation of an image about its centre with an expanded output canvas.
///
/// Positive angles turn the picture counter-clockwise as seen on screen
/// (y axis pointing down). Quarter turns are computed with exact integer
/// arithmetic on the coordinates so that 0, 90, 180 and 270 degrees introduce
/// no rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    angle: f64,
    src_w: f64,
    src_h: f64,
    canvas_w: f64,
    canvas_h: f64,
    quarter: Option<u8>,
    sin: f64,
    cos: f64,
}

impl Rotation {
    pub fn new(angle: f64, image_w: f64, image_h: f64) -> Self {
        let angle = normalize_angle(angle);
        let quarter = if angle.rem_euclid(90.0) == 0.0 {
            Some((angle.rem_euclid(360.0) / 90.0) as u8)
        } else {
            None
        };
        let (sin, cos) = match quarter {
            Some(0) => (0.0, 1.0),
            Some(1) => (1.0, 0.0),
            Some(2) => (0.0, -1.0),
            Some(3) => (-1.0, 0.0),
            _ => angle.to_radians().sin_cos(),
        };
        let (canvas_w, canvas_h) = match quarter {
            Some(0) | Some(2) => (image_w, image_h),
            Some(_) => (image_h, image_w),
            None => (
                image_w * cos.abs() + image_h * sin.abs(),
                image_w * sin.abs() + image_h * cos.abs(),
            ),
        };
        Self {
            angle,
            src_w: image_w,
            src_h: image_h,
            canvas_w,
            canvas_h,
            quarter,
            sin,
            cos,
        }
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Size of the output canvas, which holds the whole rotated image.
    pub fn canvas(&self) -> (f64, f64) {
        (self.canvas_w, self.canvas_h)
    }

    pub fn apply(&self, p: Point) -> Point {
        let (w, h) = (self.src_w, self.src_h);
        match self.quarter {
            Some(0) => p,
            Some(1) => Point::new(p.y, w - p.x),
            Some(2) => Point::new(w - p.x, h - p.y),
            Some(3) => Point::new(h - p.y, p.x),
            _ => {
                let dx = p.x - w / 2.0;
                let dy = p.y - h / 2.0;
                Point::new(
                    self.canvas_w / 2.0 + dx * self.cos + dy * self.sin,
                    self.canvas_h / 2.0 - dx * self.sin + dy * self.cos,
                )
            }
        }
    }

    /// Axis-aligned hull of the rotated corners, clipped to the canvas.
    /// `None` when the clipped hull has no area.
    pub fn apply_box(&self, b: &BBox) -> Option<BBox> {
        let corners = [
            Point::new(b.xmin, b.ymin),
            Point::new(b.xmax, b.ymin),
            Point::new(b.xmax, b.ymax),
            Point::new(b.xmin, b.ymax),
        ]
        .map(|p| self.apply(p));
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&Point) -> f64| {
            corners.iter().map(pick).fold(init, f)
        };
        let xmin = fold(f64::min, f64::INFINITY, |p| p.x).max(0.0);
        let ymin = fold(f64::min, f64::INFINITY, |p| p.y).max(0.0);
        let xmax = fold(f64::max, f64::NEG_INFINITY, |p| p.x).min(self.canvas_w);
        let ymax = fold(f64::max, f64::NEG_INFINITY, |p| p.y).min(self.canvas_h);
        BBox::new(xmin, ymin, xmax, ymax).ok()
    }
}

/// Result of rotating a single box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox {
    /// `None` when clipping left nothing; such boxes are dropped.
    pub bbox: Option<BBox>,
    pub canvas_w: f64,
    pub canvas_h: f64,
}

pub fn rotate_box(b: &BBox, angle: f64, image_w: f64, image_h: f64) -> RotatedBox {
    let rot = Rotation::new(angle, image_w, image_h);
    let (canvas_w, canvas_h) = rot.canvas();
    RotatedBox {
        bbox: rot.apply_box(b),
        canvas_w,
        canvas_h,
    }
}

/// Intersects `b` with `window` and expresses the result in window-local
/// coordinates. Drops the box when less than `min_kept_fraction` of its area
/// survives.
pub fn crop_box(b: &BBox, window: &BBox, min_kept_fraction: f64) -> Option<BBox> {
    let inter = b.intersection(window)?;
    if inter.area() < min_kept_fraction * b.area() {
        return None;
    }
    BBox::new(
        inter.xmin - window.xmin,
        inter.ymin - window.ymin,
        inter.xmax - window.xmin,
        inter.ymax - window.ymin,
    )
    .ok()
}
