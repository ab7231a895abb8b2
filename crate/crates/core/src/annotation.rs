//! Annotation readers and the combined dataset index.
//!
//! Two per-image formats are accepted: VOC XML (boxes) and labelme-style
//! polygon JSON. Both parse into [`ParsedAnnotation`]; [`build_index`] folds a
//! set of parses into a [`DatasetIndex`] with stable ids, and
//! [`write_index`]/[`read_index`] handle the combined JSON file.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeometryError, Point, Polygon};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("malformed XML: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing element <{0}>")]
    MissingElement(String),
    #[error("element <{element}> has non-numeric value {value:?}")]
    InvalidNumber { element: String, value: String },
    #[error("object {index} ({name}): inverted box")]
    InvertedBox { index: usize, name: String },
    #[error("object {index} ({name}): {source}")]
    InvalidBox {
        index: usize,
        name: String,
        source: GeometryError,
    },
    #[error("shape {index} ({label}): degenerate polygon: {source}")]
    DegeneratePolygon {
        index: usize,
        label: String,
        source: GeometryError,
    },
    #[error("image size must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("duplicate file name {0:?}")]
    DuplicateFileName(String),
    #[error("label {0:?} is not in the supplied category order")]
    UnknownLabel(String),
    #[error("invalid category list: {0}")]
    InvalidCategories(String),
    #[error("background id reserved: category {0:?} uses id 0")]
    BackgroundIdReserved(String),
    #[error("annotation {id}: {message}")]
    InvalidAnnotation { id: u64, message: String },
    #[error("image {id}: {message}")]
    InvalidImage { id: u64, message: String },
}

pub type Result<T, E = AnnotationError> = std::result::Result<T, E>;

/// Annotation content of one image, independent of the source format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedAnnotation {
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<(String, BBox)>,
    pub polygons: Vec<(String, Polygon)>,
    /// Shapes that were present but not polygons (polygon JSON only).
    pub skipped_shapes: usize,
}

fn child<'a, 'input>(
    node: roxmltree::Node<'a, 'input>,
    name: &str,
) -> Option<roxmltree::Node<'a, 'input>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn required<'a, 'input>(
    node: roxmltree::Node<'a, 'input>,
    name: &str,
    path: &str,
) -> Result<roxmltree::Node<'a, 'input>> {
    child(node, name).ok_or_else(|| AnnotationError::MissingElement(path.to_string()))
}

fn text_of<'a>(node: roxmltree::Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn number<T: std::str::FromStr>(node: roxmltree::Node<'_, '_>, path: &str) -> Result<T> {
    let raw = text_of(node);
    raw.parse().map_err(|_| AnnotationError::InvalidNumber {
        element: path.to_string(),
        value: raw.to_string(),
    })
}

/// Parses a VOC XML document. Objects are returned in document order;
/// unknown elements are ignored.
pub fn parse_voc_xml(document: &str) -> Result<ParsedAnnotation> {
    let doc = roxmltree::Document::parse(document)?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(AnnotationError::MissingElement("annotation".into()));
    }
    let file_name = text_of(required(root, "filename", "annotation/filename")?).to_string();
    let size = required(root, "size", "annotation/size")?;
    let width: u32 = number(required(size, "width", "size/width")?, "size/width")?;
    let height: u32 = number(required(size, "height", "size/height")?, "size/height")?;
    if width == 0 || height == 0 {
        return Err(AnnotationError::EmptyImage { width, height });
    }

    let mut boxes = Vec::new();
    for (index, obj) in root
        .children()
        .filter(|c| c.has_tag_name("object"))
        .enumerate()
    {
        let name = text_of(required(obj, "name", "object/name")?).to_string();
        let bnd = required(obj, "bndbox", "object/bndbox")?;
        let coord = |tag: &str| -> Result<f64> {
            let path = format!("object[{index}]/bndbox/{tag}");
            let v: f64 = number(
                child(bnd, tag).ok_or_else(|| AnnotationError::MissingElement(path.clone()))?,
                &path,
            )?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(AnnotationError::InvalidNumber {
                    element: path,
                    value: v.to_string(),
                })
            }
        };
        let (xmin, ymin, xmax, ymax) = (
            coord("xmin")?,
            coord("ymin")?,
            coord("xmax")?,
            coord("ymax")?,
        );
        if xmax <= xmin || ymax <= ymin {
            return Err(AnnotationError::InvertedBox { index, name });
        }
        let bbox =
            BBox::new(xmin, ymin, xmax, ymax).map_err(|source| AnnotationError::InvalidBox {
                index,
                name: name.clone(),
                source,
            })?;
        boxes.push((name, bbox));
    }

    Ok(ParsedAnnotation {
        file_name,
        width,
        height,
        boxes,
        ..Default::default()
    })
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct LabelmeDocument {
    shapes: Vec<LabelmeShape>,
    image_path: String,
    image_height: u32,
    image_width: u32,
    // imageData is deliberately not deserialized
}

#[derive(Deserialize)]
struct LabelmeShape {
    label: String,
    points: Vec<[f64; 2]>,
    shape_type: String,
}

/// Parses a labelme-style polygon document. Only `"polygon"` shapes are kept;
/// other shape types are counted in `skipped_shapes`. Consecutive duplicate
/// points (double clicks) are collapsed before validation.
pub fn parse_polygon_json(document: &str) -> Result<ParsedAnnotation> {
    let doc: LabelmeDocument = serde_json::from_str(document)?;
    if doc.image_width == 0 || doc.image_height == 0 {
        return Err(AnnotationError::EmptyImage {
            width: doc.image_width,
            height: doc.image_height,
        });
    }
    let mut polygons = Vec::new();
    let mut skipped_shapes = 0;
    for (index, shape) in doc.shapes.into_iter().enumerate() {
        if shape.shape_type != "polygon" {
            log::warn!(
                "{}: skipping shape {index} ({}) of type {:?}",
                doc.image_path,
                shape.label,
                shape.shape_type
            );
            skipped_shapes += 1;
            continue;
        }
        let mut pts: Vec<Point> = shape
            .points
            .iter()
            .map(|&[x, y]| Point::new(x, y))
            .collect();
        pts.dedup();
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        let polygon = Polygon::new(pts).map_err(|source| AnnotationError::DegeneratePolygon {
            index,
            label: shape.label.clone(),
            source,
        })?;
        polygons.push((shape.label, polygon));
    }
    Ok(ParsedAnnotation {
        file_name: doc.image_path,
        width: doc.image_width,
        height: doc.image_height,
        polygons,
        skipped_shapes,
        ..Default::default()
    })
}

/// Category names with ids `1..=K`. Id 0 is the background class and is
/// never assigned.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CategoryMap {
    names: Vec<String>,
}

impl CategoryMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(AnnotationError::InvalidCategories(
                    "empty category name".into(),
                ));
            }
            if !seen.insert(n.as_str()) {
                return Err(AnnotationError::InvalidCategories(format!(
                    "duplicate category name {n:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<u64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as u64 + 1)
    }

    pub fn name_of(&self, id: u64) -> Option<&str> {
        if id == 0 {
            return None;
        }
        self.names.get(id as usize - 1).map(String::as_str)
    }

    pub fn contains_id(&self, id: u64) -> bool {
        id >= 1 && id as usize <= self.names.len()
    }

    /// `(id, name)` pairs in id order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u64 + 1, n.as_str()))
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> {
        1..=self.names.len() as u64
    }

    fn get_or_insert(&mut self, name: &str) -> u64 {
        match self.id_of(name) {
            Some(id) => id,
            None => {
                self.names.push(name.to_string());
                self.names.len() as u64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub category_id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPolygon {
    pub category_id: u64,
    pub polygon: Polygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub image_id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<LabeledBox>,
    pub polygons: Vec<LabeledPolygon>,
}

impl ImageAnnotation {
    /// Every object as a box: explicit boxes first, then the hulls of the
    /// polygons (polygons that collapse to a line have no hull and are
    /// skipped). This is the ground truth used by packing and evaluation.
    pub fn object_boxes(&self) -> Vec<LabeledBox> {
        self.boxes
            .iter()
            .copied()
            .chain(self.polygons.iter().filter_map(|p| {
                p.polygon.bounding_box().map(|bbox| LabeledBox {
                    category_id: p.category_id,
                    bbox,
                })
            }))
            .collect()
    }

    pub fn full_window(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
            .expect("image dimensions are positive")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub categories: CategoryMap,
    pub images: Vec<ImageAnnotation>,
}

impl DatasetIndex {
    pub fn image(&self, image_id: u64) -> Option<&ImageAnnotation> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn image_ids(&self) -> Vec<u64> {
        self.images.iter().map(|i| i.image_id).collect()
    }
}

/// Builds the combined index.
///
/// Image ids are assigned `1..=N` in sorted file-name order. Category ids are
/// assigned in first-seen order while walking images in that same sorted
/// order (boxes before polygons), unless `fixed_order` is given, in which
/// case ids follow it and any other label is an error.
pub fn build_index(
    mut parses: Vec<ParsedAnnotation>,
    fixed_order: Option<&[String]>,
) -> Result<DatasetIndex> {
    parses.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    if let Some(w) = parses.windows(2).find(|w| w[0].file_name == w[1].file_name) {
        return Err(AnnotationError::DuplicateFileName(w[0].file_name.clone()));
    }

    let mut categories = match fixed_order {
        Some(order) => CategoryMap::new(order.to_vec())?,
        None => CategoryMap::default(),
    };
    let mut category_id = |label: &str| -> Result<u64> {
        if fixed_order.is_some() {
            categories
                .id_of(label)
                .ok_or_else(|| AnnotationError::UnknownLabel(label.to_string()))
        } else if label.is_empty() {
            Err(AnnotationError::InvalidCategories("empty label".into()))
        } else {
            Ok(categories.get_or_insert(label))
        }
    };

    let mut images = Vec::with_capacity(parses.len());
    for (i, p) in parses.into_iter().enumerate() {
        let boxes = p
            .boxes
            .into_iter()
            .map(|(label, bbox)| {
                Ok(LabeledBox {
                    category_id: category_id(&label)?,
                    bbox,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let polygons = p
            .polygons
            .into_iter()
            .map(|(label, polygon)| {
                Ok(LabeledPolygon {
                    category_id: category_id(&label)?,
                    polygon,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        images.push(ImageAnnotation {
            image_id: i as u64 + 1,
            file_name: p.file_name,
            width: p.width,
            height: p.height,
            boxes,
            polygons,
        });
    }
    Ok(DatasetIndex { categories, images })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ObjectRef {
    Image,
    Box(usize),
    Polygon(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyImage,
    DuplicateImageId,
    DuplicateFileName,
    BoxOutOfBounds { bbox: [f64; 4] },
    UnknownCategory { category_id: u64 },
    VertexOutOfBounds { vertex: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub image_id: u64,
    pub file_name: String,
    pub object: ObjectRef,
    pub kind: ViolationKind,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let object = match self.object {
            ObjectRef::Image => "image".to_string(),
            ObjectRef::Box(i) => format!("box {i}"),
            ObjectRef::Polygon(i) => format!("polygon {i}"),
        };
        let what = match &self.kind {
            ViolationKind::EmptyImage => "image has zero width or height".to_string(),
            ViolationKind::DuplicateImageId => "duplicate image id".to_string(),
            ViolationKind::DuplicateFileName => "duplicate file name".to_string(),
            ViolationKind::BoxOutOfBounds { bbox } => format!("box {bbox:?} exceeds image bounds"),
            ViolationKind::UnknownCategory { category_id } => {
                format!("unknown category id {category_id}")
            }
            ViolationKind::VertexOutOfBounds { vertex } => {
                format!("vertex {vertex:?} outside image")
            }
        };
        write!(
            f,
            "{} (image {}), {object}: {what}",
            self.file_name, self.image_id
        )
    }
}

/// Lists every invariant violation in the index. Zero-area boxes cannot be
/// represented by [`BBox`] and are rejected earlier, at parse time.
pub fn validate(index: &DatasetIndex) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    let mut names = HashSet::new();
    for img in &index.images {
        let v = |object, kind| Violation {
            image_id: img.image_id,
            file_name: img.file_name.clone(),
            object,
            kind,
        };
        if !ids.insert(img.image_id) {
            out.push(v(ObjectRef::Image, ViolationKind::DuplicateImageId));
        }
        if !names.insert(img.file_name.as_str()) {
            out.push(v(ObjectRef::Image, ViolationKind::DuplicateFileName));
        }
        if img.width == 0 || img.height == 0 {
            out.push(v(ObjectRef::Image, ViolationKind::EmptyImage));
        }
        let (w, h) = (img.width as f64, img.height as f64);
        for (i, b) in img.boxes.iter().enumerate() {
            if !index.categories.contains_id(b.category_id) {
                out.push(v(
                    ObjectRef::Box(i),
                    ViolationKind::UnknownCategory {
                        category_id: b.category_id,
                    },
                ));
            }
            if !b.bbox.fits_in(w, h) {
                out.push(v(
                    ObjectRef::Box(i),
                    ViolationKind::BoxOutOfBounds {
                        bbox: b.bbox.to_array(),
                    },
                ));
            }
        }
        for (i, p) in img.polygons.iter().enumerate() {
            if !index.categories.contains_id(p.category_id) {
                out.push(v(
                    ObjectRef::Polygon(i),
                    ViolationKind::UnknownCategory {
                        category_id: p.category_id,
                    },
                ));
            }
            for pt in p.polygon.vertices() {
                if !(0.0..=w).contains(&pt.x) || !(0.0..=h).contains(&pt.y) {
                    out.push(v(
                        ObjectRef::Polygon(i),
                        ViolationKind::VertexOutOfBounds {
                            vertex: [pt.x, pt.y],
                        },
                    ));
                }
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    images: Vec<ImageEntry>,
    categories: Vec<CategoryEntry>,
    annotations: Vec<AnnotationEntry>,
}

#[derive(Serialize, Deserialize)]
struct ImageEntry {
    id: u64,
    file_name: String,
    height: u32,
    width: u32,
}

#[derive(Serialize, Deserialize)]
struct CategoryEntry {
    id: u64,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct AnnotationEntry {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    segmentation: Vec<Vec<f64>>,
}

/// Serializes the index as combined-index JSON. Boxes carry an empty
/// segmentation; polygons carry their hull as `bbox` (zeros when the polygon
/// has no area) and their vertices as one flat segmentation ring.
pub fn write_index(index: &DatasetIndex) -> Result<String> {
    let mut annotations = Vec::new();
    let mut next_id = 1;
    for img in &index.images {
        for b in &img.boxes {
            annotations.push(AnnotationEntry {
                id: next_id,
                image_id: img.image_id,
                category_id: b.category_id,
                bbox: b.bbox.to_xywh(),
                segmentation: Vec::new(),
            });
            next_id += 1;
        }
        for p in &img.polygons {
            annotations.push(AnnotationEntry {
                id: next_id,
                image_id: img.image_id,
                category_id: p.category_id,
                bbox: p.polygon.bounding_box().map_or([0.0; 4], |b| b.to_xywh()),
                segmentation: vec![p.polygon.to_flat()],
            });
            next_id += 1;
        }
    }
    let file = IndexFile {
        images: index
            .images
            .iter()
            .map(|i| ImageEntry {
                id: i.image_id,
                file_name: i.file_name.clone(),
                height: i.height,
                width: i.width,
            })
            .collect(),
        categories: index
            .categories
            .iter()
            .map(|(id, name)| CategoryEntry {
                id,
                name: name.to_string(),
            })
            .collect(),
        annotations,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Reads combined-index JSON. Category ids must be exactly `1..=K`.
/// Annotations may reference unknown categories; [`validate`] reports those.
pub fn read_index(json: &str) -> Result<DatasetIndex> {
    let file: IndexFile = serde_json::from_str(json)?;

    let mut cats: Vec<CategoryEntry> = file.categories;
    if let Some(c) = cats.iter().find(|c| c.id == 0) {
        return Err(AnnotationError::BackgroundIdReserved(c.name.clone()));
    }
    cats.sort_by_key(|c| c.id);
    if let Some((i, c)) = cats.iter().enumerate().find(|(i, c)| c.id != *i as u64 + 1) {
        return Err(AnnotationError::InvalidCategories(format!(
            "category ids must be consecutive from 1; position {} has id {}",
            i + 1,
            c.id
        )));
    }
    let categories = CategoryMap::new(cats.into_iter().map(|c| c.name).collect())?;

    let mut images = Vec::with_capacity(file.images.len());
    let mut slot: HashMap<u64, usize> = HashMap::new();
    for e in file.images {
        if e.width == 0 || e.height == 0 {
            return Err(AnnotationError::InvalidImage {
                id: e.id,
                message: "width and height must be positive".into(),
            });
        }
        if slot.insert(e.id, images.len()).is_some() {
            return Err(AnnotationError::InvalidImage {
                id: e.id,
                message: "duplicate image id".into(),
            });
        }
        images.push(ImageAnnotation {
            image_id: e.id,
            file_name: e.file_name,
            width: e.width,
            height: e.height,
            boxes: Vec::new(),
            polygons: Vec::new(),
        });
    }

    let mut seen_ann = BTreeMap::new();
    for a in file.annotations {
        let bad = |message: String| AnnotationError::InvalidAnnotation { id: a.id, message };
        if seen_ann.insert(a.id, ()).is_some() {
            return Err(bad("duplicate annotation id".into()));
        }
        if a.category_id == 0 {
            return Err(AnnotationError::BackgroundIdReserved(format!(
                "annotation {}",
                a.id
            )));
        }
        let &i = slot
            .get(&a.image_id)
            .ok_or_else(|| bad(format!("unknown image id {}", a.image_id)))?;
        match a.segmentation.as_slice() {
            [] => {
                let [x, y, w, h] = a.bbox;
                let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| bad(e.to_string()))?;
                images[i].boxes.push(LabeledBox {
                    category_id: a.category_id,
                    bbox,
                });
            }
            [ring] => {
                let polygon = Polygon::from_flat(ring).map_err(|e| bad(e.to_string()))?;
                images[i].polygons.push(LabeledPolygon {
                    category_id: a.category_id,
                    polygon,
                });
            }
            _ => return Err(bad("multi-ring segmentation is not supported".into())),
        }
    }
    Ok(DatasetIndex { categories, images })
}
