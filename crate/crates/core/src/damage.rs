//! Leaf damage quantification from instance masks.
//!
//! Disease instances are assigned to the leaf whose ROI strictly contains
//! theirs. For every leaf, the owned disease masks are OR-ed together,
//! restricted to the leaf's own pixels, and counted:
//!
//! ```text
//! damage_pct = 100 * |union(disease masks) & leaf mask| / |leaf mask|
//! ```

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{contains_strict, GeometryError, Polygon, Roi};

#[derive(Debug, Error)]
pub enum DamageError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("leaf {0} has an empty mask")]
    EmptyLeaf(usize),
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("no masks to combine")]
    NoMasks,
    #[error("mask has {got} pixels, expected {expected}")]
    BadBitCount { got: usize, expected: usize },
    #[error("run-length counts sum to {got}, expected {expected}")]
    BadRle { got: u64, expected: u64 },
    #[error("invalid PGM: {0}")]
    BadPgm(String),
    #[error("instance {index}: {source}")]
    BadRoi { index: usize, source: GeometryError },
    #[error("instance {index}: mask is {w}x{h}, image is {iw}x{ih}")]
    InstanceSize {
        index: usize,
        w: u32,
        h: u32,
        iw: u32,
        ih: u32,
    },
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Row-major per-pixel membership bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, DamageError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(DamageError::BadBitCount {
                got: bits.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.idx(x, y);
        self.bits[i] = value;
    }

    /// Number of set ("white") pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    fn check_same_size(&self, other: &BinaryMask) -> Result<(), DamageError> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(DamageError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask, DamageError> {
        self.check_same_size(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask, DamageError> {
        self.check_same_size(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }

    /// Clears every pixel whose centre falls outside `roi`.
    pub fn clip_to_roi(&mut self, roi: &Roi) {
        for y in 0..self.height {
            let cy = y as f64 + 0.5;
            let row_in = roi.y1() <= cy && cy < roi.y2();
            for x in 0..self.width {
                let cx = x as f64 + 0.5;
                if !(row_in && roi.x1() <= cx && cx < roi.x2()) {
                    self.set(x, y, false);
                }
            }
        }
    }

    /// Tight `[y1, x1, y2, x2]` box of the set pixels, `y2`/`x2` exclusive.
    pub fn roi(&self) -> Result<Roi, DamageError> {
        mask_to_roi(self)
    }
}

pub fn mask_area(m: &BinaryMask) -> u64 {
    m.area()
}

pub fn mask_to_roi(m: &BinaryMask) -> Result<Roi, DamageError> {
    let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(x, y) {
                any = true;
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    if !any {
        return Err(DamageError::EmptyMask);
    }
    Ok(Roi::new(y1 as f64, x1 as f64, y2 as f64, x2 as f64).expect("non-empty extent"))
}

/// Rasterizes with the even-odd rule sampled at pixel centres: pixel
/// `(i, j)` is set iff `(i + 0.5, j + 0.5)` is inside. Each row is filled
/// between sorted edge crossings.
pub fn polygon_to_mask(p: &Polygon, width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    let edges: Vec<_> = p.edges().filter(|(a, b)| a.y != b.y).collect();
    let mut xs: Vec<f64> = Vec::new();
    for j in 0..height {
        let y = j as f64 + 0.5;
        xs.clear();
        for (from, to) in &edges {
            if (to.y > y) != (from.y > y) {
                // interpolated from the edge's end point, as in the classic
                // crossing test, so both agree to the last bit
                xs.push((from.x - to.x) * (y - to.y) / (from.y - to.y) + to.x);
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        // a centre is inside iff an odd number of crossings lie strictly to
        // its right, i.e. it sits in some [xs[2k], xs[2k+1])
        for pair in xs.chunks_exact(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let first = ((lo - 0.5).floor().max(0.0)) as u32;
            let last = ((hi - 0.5).ceil().min(width as f64)).max(0.0) as u32;
            for i in first..last.min(width) {
                let cx = i as f64 + 0.5;
                if lo <= cx && cx < hi {
                    mask.set(i, j, true);
                }
            }
        }
    }
    mask
}

/// Per-pixel OR of equally sized masks.
pub fn union_masks<'a>(
    masks: impl IntoIterator<Item = &'a BinaryMask>,
) -> Result<BinaryMask, DamageError> {
    let mut iter = masks.into_iter();
    let first = iter.next().ok_or(DamageError::NoMasks)?;
    iter.try_fold(first.clone(), |acc, m| acc.or(m))
}

/// A detected (or annotated) object with a full-image mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub category_id: u64,
    pub score: f64,
    roi: Roi,
    mask: BinaryMask,
}

impl InstanceMask {
    /// Pixels outside `roi` are cleared so the mask never leaks past its box.
    pub fn new(category_id: u64, score: f64, roi: Roi, mut mask: BinaryMask) -> Self {
        mask.clip_to_roi(&roi);
        Self {
            category_id,
            score,
            roi,
            mask,
        }
    }

    /// Instance whose ROI is the tight extent of `mask`.
    pub fn from_mask(category_id: u64, score: f64, mask: BinaryMask) -> Result<Self, DamageError> {
        let roi = mask_to_roi(&mask)?;
        Ok(Self {
            category_id,
            score,
            roi,
            mask,
        })
    }

    pub fn roi(&self) -> &Roi {
        &self.roi
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeafAssignment {
    pub leaf: usize,
    pub diseases: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Assignment {
    pub leaves: Vec<LeafAssignment>,
    /// Disease instances contained by no leaf.
    pub unowned: Vec<usize>,
}

/// Assigns each disease instance to the leaf whose ROI strictly contains it.
/// When several leaves qualify the one with the smallest ROI area wins
/// (lowest index on equal area). Indices refer to `instances`.
pub fn assign(
    instances: &[InstanceMask],
    leaf_category: u64,
    disease_categories: &BTreeSet<u64>,
) -> Assignment {
    let leaf_idx: Vec<usize> = instances
        .iter()
        .enumerate()
        .filter(|(_, m)| m.category_id == leaf_category)
        .map(|(i, _)| i)
        .collect();
    let mut out = Assignment {
        leaves: leaf_idx
            .iter()
            .map(|&leaf| LeafAssignment {
                leaf,
                diseases: Vec::new(),
            })
            .collect(),
        unowned: Vec::new(),
    };
    for (d, inst) in instances.iter().enumerate() {
        if inst.category_id == leaf_category || !disease_categories.contains(&inst.category_id) {
            continue;
        }
        let owner = leaf_idx
            .iter()
            .enumerate()
            .filter(|(_, &l)| contains_strict(&instances[l].roi, &inst.roi))
            .min_by(|(_, &a), (_, &b)| instances[a].roi.area().total_cmp(&instances[b].roi.area()));
        match owner {
            Some((slot, _)) => out.leaves[slot].diseases.push(d),
            None => out.unowned.push(d),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafDamageReport {
    pub leaf: usize,
    pub diseases: Vec<usize>,
    pub leaf_area_px: u64,
    pub disease_area_px: u64,
    pub damage_pct: f64,
}

/// Damage of one leaf given the disease instances it owns. Disease pixels
/// outside the leaf mask are not counted, so the result never exceeds 100%.
pub fn damage_percentage(
    leaf_index: usize,
    leaf: &InstanceMask,
    diseases: &[(usize, &InstanceMask)],
) -> Result<LeafDamageReport, DamageError> {
    let leaf_area_px = leaf.mask.area();
    if leaf_area_px == 0 {
        return Err(DamageError::EmptyLeaf(leaf_index));
    }
    let disease_area_px = if diseases.is_empty() {
        0
    } else {
        union_masks(diseases.iter().map(|(_, d)| &d.mask))?
            .and(&leaf.mask)?
            .area()
    };
    Ok(LeafDamageReport {
        leaf: leaf_index,
        diseases: diseases.iter().map(|(i, _)| *i).collect(),
        leaf_area_px,
        disease_area_px,
        damage_pct: 100.0 * disease_area_px as f64 / leaf_area_px as f64,
    })
}

/// Damage reports for every leaf of one image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageDamage {
    pub leaves: Vec<LeafDamageReport>,
    pub unowned: Vec<usize>,
}

pub fn analyze(
    instances: &[InstanceMask],
    leaf_category: u64,
    disease_categories: &BTreeSet<u64>,
) -> Result<ImageDamage, DamageError> {
    let a = assign(instances, leaf_category, disease_categories);
    let leaves = a
        .leaves
        .iter()
        .map(|la| {
            let owned: Vec<(usize, &InstanceMask)> =
                la.diseases.iter().map(|&d| (d, &instances[d])).collect();
            damage_percentage(la.leaf, &instances[la.leaf], &owned)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ImageDamage {
        leaves,
        unowned: a.unowned,
    })
}

/// Union of the disease masks owned by a leaf, limited to the leaf's pixels.
pub fn leaf_disease_mask(
    leaf: &InstanceMask,
    diseases: impl IntoIterator<Item = impl std::borrow::Borrow<InstanceMask>>,
) -> Result<BinaryMask, DamageError> {
    let mut acc = BinaryMask::new(leaf.mask.width, leaf.mask.height);
    for d in diseases {
        acc = acc.or(&d.borrow().mask)?;
    }
    acc.and(&leaf.mask)
}

/// Binary PGM (`P5`): set pixels are 255, others 0.
pub fn render_pgm(m: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width, m.height).into_bytes();
    out.extend(m.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Parses a binary PGM; any non-zero sample counts as set.
pub fn parse_pgm(data: &[u8]) -> Result<BinaryMask, DamageError> {
    let bad = |m: &str| DamageError::BadPgm(m.to_string());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if data.get(pos) == Some(&b'#') {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields
            .push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary graymap (P5)"));
    }
    let num = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| bad("non-numeric header field"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit graymaps are supported"));
    }
    pos += 1; // single whitespace byte before the raster
    let raster = data.get(pos..).ok_or_else(|| bad("missing raster"))?;
    let n = w as usize * h as usize;
    if raster.len() != n {
        return Err(bad("raster size does not match header"));
    }
    BinaryMask::from_bits(w, h, raster.iter().map(|&v| v != 0).collect())
}

pub fn render_png(m: &BinaryMask) -> Result<Vec<u8>, DamageError> {
    let pixels: Vec<u8> = m.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(m.width, m.height, pixels).expect("buffer size matches");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    #[default]
    Pgm,
    Png,
}

impl RenderFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RenderFormat::Pgm => "pgm",
            RenderFormat::Png => "png",
        }
    }
}

pub fn write_mask(path: &Path, m: &BinaryMask, format: RenderFormat) -> Result<(), DamageError> {
    let bytes = match format {
        RenderFormat::Pgm => render_pgm(m),
        RenderFormat::Png => render_png(m)?,
    };
    crate::fsutil::write_atomic_with(path, |f| f.write_all(&bytes))?;
    Ok(())
}

/// Uncompressed run-length encoding in column-major order, starting with a
/// run of unset pixels (which may be zero).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u64>,
}

pub fn rle_encode(m: &BinaryMask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..m.width {
        for y in 0..m.height {
            let v = m.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        size: [m.height, m.width],
        counts,
    }
}

pub fn rle_decode(rle: &Rle) -> Result<BinaryMask, DamageError> {
    let [h, w] = rle.size;
    let expected = w as u64 * h as u64;
    let got: u64 = rle.counts.iter().sum();
    if got != expected {
        return Err(DamageError::BadRle { got, expected });
    }
    let mut m = BinaryMask::new(w, h);
    let mut k = 0u64;
    for (i, &run) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in k..k + run {
                let (x, y) = ((p / h as u64) as u32, (p % h as u64) as u32);
                m.set(x, y, true);
            }
        }
        k += run;
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceEntry {
    category_id: u64,
    score: f64,
    roi: [f64; 4],
    mask: Rle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceFile {
    instances: Vec<InstanceEntry>,
}

/// Reads a per-image instance file. All masks must share one size.
pub fn read_instances(json: &str) -> Result<Vec<InstanceMask>, DamageError> {
    let file: InstanceFile = serde_json::from_str(json)?;
    let mut size: Option<(u32, u32)> = None;
    file.instances
        .into_iter()
        .enumerate()
        .map(|(index, e)| {
            let roi =
                Roi::from_array(e.roi).map_err(|source| DamageError::BadRoi { index, source })?;
            let mask = rle_decode(&e.mask)?;
            let dims = (mask.width, mask.height);
            match size {
                None => size = Some(dims),
                Some((iw, ih)) if (iw, ih) != dims => {
                    return Err(DamageError::InstanceSize {
                        index,
                        w: dims.0,
                        h: dims.1,
                        iw,
                        ih,
                    })
                }
                Some(_) => {}
            }
            Ok(InstanceMask::new(e.category_id, e.score, roi, mask))
        })
        .collect()
}

pub fn write_instances(instances: &[InstanceMask]) -> Result<String, DamageError> {
    let file = InstanceFile {
        instances: instances
            .iter()
            .map(|i| InstanceEntry {
                category_id: i.category_id,
                score: i.score,
                roi: i.roi.to_array(),
                mask: rle_encode(&i.mask),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}
