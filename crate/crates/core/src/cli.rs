//! Command-line front end. The `canopy` binary only calls [`main`].
//!
//! Settings resolve as flag, then `--config` JSON file, then built-in
//! default. The resolved settings are echoed into each output manifest;
//! `--out` and `--workers` are left out so manifests do not depend on where
//! or how parallel a run was.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    build_index, parse_polygon_json, parse_voc_xml, read_index, validate, write_index,
    AnnotationError, DatasetIndex, ParsedAnnotation,
};
use crate::augment::{expand_index, plan, AugmentConfig, AugmentError};
use crate::damage::{
    analyze, leaf_disease_mask, mask_to_roi, polygon_to_mask, read_instances, write_mask,
    DamageError, ImageDamage, InstanceMask, RenderFormat,
};
use crate::fsutil::write_atomic;
use crate::metrics::{map_range, nms, parse_detections_jsonl, MetricsError, DEFAULT_NMS_MAX_KEPT};
use crate::record::{
    encode_example, shard_file_name, split_train_eval, write_encoded_shards, BoxRecord,
    ExamplePayload, RecordError, SplitError, SplitPlan,
};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.1;
pub const DEFAULT_NUM_SHARDS: usize = 1;
pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "canopy",
    version,
    about = "Annotation, record and evaluation tooling for leaf disease detection"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// Annotation directory, combined index JSON, or instance file
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file with default settings; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// RNG seed [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fraction of images held out for evaluation [default: 0.1]
    #[arg(long, global = true)]
    pub eval_fraction: Option<f64>,
    /// Number of record shards per split [default: 1]
    #[arg(long, global = true)]
    pub num_shards: Option<usize>,
    /// IOU threshold for NMS and the simplified mAP [default: 0.5]
    #[arg(long, global = true)]
    pub iou: Option<f64>,
    /// Maximum detections kept per image by NMS [default: 200]
    #[arg(long, global = true)]
    pub max_kept: Option<usize>,
    /// Write mask images (pgm unless png is given)
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "pgm")]
    pub render: Option<RenderFormat>,
    /// Fixed category order, comma separated (ids follow this order)
    #[arg(long, global = true, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse annotations and report invariant violations
    Validate,
    /// Split and write train/eval record shards with a manifest
    Pack {
        /// Directory holding the image files named in the annotations
        #[arg(long)]
        images: Option<PathBuf>,
        /// Reuse an existing split.json instead of drawing a new split
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Draw a seeded train/eval split
    Split,
    /// Expand the dataset with one rotated and one cropped copy per image
    Augment {
        /// Only rotate by -180, -90 or 90 degrees
        #[arg(long)]
        right_angles_only: bool,
    },
    /// Score detections against ground truth
    Evaluate {
        /// JSON lines of {image_id, category_id, score, bbox}
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Apply per-image NMS before scoring
        #[arg(long)]
        nms: bool,
        /// Model name for the text table
        #[arg(long)]
        model: Option<String>,
    },
    /// Per-leaf damage percentage from instance masks or polygons
    Damage {
        /// Leaf category (id, or name when the input is an index)
        #[arg(long)]
        leaf_category: Option<String>,
        /// Disease categories; repeat or comma separate [default: every non-leaf category]
        #[arg(long, value_delimiter = ',')]
        disease_category: Vec<String>,
    },
}

/// Settings accepted in the `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub seed: Option<u64>,
    pub eval_fraction: Option<f64>,
    pub num_shards: Option<usize>,
    pub iou: Option<f64>,
    pub max_kept: Option<usize>,
    pub render: Option<RenderFormat>,
    pub categories: Option<Vec<String>>,
    pub augment: Option<AugmentConfig>,
    pub images: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub model: Option<String>,
    pub nms: Option<bool>,
    pub leaf_category: Option<String>,
    pub disease_categories: Option<Vec<String>>,
}

/// Effective settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub input: PathBuf,
    pub seed: u64,
    pub eval_fraction: f64,
    pub num_shards: usize,
    pub iou: f64,
    pub max_kept: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    pub augment: AugmentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    pub nms: bool,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf_category: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub disease_categories: Vec<String>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub workers: Option<usize>,
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad data or arguments: exit 1.
    Domain(String),
    /// Missing files, unwritable output: exit 2.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Domain(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

fn domain(e: impl fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        domain(e)
    }
}
impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        domain(e)
    }
}
impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        domain(e)
    }
}
impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        domain(e)
    }
}
impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        match e {
            RecordError::Io { .. } | RecordError::File { .. } => CliError::Io(e.to_string()),
            other => domain(other),
        }
    }
}
impl From<DamageError> for CliError {
    fn from(e: DamageError) -> Self {
        match e {
            DamageError::Io(_) => CliError::Io(e.to_string()),
            other => domain(other),
        }
    }
}

impl RunConfig {
    /// Merges flags over the config file over defaults.
    pub fn resolve(common: &CommonArgs, command: &Command) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_at(p))?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let mut augment = file.augment.unwrap_or_default();
        let (mut images, mut split, mut detections, mut nms_flag, mut model) =
            (None, None, None, false, None);
        let (mut leaf_category, mut disease_categories) = (None, Vec::new());
        let subcommand = match command {
            Command::Validate => "validate".to_string(),
            Command::Split => "split".to_string(),
            Command::Pack {
                images: i,
                split: s,
            } => {
                images = i.clone();
                split = s.clone();
                "pack".to_string()
            }
            Command::Augment { right_angles_only } => {
                augment.right_angles_only |= *right_angles_only;
                "augment".to_string()
            }
            Command::Evaluate {
                detections: d,
                nms: n,
                model: m,
            } => {
                detections = d.clone();
                nms_flag = *n;
                model = m.clone();
                "evaluate".to_string()
            }
            Command::Damage {
                leaf_category: l,
                disease_category: d,
            } => {
                leaf_category = l.clone();
                disease_categories = d.clone();
                "damage".to_string()
            }
        };

        let input = common
            .input
            .clone()
            .or(file.input)
            .ok_or_else(|| domain("--input is required"))?;
        if input.as_os_str().is_empty() {
            return Err(domain("--input must not be empty"));
        }
        let cfg = RunConfig {
            subcommand,
            input,
            seed: common.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            eval_fraction: common
                .eval_fraction
                .or(file.eval_fraction)
                .unwrap_or(DEFAULT_EVAL_FRACTION),
            num_shards: common
                .num_shards
                .or(file.num_shards)
                .unwrap_or(DEFAULT_NUM_SHARDS),
            iou: common.iou.or(file.iou).unwrap_or(DEFAULT_IOU),
            max_kept: common
                .max_kept
                .or(file.max_kept)
                .unwrap_or(DEFAULT_NMS_MAX_KEPT),
            render: common.render.or(file.render),
            categories: common.categories.clone().or(file.categories),
            augment,
            images: images.or(file.images),
            split,
            detections: detections.or(file.detections),
            nms: nms_flag || file.nms.unwrap_or(false),
            model: model.or(file.model).unwrap_or_else(|| "model".to_string()),
            leaf_category: leaf_category.or(file.leaf_category),
            disease_categories: if disease_categories.is_empty() {
                file.disease_categories.unwrap_or_default()
            } else {
                disease_categories
            },
            out: common.out.clone(),
            workers: common.workers,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(domain(format!(
                "--eval-fraction must lie strictly between 0 and 1, got {}",
                self.eval_fraction
            )));
        }
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(domain(format!(
                "--iou must lie in (0, 1], got {}",
                self.iou
            )));
        }
        if self.num_shards == 0 {
            return Err(domain("--num-shards must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(domain("--workers must be at least 1"));
        }
        if let Some(out) = &self.out {
            if out.as_os_str().is_empty() {
                return Err(domain("--out must not be empty"));
            }
        }
        self.augment.check()?;
        Ok(())
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        let out = self
            .out
            .as_deref()
            .ok_or_else(|| domain(format!("{} needs --out", self.subcommand)))?;
        fs::create_dir_all(out).map_err(io_at(out))?;
        Ok(out)
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    write_atomic(path, contents).map_err(io_at(path))
}

/// Annotation files found under a directory, in path order.
fn annotation_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if entry.file_type().is_file() && matches!(ext, "xml" | "json") {
            files.push(path.to_path_buf());
        }
    }
    Ok(files)
}

/// Loads a dataset from a combined index file or a directory of VOC XML and
/// polygon JSON files. Every unreadable or invalid file is reported before
/// failing.
pub fn load_index(input: &Path, categories: Option<&[String]>) -> Result<DatasetIndex, CliError> {
    let meta = fs::metadata(input).map_err(io_at(input))?;
    if meta.is_file() {
        let text = fs::read_to_string(input).map_err(io_at(input))?;
        let index =
            read_index(&text).map_err(|e| CliError::Domain(format!("{}: {e}", input.display())))?;
        return Ok(index);
    }
    let files = annotation_files(input)?;
    let parsed: Vec<(PathBuf, Result<ParsedAnnotation, CliError>)> = files
        .into_par_iter()
        .map(|path| {
            let r = fs::read_to_string(&path)
                .map_err(io_at(&path))
                .and_then(|text| {
                    let parsed = if path.extension().is_some_and(|e| e == "xml") {
                        parse_voc_xml(&text)
                    } else {
                        parse_polygon_json(&text)
                    };
                    parsed.map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
                });
            (path, r)
        })
        .collect();

    let mut ok = Vec::with_capacity(parsed.len());
    let mut worst: Option<CliError> = None;
    let mut failures = 0;
    for (_, r) in parsed {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => {
                eprintln!("error: {e}");
                failures += 1;
                if !matches!(worst, Some(CliError::Io(_))) {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        Some(CliError::Io(_)) => Err(CliError::Io(format!(
            "{failures} annotation file(s) could not be read"
        ))),
        Some(CliError::Domain(_)) => Err(CliError::Domain(format!(
            "{failures} annotation file(s) are invalid"
        ))),
        None => Ok(build_index(ok, categories)?),
    }
}

fn load(cfg: &RunConfig) -> Result<DatasetIndex, CliError> {
    let index = load_index(&cfg.input, cfg.categories.as_deref())?;
    log::info!(
        "loaded {} images, {} categories from {}",
        index.images.len(),
        index.categories.len(),
        cfg.input.display()
    );
    Ok(index)
}

fn require_valid(index: &DatasetIndex) -> Result<(), CliError> {
    let violations = validate(index);
    for v in &violations {
        eprintln!("violation: {v}");
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Domain(format!("{} violations", violations.len())))
    }
}

pub fn run_validate(cfg: &RunConfig) -> Result<(), CliError> {
    let index = load(cfg)?;
    let violations = validate(&index);
    for v in &violations {
        println!("{v}");
    }
    println!("{} violations", violations.len());
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(io_at(out))?;
        write_file(
            &out.join("violations.json"),
            to_json(&violations).as_bytes(),
        )?;
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Domain(format!("{} violations", violations.len())))
    }
}

pub fn run_split(cfg: &RunConfig) -> Result<SplitPlan, CliError> {
    let index = load(cfg)?;
    let split = split_train_eval(&index.image_ids(), cfg.eval_fraction, cfg.seed)?;
    let out = cfg.out_dir()?;
    write_file(&out.join("split.json"), to_json(&split).as_bytes())?;
    println!("train {} / eval {}", split.train.len(), split.eval.len());
    Ok(split)
}

#[derive(Debug, Serialize)]
struct ShardEntry {
    file: String,
    records: usize,
}

#[derive(Debug, Serialize)]
struct SplitEntry {
    count: usize,
    shards: Vec<ShardEntry>,
}

#[derive(Debug, Serialize)]
struct PackManifest<'a> {
    config: &'a RunConfig,
    categories: Vec<(u64, &'a str)>,
    train: SplitEntry,
    eval: SplitEntry,
    split: &'a SplitPlan,
}

fn payload(
    index: &DatasetIndex,
    image_id: u64,
    images: Option<&Path>,
) -> Result<Vec<u8>, CliError> {
    let ann = index
        .image(image_id)
        .ok_or_else(|| domain(format!("split references unknown image id {image_id}")))?;
    let image_bytes = match images {
        Some(dir) => {
            let p = dir.join(&ann.file_name);
            fs::read(&p).map_err(io_at(&p))?
        }
        None => Vec::new(),
    };
    let objects = ann.object_boxes();
    let labels = objects
        .iter()
        .map(|o| {
            index
                .categories
                .name_of(o.category_id)
                .map(str::to_string)
                .ok_or_else(|| {
                    domain(format!(
                        "{}: unknown category id {}",
                        ann.file_name, o.category_id
                    ))
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let boxes = objects
        .iter()
        .map(|o| {
            let [xmin, ymin, xmax, ymax] = o.bbox.to_array();
            BoxRecord {
                category_id: o.category_id,
                xmin,
                ymin,
                xmax,
                ymax,
            }
        })
        .collect();
    let p = ExamplePayload {
        file_name: ann.file_name.clone(),
        width: ann.width,
        height: ann.height,
        image_bytes,
        boxes,
        labels,
    };
    encode_example(&p).map_err(|e| domain(format!("{}: {e}", ann.file_name)))
}

fn write_split_shards(
    cfg: &RunConfig,
    index: &DatasetIndex,
    ids: &[u64],
    out: &Path,
    base: &str,
) -> Result<SplitEntry, CliError> {
    let encoded = ids
        .par_iter()
        .map(|&id| payload(index, id, cfg.images.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;
    let shards = write_encoded_shards(&encoded, out, base, cfg.num_shards)?;
    Ok(SplitEntry {
        count: ids.len(),
        shards: shards
            .iter()
            .enumerate()
            .map(|(s, r)| ShardEntry {
                file: shard_file_name(base, s, cfg.num_shards),
                records: r.record_count,
            })
            .collect(),
    })
}

pub fn run_pack(cfg: &RunConfig) -> Result<(), CliError> {
    let index = load(cfg)?;
    require_valid(&index)?;
    let split = match &cfg.split {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_at(p))?;
            serde_json::from_str::<SplitPlan>(&text)
                .map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?
        }
        None => split_train_eval(&index.image_ids(), cfg.eval_fraction, cfg.seed)?,
    };
    let out = cfg.out_dir()?;
    let train = write_split_shards(cfg, &index, &split.train, out, "train")?;
    let eval = write_split_shards(cfg, &index, &split.eval, out, "eval")?;
    println!("train {} / eval {}", train.count, eval.count);
    let manifest = PackManifest {
        config: cfg,
        categories: index.categories.iter().collect(),
        train,
        eval,
        split: &split,
    };
    write_file(&out.join("split.json"), to_json(&split).as_bytes())?;
    write_file(&out.join("manifest.json"), to_json(&manifest).as_bytes())?;
    Ok(())
}

pub fn run_augment(cfg: &RunConfig) -> Result<(), CliError> {
    let index = load(cfg)?;
    let p = plan(&index, cfg.seed, &cfg.augment)?;
    let (expanded, summary) = expand_index(&index, &p, &cfg.augment)?;
    let out = cfg.out_dir()?;
    write_file(&out.join("augment_plan.json"), to_json(&p).as_bytes())?;
    write_file(
        &out.join("augmented_index.json"),
        write_index(&expanded)?.as_bytes(),
    )?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a RunConfig,
        summary: &'a crate::augment::AugmentSummary,
    }
    write_file(
        &out.join("manifest.json"),
        to_json(&Manifest {
            config: cfg,
            summary: &summary,
        })
        .as_bytes(),
    )?;
    println!(
        "{} originals + {} rotated + {} cropped = {} images",
        summary.originals, summary.rotated, summary.cropped, summary.total
    );
    Ok(())
}

pub fn run_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let index = load(cfg)?;
    let path = cfg
        .detections
        .as_deref()
        .ok_or_else(|| domain("evaluate needs --detections"))?;
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let mut dets = parse_detections_jsonl(&text)
        .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    if cfg.nms {
        let before = dets.len();
        dets = nms(&dets, cfg.iou, cfg.max_kept);
        log::info!("nms kept {} of {before} detections", dets.len());
    }
    let report = map_range(&index, &dets, cfg.iou)?;
    let out = cfg.out_dir()?;
    #[derive(Serialize)]
    struct Output<'a> {
        config: &'a RunConfig,
        #[serde(flatten)]
        report: &'a crate::metrics::EvalReport,
    }
    write_file(
        &out.join("eval_report.json"),
        to_json(&Output {
            config: cfg,
            report: &report,
        })
        .as_bytes(),
    )?;
    let table = report.to_table(&cfg.model);
    write_file(&out.join("eval_report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// Instances of one image, named for reports and render files.
struct ImageInstances {
    name: String,
    instances: Vec<InstanceMask>,
}

fn instances_from_index(index: &DatasetIndex) -> Vec<ImageInstances> {
    index
        .images
        .par_iter()
        .map(|ann| {
            let instances = ann
                .polygons
                .iter()
                .filter_map(|p| {
                    let mask = polygon_to_mask(&p.polygon, ann.width, ann.height);
                    let roi = mask_to_roi(&mask).ok()?;
                    Some(InstanceMask::new(p.category_id, 1.0, roi, mask))
                })
                .collect();
            let stem = Path::new(&ann.file_name).file_stem().map_or_else(
                || ann.file_name.clone(),
                |s| s.to_string_lossy().into_owned(),
            );
            ImageInstances {
                name: stem,
                instances,
            }
        })
        .collect()
}

fn load_instance_file(path: &Path) -> Result<ImageInstances, CliError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let instances =
        read_instances(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Ok(ImageInstances { name, instances })
}

fn is_instance_file(text: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .is_some_and(|v| v.get("instances").is_some())
}

/// Instance files are recognised by their top-level `instances` key; any
/// other JSON file is read as a combined index. Directories are scanned for
/// instance files.
fn load_damage_input(
    cfg: &RunConfig,
) -> Result<(Vec<ImageInstances>, Option<DatasetIndex>), CliError> {
    let meta = fs::metadata(&cfg.input).map_err(io_at(&cfg.input))?;
    if meta.is_dir() {
        let files: Vec<PathBuf> = annotation_files(&cfg.input)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        let images = files
            .par_iter()
            .map(|p| load_instance_file(p))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok((images, None));
    }
    let text = fs::read_to_string(&cfg.input).map_err(io_at(&cfg.input))?;
    if is_instance_file(&text) {
        return Ok((vec![load_instance_file(&cfg.input)?], None));
    }
    let index =
        read_index(&text).map_err(|e| CliError::Domain(format!("{}: {e}", cfg.input.display())))?;
    Ok((instances_from_index(&index), Some(index)))
}

fn category_id(spec: &str, index: Option<&DatasetIndex>) -> Result<u64, CliError> {
    if let Ok(id) = spec.parse::<u64>() {
        return Ok(id);
    }
    index
        .and_then(|i| i.categories.id_of(spec))
        .ok_or_else(|| domain(format!("unknown category {spec:?}")))
}

#[derive(Debug, Serialize)]
struct ImageDamageEntry {
    image: String,
    #[serde(flatten)]
    damage: ImageDamage,
}

pub fn run_damage(cfg: &RunConfig) -> Result<(), CliError> {
    let leaf_spec = cfg
        .leaf_category
        .as_deref()
        .ok_or_else(|| domain("damage needs --leaf-category"))?;
    let (images, index) = load_damage_input(cfg)?;
    let leaf = category_id(leaf_spec, index.as_ref())?;
    let diseases: BTreeSet<u64> = if cfg.disease_categories.is_empty() {
        images
            .iter()
            .flat_map(|i| i.instances.iter().map(|m| m.category_id))
            .filter(|&c| c != leaf)
            .collect()
    } else {
        cfg.disease_categories
            .iter()
            .map(|s| category_id(s, index.as_ref()))
            .collect::<Result<_, _>>()?
    };

    let results = images
        .par_iter()
        .map(|img| {
            analyze(&img.instances, leaf, &diseases)
                .map_err(|e| CliError::Domain(format!("{}: {e}", img.name)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let leaves: usize = results.iter().map(|r| r.leaves.len()).sum();
    if leaves == 0 {
        return Err(domain(format!("no leaf instances (category {leaf}) found")));
    }

    let out = cfg.out_dir()?;
    if let Some(format) = cfg.render {
        let jobs: Vec<(&ImageInstances, usize, &[usize])> = images
            .iter()
            .zip(&results)
            .flat_map(|(img, r)| {
                r.leaves
                    .iter()
                    .map(move |l| (img, l.leaf, l.diseases.as_slice()))
            })
            .collect();
        jobs.par_iter().try_for_each(|&(img, leaf_idx, owned)| {
            let leaf_mask = &img.instances[leaf_idx];
            let ext = format.extension();
            write_mask(
                &out.join(format!("{}_leaf{leaf_idx}.{ext}", img.name)),
                leaf_mask.mask(),
                format,
            )?;
            let union = leaf_disease_mask(leaf_mask, owned.iter().map(|&d| &img.instances[d]))?;
            write_mask(
                &out.join(format!("{}_leaf{leaf_idx}_disease.{ext}", img.name)),
                &union,
                format,
            )?;
            Ok::<_, CliError>(())
        })?;
    }

    for (img, r) in images.iter().zip(&results) {
        for l in &r.leaves {
            println!("{} leaf {}: {:.2}% damaged", img.name, l.leaf, l.damage_pct);
        }
        if !r.unowned.is_empty() {
            println!("{} unowned diseases: {:?}", img.name, r.unowned);
        }
    }
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a RunConfig,
        leaf_category: u64,
        disease_categories: &'a BTreeSet<u64>,
        images: Vec<ImageDamageEntry>,
    }
    let report = Report {
        config: cfg,
        leaf_category: leaf,
        disease_categories: &diseases,
        images: images
            .iter()
            .zip(results)
            .map(|(img, damage)| ImageDamageEntry {
                image: img.name.clone(),
                damage,
            })
            .collect(),
    };
    write_file(&out.join("damage_report.json"), to_json(&report).as_bytes())?;
    Ok(())
}

/// Runs a parsed command line and maps the outcome to an exit code.
pub fn run(cli: Cli) -> ExitCode {
    let cfg = match RunConfig::resolve(&cli.common, &cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Validate => run_validate(&cfg),
        Command::Pack { .. } => run_pack(&cfg),
        Command::Split => run_split(&cfg).map(|_| ()),
        Command::Augment { .. } => run_augment(&cfg),
        Command::Evaluate { .. } => run_evaluate(&cfg),
        Command::Damage { .. } => run_damage(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Entry point for the `canopy` binary. Verbosity comes from `CANOPY_LOG`.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CANOPY_LOG", "warn")).init();
    run(Cli::parse())
}
