//! Tooling for tea-leaf disease detection datasets.
//!
//! - [`geometry`]: boxes, ROIs, polygons, rotation and crop transforms, IOU.
//! - [`annotation`]: VOC XML and polygon JSON parsing, the combined index,
//!   validation.
//! - [`record`]: CRC-32C framed record files, example payloads, sharding and
//!   the seeded train/eval split.
//! - [`augment`]: seeded rotation and crop expansion (one original becomes
//!   three images).
//! - [`metrics`]: matching, 101-point AP, COCO-style mAP/AR, the simplified
//!   mAP, NMS.
//! - [`damage`]: polygon rasterization, leaf/disease assignment, damage
//!   percentage, mask rendering.
//! - [`cli`]: the `canopy` command line.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```text
//! cargo run --example geometry_iou
//! cargo run --example parse_annotations
//! cargo run --example pack_records
//! cargo run --example train_eval_split
//! cargo run --example augment_dataset
//! cargo run --example evaluate_detections
//! cargo run --example leaf_damage
//! ```

pub mod annotation;
pub mod augment;
pub mod cli;
pub mod damage;
pub mod fsutil;
pub mod geometry;
pub mod metrics;
pub mod record;
