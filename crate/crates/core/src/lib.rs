//! Object detection evaluation toolkit.
//!
//! - [`geom`]: boxes, IOU, context scaling and IOU level-set sampling.
//! - [`data`]: COCO-style annotations, detection results and classifier outputs.
//! - [`eval`]: greedy matching, PR curves and COCO-style AP breakdowns.
//! - [`upperbound`]: upper-bound AP from classifier-labeled target boxes.
//! - [`diagnose`]: sequential error attribution (background, localization,
//!   duplicates, misses).
//! - [`probes`]: invariance-probe datasets and context-scale crops.
//! - [`report`]: JSON and CSV emission.
//! - [`synth`]: seeded synthetic datasets, classifiers and detectors.

pub mod data;
pub mod diagnose;
pub mod error;
pub mod eval;
pub mod geom;
pub mod probes;
pub mod report;
pub mod synth;
pub mod upperbound;

pub use data::{
    AreaThresholds, Category, ClassifierOutput, Dataset, Detection, GroundTruth, ImageInfo,
    LoadOptions, NeighborPrediction, Prediction, SizeClass,
};
pub use diagnose::{DiagnoseConfig, DiagnosisReport};
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalReport, Interpolation};
pub use geom::{iou, BBox, CornerCurve};
pub use probes::{ContextMode, ContextScale, ProbeOutput, ProbeSpec};
pub use report::ReportFormat;
pub use upperbound::AggregationMode;
