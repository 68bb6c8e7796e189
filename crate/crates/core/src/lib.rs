//! Dataset tooling, detection evaluation and diagnosis post-processing for
//! cocoa pod disease imagery.
//!
//! Boxes are 0-based pixel corners in memory; every file format converts at
//! its boundary. The crate is I/O-free except for the explicit load/save
//! helpers, the preprocessing pipeline and the external backend.

pub mod annotation;
pub mod backend;
pub mod class;
pub mod diagnosis;
pub mod eval;
pub mod geometry;
pub mod metrics;
pub mod preprocess;
pub mod trainlog;

pub use annotation::{
    DatasetManifest, DatasetStats, DetectionItem, FormatError, GroundTruthItem, ImageRecord, Split, Violation,
};
pub use backend::{BackendDescriptor, BackendError, BackendKind, DetectionBackend};
pub use class::{ClassEntry, ClassId, ClassRegistry};
pub use diagnosis::{DiagnoseConfig, Diagnosis, DiseaseInfo, KnowledgeBase, PodDiagnosis};
pub use eval::{evaluate, EvalConfig, EvaluationReport};
pub use geometry::{iou, BoundingBox, Convention, GeometryError};
pub use metrics::{
    accuracy, average_precision, mean_ap, precision_recall, ApResult, ConfusionCounts, MapResult, PrCurvePoint,
};
pub use preprocess::{PreprocessConfig, DEFAULT_TARGET_SIZE};
