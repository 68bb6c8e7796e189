//! Annotation and detection interchange formats, plus the dataset manifest.
//!
//! Everything in memory is 0-based pixel corners. Formats convert at the
//! boundary.

mod detections;
mod manifest;
mod voc;
mod yolo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::ClassId;
use crate::geometry::{BoundingBox, GeometryError};

pub use detections::{
    parse_detections, read_detections_file, render_detections, write_detections_file, DETECTIONS_SCHEMA,
};
pub use manifest::{
    steps_per_epoch, validate_manifest, DatasetManifest, DatasetStats, ImageRecord, Split, Violation, MANIFEST_SCHEMA,
};
pub use voc::{emit_voc_xml, parse_voc_xml, VocImage};
pub use yolo::{emit_yolo_labels, parse_yolo_labels, YOLO_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthItem {
    pub image_id: String,
    pub class_id: ClassId,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct DetectionItem {
    pub image_id: String,
    pub class_id: ClassId,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: String,
    class_id: ClassId,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    score: f64,
}

impl TryFrom<RawDetection> for DetectionItem {
    type Error = FormatError;

    fn try_from(r: RawDetection) -> Result<Self, Self::Error> {
        DetectionItem::new(r.image_id, r.class_id, r.bbox, r.score)
    }
}

impl DetectionItem {
    /// Rejects scores outside `[0, 1]` (no clamping).
    pub fn new(
        image_id: impl Into<String>,
        class_id: ClassId,
        bbox: BoundingBox,
        score: f64,
    ) -> Result<Self, FormatError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(FormatError::ScoreOutOfRange(score));
        }
        Ok(Self { image_id: image_id.into(), class_id, bbox, score })
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("line {line}: unknown class id {id}")]
    UnknownClassId { line: usize, id: u64 },
    #[error("{path} (line {line}, column {column}): {reason}")]
    Element { path: String, line: u32, column: u32, reason: String },
    #[error("xml syntax (line {line}, column {column}): {source}")]
    Xml {
        line: u32,
        column: u32,
        #[source]
        source: roxmltree::Error,
    },
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("item {index}: {reason}")]
    Item { index: usize, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<roxmltree::Error> for FormatError {
    fn from(source: roxmltree::Error) -> Self {
        let pos = source.pos();
        Self::Xml { line: pos.row, column: pos.col, source }
    }
}

impl FormatError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}
