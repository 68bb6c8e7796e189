//! Detection interchange documents (`pod-sentry/detections@1`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DetectionItem, FormatError};
use crate::class::ClassId;
use crate::geometry::{BoundingBox, Convention};

pub const DETECTIONS_SCHEMA: &str = "pod-sentry/detections@1";

#[derive(Serialize, Deserialize)]
struct WireBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDetection {
    image_id: String,
    class_id: u32,
    score: f64,
    #[serde(rename = "box")]
    bbox: WireBox,
    convention: Convention,
}

#[derive(Serialize)]
struct WireDocument<'a> {
    schema: &'a str,
    detections: Vec<WireDetection>,
}

fn record_err(index: usize, reason: impl ToString) -> FormatError {
    FormatError::Record { index, reason: reason.to_string() }
}

/// Parses and validates an interchange document. Record indices in errors
/// are 0-based positions in the `detections` array.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionItem>, FormatError> {
    let doc: Value = serde_json::from_str(text)?;
    let obj = doc.as_object().ok_or_else(|| record_err(0, "document is not a JSON object"))?;
    match obj.get("schema").and_then(Value::as_str) {
        Some(DETECTIONS_SCHEMA) => {}
        other => return Err(record_err(0, format!("schema tag {other:?}, expected {DETECTIONS_SCHEMA:?}"))),
    }
    let records =
        obj.get("detections").and_then(Value::as_array).ok_or_else(|| record_err(0, "missing \"detections\" array"))?;

    records
        .iter()
        .enumerate()
        .map(|(index, rec)| {
            let w: WireDetection = serde_json::from_value(rec.clone()).map_err(|e| record_err(index, e))?;
            let bbox = BoundingBox::new(w.bbox.x_min, w.bbox.y_min, w.bbox.x_max, w.bbox.y_max, w.convention)
                .map_err(|e| record_err(index, e))?;
            if w.convention == Convention::Normalized && !bbox.fits_within(1.0, 1.0, 0.0) {
                return Err(record_err(index, "normalized box leaves the unit square"));
            }
            DetectionItem::new(w.image_id, ClassId(w.class_id), bbox, w.score).map_err(|e| record_err(index, e))
        })
        .collect()
}

/// Renders items sorted by image id, then descending score (stable).
pub fn render_detections(items: &[DetectionItem]) -> String {
    let mut sorted: Vec<&DetectionItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id).then_with(|| b.score.total_cmp(&a.score)));
    let doc = WireDocument {
        schema: DETECTIONS_SCHEMA,
        detections: sorted
            .into_iter()
            .map(|d| WireDetection {
                image_id: d.image_id.clone(),
                class_id: d.class_id.0,
                score: d.score,
                bbox: WireBox {
                    x_min: d.bbox.x_min(),
                    y_min: d.bbox.y_min(),
                    x_max: d.bbox.x_max(),
                    y_max: d.bbox.y_max(),
                },
                convention: d.bbox.convention(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("detections serialize");
    s.push('\n');
    s
}

pub fn read_detections_file(path: &Path) -> Result<Vec<DetectionItem>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_detections(&text)
}

pub fn write_detections_file(path: &Path, items: &[DetectionItem]) -> Result<(), FormatError> {
    std::fs::write(path, render_detections(items)).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(img: &str, score: f64) -> DetectionItem {
        DetectionItem::new(img, ClassId(1), BoundingBox::pixel(1.5, 2., 30., 40.25).unwrap(), score).unwrap()
    }

    #[test]
    fn write_read_roundtrip_sorted() {
        let items = vec![det("b", 0.3), det("a", 0.2), det("a", 0.9)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        write_detections_file(&path, &items).unwrap();
        let back = read_detections_file(&path).unwrap();
        assert_eq!(back, vec![det("a", 0.9), det("a", 0.2), det("b", 0.3)]);
    }

    #[test]
    fn field_names_are_exact() {
        let text = render_detections(&[det("a", 0.5)]);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema"], DETECTIONS_SCHEMA);
        let r = &v["detections"][0];
        for key in ["image_id", "class_id", "score", "box", "convention"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        assert_eq!(r["convention"], "pixel");
        assert_eq!(r["box"]["y_max"], 40.25);
    }

    #[test]
    fn score_out_of_range_names_record() {
        let text = r#"{"schema":"pod-sentry/detections@1","detections":[
            {"image_id":"a","class_id":0,"score":0.5,"box":{"x_min":0,"y_min":0,"x_max":1,"y_max":1},"convention":"pixel"},
            {"image_id":"a","class_id":0,"score":1.5,"box":{"x_min":0,"y_min":0,"x_max":1,"y_max":1},"convention":"pixel"}]}"#;
        match parse_detections(text).unwrap_err() {
            FormatError::Record { index, reason } => {
                assert_eq!(index, 1);
                assert!(reason.contains("1.5"), "{reason}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_and_bad_schema() {
        let empty = r#"{"schema":"pod-sentry/detections@1","detections":[]}"#;
        assert!(parse_detections(empty).unwrap().is_empty());
        let wrong = r#"{"schema":"other@1","detections":[]}"#;
        assert!(matches!(parse_detections(wrong), Err(FormatError::Record { .. })));
        assert!(matches!(parse_detections("{"), Err(FormatError::Json(_))));
    }
}
