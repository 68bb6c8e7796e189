//! YOLO label files: one `class_id cx cy w h` line per object, normalized.

use std::fmt::Write as _;

use super::{FormatError, GroundTruthItem};
use crate::class::{ClassId, ClassRegistry};
use crate::geometry::{BoundingBox, Convention};

/// Slack allowed outside `[0, 1]` for normalized coordinates.
pub const YOLO_TOLERANCE: f64 = 1e-6;

fn line_err(line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Line { line, reason: reason.into() }
}

/// Parses a label file for one image of `dims = (width, height)` pixels.
///
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_yolo_labels(
    text: &str,
    image_id: &str,
    dims: (u32, u32),
    registry: &ClassRegistry,
) -> Result<Vec<GroundTruthItem>, FormatError> {
    let (w, h) = (f64::from(dims.0), f64::from(dims.1));
    if dims.0 == 0 || dims.1 == 0 {
        return Err(line_err(0, format!("image dimensions {}x{} are empty", dims.0, dims.1)));
    }
    let mut items = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(line_err(line, format!("expected 5 fields (class cx cy w h), found {}", fields.len())));
        }
        let class: u64 =
            fields[0].parse().map_err(|_| line_err(line, format!("class id {:?} is not an integer", fields[0])))?;
        let mut vals = [0.0f64; 4];
        for (slot, (name, text)) in vals.iter_mut().zip(["cx", "cy", "w", "h"].iter().zip(&fields[1..])) {
            let v: f64 = text.parse().map_err(|_| line_err(line, format!("{name} {text:?} is not a number")))?;
            if !v.is_finite() {
                return Err(line_err(line, format!("{name} is not finite")));
            }
            *slot = v;
        }
        let id = u32::try_from(class)
            .ok()
            .map(ClassId)
            .filter(|id| registry.contains(*id))
            .ok_or(FormatError::UnknownClassId { line, id: class })?;

        let [cx, cy, bw, bh] = vals;
        let corners = [cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0];
        let in_range = |v: f64| (-YOLO_TOLERANCE..=1.0 + YOLO_TOLERANCE).contains(&v);
        if !vals.iter().chain(corners.iter()).all(|v| in_range(*v)) || bw < 0.0 || bh < 0.0 {
            return Err(line_err(line, format!("box ({cx}, {cy}, {bw}, {bh}) leaves the unit square")));
        }
        let c = corners.map(|v| v.clamp(0.0, 1.0));
        let bbox = BoundingBox::new(c[0] * w, c[1] * h, c[2] * w, c[3] * h, Convention::Pixel)?;
        items.push(GroundTruthItem { image_id: image_id.to_string(), class_id: id, bbox });
    }
    Ok(items)
}

/// Renders one image's items as label lines with 6-decimal fields.
pub fn emit_yolo_labels(items: &[GroundTruthItem], dims: (u32, u32)) -> Result<String, FormatError> {
    let (w, h) = (f64::from(dims.0), f64::from(dims.1));
    let mut out = String::new();
    for (index, item) in items.iter().enumerate() {
        if item.image_id != items[0].image_id {
            return Err(FormatError::Item {
                index,
                reason: format!("belongs to image {:?}, not {:?}", item.image_id, items[0].image_id),
            });
        }
        let b = item.bbox.to_pixel(w, h)?;
        let tol = YOLO_TOLERANCE * w.max(h);
        if !b.fits_within(w, h, tol) {
            return Err(FormatError::Item {
                index,
                reason: format!("box {b:?} exceeds the {}x{} image", dims.0, dims.1),
            });
        }
        let (cx, cy) = b.center();
        if index > 0 {
            out.push('\n');
        }
        write!(out, "{} {:.6} {:.6} {:.6} {:.6}", item.class_id, cx / w, cy / h, b.width() / w, b.height() / h)
            .expect("writing to a String cannot fail");
    }
    Ok(out)
}
