//! Axis-aligned boxes and intersection-over-union.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinate space a box lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// 0-based pixel corners.
    #[default]
    Pixel,
    /// Corners as fractions of image width/height, in `[0, 1]`.
    Normalized,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite, got ({0}, {1}, {2}, {3})")]
    NonFinite(f64, f64, f64, f64),
    #[error("inverted box: x_min={x_min} > x_max={x_max} or y_min={y_min} > y_max={y_max}")]
    Inverted { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("convention mismatch ({0:?} vs {1:?}); normalize both boxes to one convention first")]
    ConventionMismatch(Convention, Convention),
    #[error("image dimensions must be positive, got {0}x{1}")]
    BadDimensions(f64, f64),
}

/// Axis-aligned rectangle in canonical corner form (`x_min <= x_max`, `y_min <= y_max`).
///
/// Fields are private so the canonical-form invariant cannot be broken after
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    convention: Convention,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    #[serde(default, skip_serializing_if = "is_pixel")]
    convention: Convention,
}

fn is_pixel(c: &Convention) -> bool {
    *c == Convention::Pixel
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;

    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max, r.convention)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox { x_min: b.x_min, y_min: b.y_min, x_max: b.x_max, y_max: b.y_max, convention: b.convention }
    }
}

impl BoundingBox {
    /// Builds a box, rejecting non-finite or inverted corners.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, convention: Convention) -> Result<Self, GeometryError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite(x_min, y_min, x_max, y_max));
        }
        if x_min > x_max || y_min > y_max {
            return Err(GeometryError::Inverted { x_min, y_min, x_max, y_max });
        }
        Ok(Self { x_min, y_min, x_max, y_max, convention })
    }

    pub fn pixel(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        Self::new(x_min, y_min, x_max, y_max, Convention::Pixel)
    }

    pub fn normalized(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        Self::new(x_min, y_min, x_max, y_max, Convention::Normalized)
    }

    /// Box from center/size form.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64, convention: Convention) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0, convention)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Overlapping region, or `None` when the boxes do not intersect or use
    /// different conventions. Touching edges yield a zero-area box.
    pub fn intersection(&self, other: &Self) -> Option<Self> {
        if self.convention != other.convention {
            return None;
        }
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(Self { x_min, y_min, x_max, y_max, convention: self.convention })
    }

    /// Whether the box lies inside `[0, width] x [0, height]` (pixel) or the
    /// unit square (normalized), allowing `tol` slack on each side.
    pub fn fits_within(&self, width: f64, height: f64, tol: f64) -> bool {
        let (w, h) = match self.convention {
            Convention::Pixel => (width, height),
            Convention::Normalized => (1.0, 1.0),
        };
        self.x_min >= -tol && self.y_min >= -tol && self.x_max <= w + tol && self.y_max <= h + tol
    }

    /// Converts to pixel coordinates for an image of the given size.
    pub fn to_pixel(&self, width: f64, height: f64) -> Result<Self, GeometryError> {
        check_dims(width, height)?;
        Ok(match self.convention {
            Convention::Pixel => *self,
            Convention::Normalized => Self {
                x_min: self.x_min * width,
                y_min: self.y_min * height,
                x_max: self.x_max * width,
                y_max: self.y_max * height,
                convention: Convention::Pixel,
            },
        })
    }

    /// Converts to normalized coordinates for an image of the given size.
    pub fn to_normalized(&self, width: f64, height: f64) -> Result<Self, GeometryError> {
        check_dims(width, height)?;
        Ok(match self.convention {
            Convention::Normalized => *self,
            Convention::Pixel => Self {
                x_min: self.x_min / width,
                y_min: self.y_min / height,
                x_max: self.x_max / width,
                y_max: self.y_max / height,
                convention: Convention::Normalized,
            },
        })
    }

    /// Applies `p -> (p - offset) * scale` to both corners.
    pub fn translate_scale(&self, dx: f64, dy: f64, scale: f64) -> Self {
        Self {
            x_min: (self.x_min - dx) * scale,
            y_min: (self.y_min - dy) * scale,
            x_max: (self.x_max - dx) * scale,
            y_max: (self.y_max - dy) * scale,
            convention: self.convention,
        }
    }
}

fn check_dims(width: f64, height: f64) -> Result<(), GeometryError> {
    if width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::BadDimensions(width, height))
    }
}

/// Intersection area over union area.
///
/// Boxes must share a convention. Degenerate (zero-area) boxes score 0
/// against everything, themselves included.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64, GeometryError> {
    if a.convention != b.convention {
        return Err(GeometryError::ConventionMismatch(a.convention, b.convention));
    }
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return Ok(0.0);
    }
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}
