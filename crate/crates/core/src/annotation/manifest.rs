use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FormatError, GroundTruthItem};
use crate::class::{ClassId, ClassRegistry};

pub const MANIFEST_SCHEMA: &str = "pod-sentry/manifest@1";

/// Relative slack (fraction of the image side) when checking box bounds.
const BOUNDS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    #[serde(rename = "classes")]
    pub registry: ClassRegistry,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<GroundTruthItem>,
}

impl DatasetManifest {
    pub fn new(registry: ClassRegistry, images: Vec<ImageRecord>, annotations: Vec<GroundTruthItem>) -> Self {
        Self { schema: MANIFEST_SCHEMA.to_string(), registry, images, annotations }
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let m: Self = serde_json::from_str(text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(FormatError::Record {
                index: 0,
                reason: format!("schema tag {:?}, expected {MANIFEST_SCHEMA:?}", m.schema),
            });
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_json()).map_err(|e| FormatError::io(path, e))
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn annotations_for<'a>(&'a self, image_id: &'a str) -> impl Iterator<Item = &'a GroundTruthItem> + 'a {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateImageId { image_id: String },
    DanglingAnnotation { annotation: usize, image_id: String },
    UnknownClass { annotation: usize, class_id: ClassId },
    BoxOutOfBounds { annotation: usize, image_id: String },
    EmptyImage { image_id: String },
    EmptySplit { split: Split },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateImageId { image_id } => write!(f, "duplicate image id {image_id:?}"),
            Violation::DanglingAnnotation { annotation, image_id } => {
                write!(f, "annotation {annotation} references absent image {image_id:?}")
            }
            Violation::UnknownClass { annotation, class_id } => {
                write!(f, "annotation {annotation} uses unregistered class {class_id}")
            }
            Violation::BoxOutOfBounds { annotation, image_id } => {
                write!(f, "annotation {annotation} exceeds the bounds of image {image_id:?}")
            }
            Violation::EmptyImage { image_id } => write!(f, "image {image_id:?} has zero size"),
            Violation::EmptySplit { split } => write!(f, "{split} split has no images"),
        }
    }
}

/// Integrity check. An empty list means the manifest is valid.
pub fn validate_manifest(m: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for img in &m.images {
        if !seen.insert(img.id.as_str()) {
            out.push(Violation::DuplicateImageId { image_id: img.id.clone() });
        }
        if img.width == 0 || img.height == 0 {
            out.push(Violation::EmptyImage { image_id: img.id.clone() });
        }
    }
    let by_id: HashMap<&str, &ImageRecord> = m.images.iter().map(|i| (i.id.as_str(), i)).collect();
    for (annotation, a) in m.annotations.iter().enumerate() {
        if !m.registry.contains(a.class_id) {
            out.push(Violation::UnknownClass { annotation, class_id: a.class_id });
        }
        let Some(img) = by_id.get(a.image_id.as_str()) else {
            out.push(Violation::DanglingAnnotation { annotation, image_id: a.image_id.clone() });
            continue;
        };
        let (w, h) = (f64::from(img.width), f64::from(img.height));
        let fits = a
            .bbox
            .to_pixel(w.max(1.0), h.max(1.0))
            .map(|b| b.fits_within(w, h, BOUNDS_TOLERANCE * w.max(h)))
            .unwrap_or(false);
        if !fits {
            out.push(Violation::BoxOutOfBounds { annotation, image_id: a.image_id.clone() });
        }
    }
    for split in [Split::Train, Split::Validation] {
        if !m.images.iter().any(|i| i.split == split) {
            out.push(Violation::EmptySplit { split });
        }
    }
    out
}

/// `ceil(images / batch)`; 0 for an empty batch size.
pub fn steps_per_epoch(images: usize, batch: usize) -> usize {
    if batch == 0 {
        0
    } else {
        images.div_ceil(batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: ClassId,
    pub name: String,
    pub annotations: usize,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub split_sizes: BTreeMap<Split, usize>,
    pub classes: Vec<ClassStats>,
    pub batch_size: usize,
    /// Steps per epoch over the training split.
    pub steps_per_epoch: usize,
}

impl DatasetStats {
    pub fn compute(m: &DatasetManifest, batch_size: usize) -> Self {
        let mut split_sizes = BTreeMap::from([(Split::Train, 0), (Split::Validation, 0)]);
        for img in &m.images {
            *split_sizes.entry(img.split).or_default() += 1;
        }
        let classes = m
            .registry
            .entries()
            .iter()
            .map(|e| {
                let anns: Vec<_> = m.annotations.iter().filter(|a| a.class_id == e.id).collect();
                let images: HashSet<&str> = anns.iter().map(|a| a.image_id.as_str()).collect();
                ClassStats { class_id: e.id, name: e.name.clone(), annotations: anns.len(), images: images.len() }
            })
            .collect();
        Self {
            images: m.images.len(),
            steps_per_epoch: steps_per_epoch(split_sizes[&Split::Train], batch_size),
            split_sizes,
            classes,
            batch_size,
        }
    }
}
