//! Sources of detections for an image.
//!
//! * `file` replays a detection interchange document.
//! * `mock` draws seeded pseudo-detections. Pods are upright ellipsoids, so
//!   boxes are 20–45 % of the image width with a height/width ratio of
//!   1.3–1.8; each pod gets one box per class, jittered by up to 2 % of its
//!   size, with a dominant class scoring 0.60–0.97 and the rest 0.01–0.10.
//! * `external` posts the PNG-encoded image to an HTTP endpoint
//!   (`POST <endpoint>?image_id=<id>`, `Content-Type: image/png`) and expects a
//!   detection interchange document back.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{parse_detections, read_detections_file, DetectionItem, FormatError};
use crate::class::ClassId;
use crate::geometry::BoundingBox;
use crate::preprocess::encode_png;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{kind} backend requires parameter {name:?}")]
    MissingParameter { kind: BackendKind, name: &'static str },
    #[error("bad backend parameter {name:?}: {reason}")]
    BadParameter { name: &'static str, reason: String },
    #[error("unknown backend kind {0:?}")]
    UnknownKind(String),
    #[error("no stored detections for image {0:?}")]
    UnknownImage(String),
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("backend answered HTTP {0}")]
    Status(u16),
    #[error("backend response violates the interchange schema: {0}")]
    Schema(FormatError),
    #[error("loading detections: {0}")]
    Load(FormatError),
}

impl BackendError {
    /// Whether retrying the same request could succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Transport(_)) || matches!(self, BackendError::Status(code) if *code >= 500)
    }

    /// Failure talking to the backend, as opposed to a bad request or setup.
    pub fn is_upstream(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Status(_) | BackendError::Schema(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    File,
    Mock,
    External,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::File => "file",
            BackendKind::Mock => "mock",
            BackendKind::External => "external",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::File,
            parameters: BTreeMap::from([("path".into(), path.into().display().to_string())]),
        }
    }

    pub fn mock(seed: u64) -> Self {
        Self { kind: BackendKind::Mock, parameters: BTreeMap::from([("seed".into(), seed.to_string())]) }
    }

    pub fn external(endpoint: &str) -> Self {
        Self { kind: BackendKind::External, parameters: BTreeMap::from([("endpoint".into(), endpoint.to_string())]) }
    }

    fn param(&self, name: &'static str) -> Result<&str, BackendError> {
        self.parameters.get(name).map(String::as_str).ok_or(BackendError::MissingParameter { kind: self.kind, name })
    }

    /// Checks required parameters and builds the backend.
    pub fn build(&self) -> Result<Box<dyn DetectionBackend>, BackendError> {
        Ok(match self.kind {
            BackendKind::File => Box::new(FileBackend::load(self.clone())?),
            BackendKind::Mock => Box::new(MockBackend::new(self.clone())?),
            BackendKind::External => Box::new(ExternalBackend::new(self.clone())?),
        })
    }
}

/// `file:<path>`, `mock:<seed>` or `external:<url>`.
impl FromStr for BackendDescriptor {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "file" if !arg.is_empty() => Ok(Self::file(arg)),
            "file" => Err(BackendError::MissingParameter { kind: BackendKind::File, name: "path" }),
            "mock" => {
                let seed = if arg.is_empty() {
                    0
                } else {
                    arg.parse().map_err(|_| BackendError::BadParameter {
                        name: "seed",
                        reason: format!("{arg:?} is not an unsigned integer"),
                    })?
                };
                Ok(Self::mock(seed))
            }
            "external" if !arg.is_empty() => Ok(Self::external(arg)),
            "external" => Err(BackendError::MissingParameter { kind: BackendKind::External, name: "endpoint" }),
            other => Err(BackendError::UnknownKind(other.to_string())),
        }
    }
}

pub trait DetectionBackend: Send + Sync {
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<Vec<DetectionItem>, BackendError>;
    fn descriptor(&self) -> &BackendDescriptor;
}

pub struct FileBackend {
    descriptor: BackendDescriptor,
    index: HashMap<String, Vec<DetectionItem>>,
}

impl FileBackend {
    pub fn load(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        let path = PathBuf::from(descriptor.param("path")?);
        let items = read_detections_file(&path).map_err(BackendError::Load)?;
        let mut index: HashMap<String, Vec<DetectionItem>> = HashMap::new();
        for d in items {
            index.entry(d.image_id.clone()).or_default().push(d);
        }
        Ok(Self { descriptor, index })
    }
}

impl DetectionBackend for FileBackend {
    fn detect(&self, image_id: &str, _image: &RgbImage) -> Result<Vec<DetectionItem>, BackendError> {
        self.index.get(image_id).cloned().ok_or_else(|| BackendError::UnknownImage(image_id.to_string()))
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}

pub struct MockBackend {
    descriptor: BackendDescriptor,
    seed: u64,
    classes: u32,
}

impl MockBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        let seed = descriptor
            .param("seed")?
            .parse()
            .map_err(|_| BackendError::BadParameter { name: "seed", reason: "not an unsigned integer".into() })?;
        let classes = match descriptor.parameters.get("classes") {
            Some(c) => c
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or(BackendError::BadParameter { name: "classes", reason: "not a positive integer".into() })?,
            None => 3,
        };
        Ok(Self { descriptor, seed, classes })
    }
}

impl DetectionBackend for MockBackend {
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<Vec<DetectionItem>, BackendError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(image_id.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());

        let (w, ht) = (f64::from(image.width().max(1)), f64::from(image.height().max(1)));
        let pods = rng.random_range(1..=3);
        let mut out = Vec::new();
        for _ in 0..pods {
            let bw = (w * rng.random_range(0.20..0.45)).min(w);
            let bh = (bw * rng.random_range(1.3..1.8)).min(ht);
            let x0 = rng.random_range(0.0..=(w - bw));
            let y0 = rng.random_range(0.0..=(ht - bh));
            let dominant = rng.random_range(0..self.classes);
            for c in 0..self.classes {
                let score = if c == dominant { rng.random_range(0.60..0.97) } else { rng.random_range(0.01..0.10) };
                let jx = bw * rng.random_range(-0.02..0.02);
                let jy = bh * rng.random_range(-0.02..0.02);
                let bbox = BoundingBox::pixel(
                    (x0 + jx).clamp(0.0, w),
                    (y0 + jy).clamp(0.0, ht),
                    (x0 + bw + jx).clamp(0.0, w),
                    (y0 + bh + jy).clamp(0.0, ht),
                )
                .expect("clamped corners stay ordered");
                out.push(DetectionItem::new(image_id, ClassId(c), bbox, score).expect("mock scores lie in [0, 1]"));
            }
        }
        Ok(out)
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}

pub struct ExternalBackend {
    descriptor: BackendDescriptor,
    endpoint: String,
    agent: ureq::Agent,
}

impl ExternalBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        let endpoint = descriptor.param("endpoint")?.to_string();
        let timeout = match descriptor.parameters.get("timeout_ms") {
            Some(t) => t
                .parse()
                .map_err(|_| BackendError::BadParameter { name: "timeout_ms", reason: "not an integer".into() })?,
            None => 30_000,
        };
        let agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_millis(timeout))).build().into();
        Ok(Self { descriptor, endpoint, agent })
    }
}

impl DetectionBackend for ExternalBackend {
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<Vec<DetectionItem>, BackendError> {
        let body = encode_png(image);
        let resp = self
            .agent
            .post(&self.endpoint)
            .query("image_id", image_id)
            .header("content-type", "image/png")
            .send(&body[..]);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) => return Err(BackendError::Status(code)),
            Err(e) => return Err(BackendError::Transport(e.to_string())),
        };
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        let items = parse_detections(&text).map_err(BackendError::Schema)?;
        if let Some((index, d)) = items.iter().enumerate().find(|(_, d)| d.image_id != image_id) {
            return Err(BackendError::Schema(FormatError::Record {
                index,
                reason: format!("image_id {:?} does not match request {image_id:?}", d.image_id),
            }));
        }
        Ok(items)
    }

    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }
}
