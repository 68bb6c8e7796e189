//! Square crop, resize to the training resolution, box re-mapping and the
//! stratified train/validation split.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, ImageDecoder, ImageReader, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{DatasetManifest, FormatError, GroundTruthItem, ImageRecord, Split};
use crate::class::ClassId;
use crate::geometry::BoundingBox;

pub const DEFAULT_TARGET_SIZE: u32 = 640;
pub const PREPROCESS_LOG_SCHEMA: &str = "pod-sentry/preprocess-log@1";
pub const CROPS_SCHEMA: &str = "pod-sentry/crops@1";
/// Resampling kernel, echoed into every processing log.
pub const RESAMPLING: &str = "bilinear";
/// Boxes smaller than this (output px²) after cropping are dropped.
pub const MIN_BOX_AREA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("crop rectangle {rect:?} does not fit a {width}x{height} image")]
    CropOutside { rect: CropRect, width: u32, height: u32 },
    #[error("crop rectangle {0:?} is not square")]
    CropNotSquare(CropRect),
    #[error("no crop rectangle for image {0:?}")]
    MissingCrop(String),
    #[error("image is empty")]
    EmptyImage,
    #[error("target size must be positive")]
    BadTarget,
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
    #[error("class {class_id} has {images} image(s); stratifying needs at least 2")]
    TooFewImages { class_id: ClassId, images: usize },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: decoded size {actual:?} differs from manifest {declared:?}")]
    SizeMismatch { path: String, declared: (u32, u32), actual: (u32, u32) },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CropMode {
    #[default]
    Center,
    /// Per-image rectangles from a sidecar file.
    CustomRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_size: u32,
    pub crop_mode: CropMode,
    pub split_ratio: f64,
    pub split_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { target_size: DEFAULT_TARGET_SIZE, crop_mode: CropMode::Center, split_ratio: 0.2, split_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropRect {
    pub fn side(&self) -> u32 {
        self.width
    }
}

/// Largest centered square; the odd pixel of the remainder stays on the
/// trailing edge.
pub fn center_square(width: u32, height: u32) -> CropRect {
    let side = width.min(height);
    CropRect { x: (width - side) / 2, y: (height - side) / 2, width: side, height: side }
}

/// Cuts a square out of `img` without resampling. `rect = None` means the
/// centered square.
pub fn crop_to_square(img: &RgbImage, rect: Option<CropRect>) -> Result<(RgbImage, CropRect), PreprocessError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(PreprocessError::EmptyImage);
    }
    let rect = rect.unwrap_or_else(|| center_square(w, h));
    if rect.width != rect.height {
        return Err(PreprocessError::CropNotSquare(rect));
    }
    let fits = rect.width > 0
        && u64::from(rect.x) + u64::from(rect.width) <= u64::from(w)
        && u64::from(rect.y) + u64::from(rect.height) <= u64::from(h);
    if !fits {
        return Err(PreprocessError::CropOutside { rect, width: w, height: h });
    }
    if rect.x == 0 && rect.y == 0 && rect.width == w && rect.height == h {
        return Ok((img.clone(), rect));
    }
    let out = imageops::crop_imm(img, rect.x, rect.y, rect.width, rect.height).to_image();
    Ok((out, rect))
}

/// Bilinear resize to `target x target`. Same-size input is returned as is.
pub fn resize(img: &RgbImage, target: u32) -> Result<RgbImage, PreprocessError> {
    if target == 0 {
        return Err(PreprocessError::BadTarget);
    }
    if img.width() == 0 || img.height() == 0 {
        return Err(PreprocessError::EmptyImage);
    }
    if img.dimensions() == (target, target) {
        return Ok(img.clone());
    }
    Ok(imageops::resize(img, target, target, imageops::FilterType::Triangle))
}

/// Maps a source-pixel box through crop + uniform scale. Returns `None` when
/// nothing of the box survives or the remainder is under [`MIN_BOX_AREA`].
pub fn transform_box(b: &BoundingBox, crop: CropRect, target: u32) -> Option<BoundingBox> {
    let window = BoundingBox::pixel(
        f64::from(crop.x),
        f64::from(crop.y),
        f64::from(crop.x) + f64::from(crop.width),
        f64::from(crop.y) + f64::from(crop.height),
    )
    .ok()?;
    let inside = b.intersection(&window)?;
    let scale = f64::from(target) / f64::from(crop.width);
    let t = f64::from(target);
    let mapped = inside.translate_scale(f64::from(crop.x), f64::from(crop.y), scale);
    let clipped = BoundingBox::pixel(
        mapped.x_min().clamp(0.0, t),
        mapped.y_min().clamp(0.0, t),
        mapped.x_max().clamp(0.0, t),
        mapped.y_max().clamp(0.0, t),
    )
    .ok()?;
    (clipped.area() >= MIN_BOX_AREA).then_some(clipped)
}

/// Decodes an image file, honoring its stored orientation tag.
pub fn load_rgb(path: &Path) -> Result<RgbImage, PreprocessError> {
    let p = path.display().to_string();
    let reader = ImageReader::open(path)
        .map_err(|source| PreprocessError::Io { path: p.clone(), source })?
        .with_guessed_format()
        .map_err(|source| PreprocessError::Io { path: p.clone(), source })?;
    decode(reader, &p)
}

/// Decodes in-memory image bytes, honoring the orientation tag.
pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, PreprocessError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|source| PreprocessError::Io { path: "<memory>".into(), source })?;
    decode(reader, "<memory>")
}

fn decode<R: std::io::BufRead + std::io::Seek>(
    reader: ImageReader<R>,
    path: &str,
) -> Result<RgbImage, PreprocessError> {
    let err = |source| PreprocessError::Decode { path: path.to_string(), source };
    let mut decoder = reader.into_decoder().map_err(err)?;
    let orientation = decoder.orientation().map_err(err)?;
    let mut img = DynamicImage::from_decoder(decoder).map_err(err)?;
    img.apply_orientation(orientation);
    Ok(img.into_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

/// Square crop then resize; the shared path of the pipeline and the service.
pub fn normalize_image(
    img: &RgbImage,
    rect: Option<CropRect>,
    target: u32,
) -> Result<(RgbImage, CropRect), PreprocessError> {
    let (square, rect) = crop_to_square(img, rect)?;
    Ok((resize(&square, target)?, rect))
}

fn image_strata(m: &DatasetManifest) -> BTreeMap<Option<ClassId>, Vec<usize>> {
    let mut strata: BTreeMap<Option<ClassId>, Vec<usize>> = BTreeMap::new();
    for (i, img) in m.images.iter().enumerate() {
        let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
        for a in m.annotations_for(&img.id) {
            *counts.entry(a.class_id).or_default() += 1;
        }
        // Most frequent class; ties to the lower id.
        let dominant = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(c, _)| *c);
        strata.entry(dominant).or_default().push(i);
    }
    strata
}

/// Stratified, seeded train/validation assignment.
///
/// Images are grouped by their most frequent annotated class (unannotated
/// images form their own group). Within each group, `round(n * ratio)`
/// images (at least 1, at most n-1) go to validation after a seeded shuffle
/// of the id-sorted group.
pub fn split_dataset(m: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest, PreprocessError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PreprocessError::BadRatio(ratio));
    }
    for e in m.registry.entries() {
        let mut ids: Vec<&str> =
            m.annotations.iter().filter(|a| a.class_id == e.id).map(|a| a.image_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() == 1 {
            return Err(PreprocessError::TooFewImages { class_id: e.id, images: 1 });
        }
    }

    let mut out = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (stratum, mut members) in image_strata(m) {
        members.sort_by(|a, b| m.images[*a].id.cmp(&m.images[*b].id));
        members.shuffle(&mut rng);
        let n = members.len();
        let k = if n < 2 {
            // A lone unannotated image cannot be stratified; keep it in train.
            debug_assert!(stratum.is_none() || n == 0);
            0
        } else {
            ((n as f64 * ratio).round() as usize).clamp(1, n - 1)
        };
        for (pos, idx) in members.iter().enumerate() {
            out.images[*idx].split = if pos < k { Split::Validation } else { Split::Train };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub image_id: String,
    pub source: PathBuf,
    pub crop: Option<CropRect>,
    pub scale: Option<f64>,
    pub output: Option<PathBuf>,
    pub dropped_annotations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingLog {
    pub schema: String,
    pub resampling: String,
    pub target_size: u32,
    pub records: Vec<LogRecord>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: DatasetManifest,
    pub log: ProcessingLog,
}

impl PipelineOutcome {
    pub fn failures(&self) -> usize {
        self.log.records.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn is_clean(&self) -> bool {
        self.failures() == 0
    }
}

/// Sidecar crop rectangles keyed by image id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CropSidecar {
    pub schema: String,
    pub crops: BTreeMap<String, CropRect>,
}

impl CropSidecar {
    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PreprocessError::Io { path: path.display().to_string(), source })?;
        let s: Self = serde_json::from_str(&text).map_err(FormatError::from)?;
        if s.schema != CROPS_SCHEMA {
            return Err(FormatError::Record {
                index: 0,
                reason: format!("schema tag {:?}, expected {CROPS_SCHEMA:?}", s.schema),
            }
            .into());
        }
        Ok(s)
    }
}

fn output_name(image_id: &str) -> String {
    let safe: String =
        image_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    format!("{safe}.png")
}

struct Processed {
    record: ImageRecord,
    annotations: Vec<GroundTruthItem>,
    log: LogRecord,
}

fn process_one(
    img: &ImageRecord,
    anns: &[&GroundTruthItem],
    config: &PreprocessConfig,
    crops: Option<&CropSidecar>,
    source_root: &Path,
    output_dir: &Path,
) -> Result<Processed, Box<(LogRecord, PreprocessError)>> {
    let source = source_root.join(&img.path);
    let fail = |e: PreprocessError| {
        Box::new((
            LogRecord {
                image_id: img.id.clone(),
                source: source.clone(),
                crop: None,
                scale: None,
                output: None,
                dropped_annotations: anns.len(),
                error: Some(e.to_string()),
            },
            e,
        ))
    };
    let raster = load_rgb(&source).map_err(fail)?;
    if raster.dimensions() != (img.width, img.height) {
        return Err(fail(PreprocessError::SizeMismatch {
            path: source.display().to_string(),
            declared: (img.width, img.height),
            actual: raster.dimensions(),
        }));
    }
    let rect = match config.crop_mode {
        CropMode::Center => None,
        CropMode::CustomRect => Some(
            crops
                .and_then(|c| c.crops.get(&img.id).copied())
                .ok_or_else(|| fail(PreprocessError::MissingCrop(img.id.clone())))?,
        ),
    };
    let (out, rect) = normalize_image(&raster, rect, config.target_size).map_err(fail)?;

    let rel = PathBuf::from("images").join(output_name(&img.id));
    let dest = output_dir.join(&rel);
    std::fs::write(&dest, encode_png(&out))
        .map_err(|source| fail(PreprocessError::Io { path: dest.display().to_string(), source }))?;

    let (w, h) = (f64::from(img.width), f64::from(img.height));
    let mut kept = Vec::new();
    for a in anns {
        let mapped = a.bbox.to_pixel(w, h).ok().and_then(|b| transform_box(&b, rect, config.target_size));
        match mapped {
            Some(bbox) => kept.push(GroundTruthItem { image_id: a.image_id.clone(), class_id: a.class_id, bbox }),
            None => tracing::warn!(image = %img.id, "annotation dropped by crop"),
        }
    }
    Ok(Processed {
        record: ImageRecord {
            id: img.id.clone(),
            path: rel.clone(),
            width: config.target_size,
            height: config.target_size,
            split: img.split,
        },
        log: LogRecord {
            image_id: img.id.clone(),
            source,
            crop: Some(rect),
            scale: Some(f64::from(config.target_size) / f64::from(rect.width)),
            output: Some(rel),
            dropped_annotations: anns.len() - kept.len(),
            error: None,
        },
        annotations: kept,
    })
}

/// Crops, resizes and re-labels every image of `manifest`, writing PNGs
/// under `output_dir/images`. Per-image failures are logged and skipped;
/// the output manifest and log follow input order.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    config: &PreprocessConfig,
    crops: Option<&CropSidecar>,
    source_root: &Path,
    output_dir: &Path,
) -> Result<PipelineOutcome, PreprocessError> {
    if config.target_size == 0 {
        return Err(PreprocessError::BadTarget);
    }
    let images_dir = output_dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|source| PreprocessError::Io { path: images_dir.display().to_string(), source })?;
    let mut by_image: HashMap<&str, Vec<&GroundTruthItem>> = HashMap::new();
    for a in &manifest.annotations {
        by_image.entry(a.image_id.as_str()).or_default().push(a);
    }
    let results: Vec<Result<Processed, Box<(LogRecord, PreprocessError)>>> = manifest
        .images
        .par_iter()
        .map(|img| {
            let anns = by_image.get(img.id.as_str()).map_or(&[][..], Vec::as_slice);
            process_one(img, anns, config, crops, source_root, output_dir)
        })
        .collect();

    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(p) => {
                images.push(p.record);
                annotations.extend(p.annotations);
                records.push(p.log);
            }
            Err(failure) => {
                let (log, e) = *failure;
                tracing::error!(image = %log.image_id, error = %e, "preprocessing failed");
                records.push(log);
            }
        }
    }
    Ok(PipelineOutcome {
        manifest: DatasetManifest::new(manifest.registry.clone(), images, annotations),
        log: ProcessingLog {
            schema: PREPROCESS_LOG_SCHEMA.to_string(),
            resampling: RESAMPLING.to_string(),
            target_size: config.target_size,
            records,
        },
    })
}

/// Writes `manifest.json` and `processing_log.json` next to the images.
pub fn write_outcome(outcome: &PipelineOutcome, output_dir: &Path) -> Result<(), PreprocessError> {
    outcome.manifest.save(&output_dir.join("manifest.json"))?;
    let log_path = output_dir.join("processing_log.json");
    let mut text = serde_json::to_string_pretty(&outcome.log).map_err(FormatError::from)?;
    text.push('\n');
    std::fs::write(&log_path, text)
        .map_err(|source| PreprocessError::Io { path: log_path.display().to_string(), source })
}
