//! Detection-to-ground-truth matching, precision/recall curves and the
//! evaluation report.
//!
//! Matching is greedy: detections are visited by descending score (ties by
//! ascending `x_min`, then `y_min`), and each takes the still-unmatched
//! ground truth of the same class with the highest IoU at or above the
//! threshold. Ground-truth ties go to the earlier item.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{DatasetManifest, DetectionItem, GroundTruthItem, Split};
use crate::class::ClassId;
use crate::geometry::{iou, GeometryError};
use crate::metrics::{
    self, average_precision, coco_thresholds, precision_recall, ApResult, ApTable, ConfusionCounts, MapResult,
    MetricError, PrCurvePoint, DEFAULT_INTERPOLATION_POINTS,
};

pub const EVAL_SCHEMA: &str = "pod-sentry/eval@1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detection {index} references unknown image {image_id:?}")]
    UnknownImage { index: usize, image_id: String },
    #[error("detection {index} uses unregistered class {class_id}")]
    UnknownClass { index: usize, class_id: ClassId },
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("no class has ground truth in the evaluated split")]
    NoGroundTruth,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub interpolation_points: usize,
    /// Detections scoring below this are ignored.
    pub score_floor: f64,
    /// Split to evaluate; `None` evaluates every image.
    pub split: Option<Split>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_thresholds(),
            interpolation_points: DEFAULT_INTERPOLATION_POINTS,
            score_floor: 0.0,
            split: Some(Split::Validation),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        metrics::validate_thresholds(&self.iou_thresholds).map_err(|e| EvalError::Config(e.to_string()))?;
        if self.interpolation_points < 2 {
            return Err(EvalError::Config(format!(
                "interpolation_points must be >= 2, got {}",
                self.interpolation_points
            )));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(EvalError::Config(format!("score_floor {} outside [0, 1]", self.score_floor)));
        }
        Ok(())
    }
}

/// Processing order for detections: score descending, then `x_min`, then
/// `y_min` ascending. The remaining corners only settle exact duplicates.
pub fn detection_order(a: &DetectionItem, b: &DetectionItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.x_min().total_cmp(&b.bbox.x_min()))
        .then_with(|| a.bbox.y_min().total_cmp(&b.bbox.y_min()))
        .then_with(|| a.bbox.x_max().total_cmp(&b.bbox.x_max()))
        .then_with(|| a.bbox.y_max().total_cmp(&b.bbox.y_max()))
        .then_with(|| a.class_id.cmp(&b.class_id))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Index into the detection slice.
    pub detection: usize,
    /// Index into the ground-truth slice, `None` for a false positive.
    pub ground_truth: Option<usize>,
    pub iou: f64,
}

/// Matches one image's detections of one class. Results are in processing
/// order.
pub fn match_detections(
    gts: &[GroundTruthItem],
    dets: &[DetectionItem],
    iou_threshold: f64,
) -> Result<Vec<Match>, GeometryError> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| detection_order(&dets[a], &dets[b]));
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, &gt.bbox)?;
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        out.push(Match { detection: d, ground_truth: best.map(|(g, _)| g), iou: best.map_or(0.0, |(_, v)| v) });
    }
    Ok(out)
}

/// Counts matches: TN is always 0 for detection.
pub fn confusion_from_matches(matches: &[Match], ground_truths: usize) -> ConfusionCounts {
    let tp = matches.iter().filter(|m| m.ground_truth.is_some()).count() as u64;
    ConfusionCounts::new(tp, 0, matches.len() as u64 - tp, ground_truths as u64 - tp)
}

fn group_by_image<'a, T>(items: impl Iterator<Item = &'a T>, key: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<T>>
where
    T: Clone + 'a,
{
    let mut map: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for it in items {
        map.entry(key(it).to_string()).or_default().push(it.clone());
    }
    map
}

/// TP/FP flags with scores for one class across all images.
fn scored_outcomes(
    gts: &[GroundTruthItem],
    dets: &[DetectionItem],
    class_id: ClassId,
    iou_threshold: f64,
) -> Result<(Vec<(f64, bool)>, usize), GeometryError> {
    let gt_by_image = group_by_image(gts.iter().filter(|g| g.class_id == class_id), |g| &g.image_id);
    let det_by_image = group_by_image(dets.iter().filter(|d| d.class_id == class_id), |d| &d.image_id);
    let empty = Vec::new();
    let mut outcomes = Vec::new();
    for (image, image_dets) in &det_by_image {
        let image_gts = gt_by_image.get(image).unwrap_or(&empty);
        for m in match_detections(image_gts, image_dets, iou_threshold)? {
            outcomes.push((image_dets[m.detection].score, m.ground_truth.is_some()));
        }
    }
    let total = gt_by_image.values().map(Vec::len).sum();
    Ok((outcomes, total))
}

/// Precision/recall points, one per distinct detection score, sweeping the
/// cutoff downward. `None` when the class has no ground truth.
pub fn pr_curve(
    gts: &[GroundTruthItem],
    dets: &[DetectionItem],
    class_id: ClassId,
    iou_threshold: f64,
) -> Result<Option<Vec<PrCurvePoint>>, GeometryError> {
    let (mut outcomes, total) = scored_outcomes(gts, dets, class_id, iou_threshold)?;
    if total == 0 {
        return Ok(None);
    }
    outcomes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < outcomes.len() {
        let score = outcomes[i].0;
        while i < outcomes.len() && outcomes[i].0 == score {
            if outcomes[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(PrCurvePoint {
            recall: tp as f64 / total as f64,
            precision: tp as f64 / (tp + fp) as f64,
            score_threshold: score,
        });
    }
    Ok(Some(curve))
}

/// AP from a curve, with an empty curve (no detections) scoring 0.
pub fn curve_ap(curve: Option<&[PrCurvePoint]>, points: usize) -> Result<Option<f64>, MetricError> {
    match curve {
        None => Ok(None),
        Some([]) => Ok(Some(0.0)),
        Some(c) => average_precision(c, points).map(Some),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: ClassId,
    pub name: String,
    pub ground_truths: usize,
    pub detections: usize,
    pub aps: Vec<ApResult>,
    /// Counts at IoU 0.5.
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub images: usize,
    pub ground_truths: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub per_class: Vec<ClassReport>,
    pub map_50: f64,
    pub map_50_95: f64,
    pub map: MapResult,
    pub counts: BTreeMap<String, ConfusionCounts>,
    pub dataset: DatasetSizes,
    pub config: EvalConfig,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassReport> {
        self.per_class.iter().find(|c| c.class_id == id)
    }
}

/// Scores `detections` against the manifest's ground truth.
///
/// Detections and annotations on images outside the configured split are
/// ignored; detections naming an image the manifest does not know are an
/// error. Normalized boxes are converted to pixels with the image size.
pub fn evaluate(
    manifest: &DatasetManifest,
    detections: &[DetectionItem],
    config: &EvalConfig,
) -> Result<EvaluationReport, EvalError> {
    config.validate()?;
    let images: HashMap<&str, _> = manifest.images.iter().map(|i| (i.id.as_str(), i)).collect();
    let selected: HashSet<&str> =
        manifest.images.iter().filter(|i| config.split.is_none_or(|s| s == i.split)).map(|i| i.id.as_str()).collect();

    let mut dets = Vec::new();
    for (index, d) in detections.iter().enumerate() {
        let img = images
            .get(d.image_id.as_str())
            .ok_or_else(|| EvalError::UnknownImage { index, image_id: d.image_id.clone() })?;
        if !manifest.registry.contains(d.class_id) {
            return Err(EvalError::UnknownClass { index, class_id: d.class_id });
        }
        if !selected.contains(d.image_id.as_str()) || d.score < config.score_floor {
            continue;
        }
        let mut d = d.clone();
        d.bbox = d.bbox.to_pixel(f64::from(img.width), f64::from(img.height))?;
        dets.push(d);
    }
    let mut gts = Vec::new();
    for g in manifest.annotations.iter().filter(|g| selected.contains(g.image_id.as_str())) {
        let Some(img) = images.get(g.image_id.as_str()) else {
            continue;
        };
        let mut g = g.clone();
        g.bbox = g.bbox.to_pixel(f64::from(img.width), f64::from(img.height))?;
        gts.push(g);
    }

    let classes: Vec<ClassId> = manifest.registry.ids().collect();
    let thresholds = &config.iou_thresholds;
    let jobs: Vec<(ClassId, f64)> = classes.iter().flat_map(|c| thresholds.iter().map(move |t| (*c, *t))).collect();
    let results: Vec<ApResult> = jobs
        .par_iter()
        .map(|&(class_id, t)| -> Result<ApResult, EvalError> {
            let curve = pr_curve(&gts, &dets, class_id, t)?;
            let ap = curve_ap(curve.as_deref(), config.interpolation_points)?;
            Ok(ApResult { class_id, iou_threshold: t, ap, curve: curve.unwrap_or_default() })
        })
        .collect::<Result<_, _>>()?;

    let mut table = ApTable::new();
    let mut per_class = Vec::new();
    let mut counts = BTreeMap::new();
    for (ci, class_id) in classes.iter().enumerate() {
        let aps = results[ci * thresholds.len()..(ci + 1) * thresholds.len()].to_vec();
        table.insert(*class_id, aps.iter().map(|a| a.ap).collect());

        let (outcomes, total) = scored_outcomes(&gts, &dets, *class_id, 0.5)?;
        let tp = outcomes.iter().filter(|o| o.1).count() as u64;
        let c = ConfusionCounts::new(tp, 0, outcomes.len() as u64 - tp, total as u64 - tp);
        let pr = precision_recall(&c);
        let name = manifest.registry.name(*class_id).unwrap_or_default().to_string();
        counts.insert(name.clone(), c);
        per_class.push(ClassReport {
            class_id: *class_id,
            name,
            ground_truths: total,
            detections: outcomes.len(),
            aps,
            counts: c,
            precision: pr.precision,
            recall: pr.recall,
        });
    }
    if per_class.iter().all(|c| c.ground_truths == 0) {
        return Err(EvalError::NoGroundTruth);
    }
    let map = metrics::mean_ap(&table, thresholds)?;

    Ok(EvaluationReport {
        schema: EVAL_SCHEMA.to_string(),
        map_50: map.map_at_50,
        map_50_95: map.map_50_95,
        map,
        per_class,
        counts,
        dataset: DatasetSizes { images: selected.len(), ground_truths: gts.len(), detections: dets.len() },
        config: config.clone(),
    })
}
