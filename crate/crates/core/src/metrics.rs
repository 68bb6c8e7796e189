//! Confusion counts, precision/recall, interpolated AP and mAP aggregation.
//!
//! Undefined ratios (zero denominators) are `None`, never 0: coercing them
//! would silently drag down class means.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::ClassId;

/// Recall levels used when averaging interpolated precision.
pub const DEFAULT_INTERPOLATION_POINTS: usize = 101;

/// Tolerance used to locate the 0.5 threshold in a configured list.
const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric is undefined: {0}")]
    Undefined(&'static str),
    #[error("precision-recall curve is empty")]
    EmptyCurve,
    #[error("at least 2 interpolation points are required, got {0}")]
    TooFewPoints(usize),
    #[error("IoU thresholds must be non-empty and strictly increasing within (0, 1]")]
    BadThresholds,
    #[error("threshold 0.5 is not among the configured thresholds")]
    MissingHalfThreshold,
    #[error("class {class} has {got} AP values, expected one per threshold ({expected})")]
    RaggedTable { class: ClassId, got: usize, expected: usize },
    #[error("no class has a defined AP at threshold {0}")]
    NoDefinedClasses(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// `(tp + tn) / total`. Errors on an empty tally.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricError> {
    match c.total() {
        0 => Err(MetricError::Undefined("accuracy of zero predictions")),
        t => Ok((c.tp + c.tn) as f64 / t as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn precision_recall(c: &ConfusionCounts) -> PrecisionRecall {
    PrecisionRecall { precision: ratio(c.tp, c.tp + c.fp), recall: ratio(c.tp, c.tp + c.fn_) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrCurvePoint {
    pub recall: f64,
    pub precision: f64,
    pub score_threshold: f64,
}

/// Mean interpolated precision over `points` equally spaced recall levels
/// `0, 1/(points-1), ..., 1`.
///
/// Interpolated precision at level `r` is the highest precision among curve
/// points with recall `>= r`, or 0 when no point reaches `r`.
pub fn average_precision(curve: &[PrCurvePoint], points: usize) -> Result<f64, MetricError> {
    if points < 2 {
        return Err(MetricError::TooFewPoints(points));
    }
    if curve.is_empty() {
        return Err(MetricError::EmptyCurve);
    }

    // Monotone envelope: sort by recall, then running max from the right.
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for i in (0..pts.len().saturating_sub(1)).rev() {
        pts[i].1 = pts[i].1.max(pts[i + 1].1);
    }

    let last = (points - 1) as f64;
    let mut idx = 0;
    let mut sum = 0.0;
    for level in 0..points {
        let r = level as f64 / last;
        while idx < pts.len() && pts[idx].0 < r {
            idx += 1;
        }
        if idx == pts.len() {
            break;
        }
        sum += pts[idx].1;
    }
    Ok((sum / points as f64).clamp(0.0, 1.0))
}

/// AP of one class at one IoU threshold. `ap` is `None` when the class has no
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub class_id: ClassId,
    pub iou_threshold: f64,
    pub ap: Option<f64>,
    pub curve: Vec<PrCurvePoint>,
}

/// Per-class AP values, one per threshold, in threshold order.
pub type ApTable = BTreeMap<ClassId, Vec<Option<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub thresholds: Vec<f64>,
    pub per_class: ApTable,
    /// Class-mean AP at each threshold.
    pub per_threshold: Vec<f64>,
    pub map_at_50: f64,
    pub map_50_95: f64,
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<(), MetricError> {
    let in_range = thresholds.iter().all(|t| *t > 0.0 && *t <= 1.0);
    let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
    if thresholds.is_empty() || !in_range || !increasing {
        return Err(MetricError::BadThresholds);
    }
    Ok(())
}

/// Mean of the defined values, or `None` if there are none.
pub fn defined_mean<I: IntoIterator<Item = Option<f64>>>(values: I) -> Option<f64> {
    let (sum, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates an AP table into class means per threshold, mAP@0.5 and the
/// mean over all configured thresholds. Classes with undefined AP are left
/// out of the class means.
pub fn mean_ap(table: &ApTable, thresholds: &[f64]) -> Result<MapResult, MetricError> {
    validate_thresholds(thresholds)?;
    for (class, aps) in table {
        if aps.len() != thresholds.len() {
            return Err(MetricError::RaggedTable { class: *class, got: aps.len(), expected: thresholds.len() });
        }
    }
    let per_threshold = thresholds
        .iter()
        .enumerate()
        .map(|(i, t)| defined_mean(table.values().map(|aps| aps[i])).ok_or(MetricError::NoDefinedClasses(*t)))
        .collect::<Result<Vec<_>, _>>()?;
    let half =
        thresholds.iter().position(|t| (t - 0.5).abs() < THRESHOLD_EPS).ok_or(MetricError::MissingHalfThreshold)?;
    let map_50_95 = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    Ok(MapResult {
        thresholds: thresholds.to_vec(),
        per_class: table.clone(),
        map_at_50: per_threshold[half],
        map_50_95,
        per_threshold,
    })
}
