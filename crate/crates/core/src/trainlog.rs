//! Per-epoch training logs: parsing, trend checks and the series report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRAINLOG_SCHEMA: &str = "pod-sentry/trainlog@1";
/// Epochs averaged at each end of a series.
pub const TREND_WINDOW: usize = 5;
pub const LOSS_TOLERANCE: f64 = 0.01;
pub const METRIC_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum TrainLogError {
    #[error("log has no header line")]
    MissingHeader,
    #[error("header is missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("line {line}: column {column:?} value {value:?} is not a number")]
    Number { line: u64, column: &'static str, value: String },
    #[error("line {line}: {column} = {value} is out of range")]
    Range { line: u64, column: &'static str, value: f64 },
    #[error("line {line}: epoch {epoch} does not follow epoch {previous}")]
    NonMonotonic { line: u64, epoch: u32, previous: u32 },
    #[error("line {line}: {reason}")]
    Csv { line: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    BoxLoss,
    ObjectnessLoss,
    ClassificationLoss,
    Precision,
    Recall,
    Map50,
    Map5095,
}

impl Series {
    pub const ALL: [Series; 7] = [
        Series::BoxLoss,
        Series::ObjectnessLoss,
        Series::ClassificationLoss,
        Series::Precision,
        Series::Recall,
        Series::Map50,
        Series::Map5095,
    ];

    pub fn column(&self) -> &'static str {
        match self {
            Series::BoxLoss => "box_loss",
            Series::ObjectnessLoss => "objectness_loss",
            Series::ClassificationLoss => "classification_loss",
            Series::Precision => "precision",
            Series::Recall => "recall",
            Series::Map50 => "map50",
            Series::Map5095 => "map5095",
        }
    }

    pub fn is_loss(&self) -> bool {
        matches!(self, Series::BoxLoss | Series::ObjectnessLoss | Series::ClassificationLoss)
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub box_loss: f64,
    pub objectness_loss: f64,
    pub classification_loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map5095: f64,
}

impl EpochRecord {
    pub fn get(&self, s: Series) -> f64 {
        match s {
            Series::BoxLoss => self.box_loss,
            Series::ObjectnessLoss => self.objectness_loss,
            Series::ClassificationLoss => self.classification_loss,
            Series::Precision => self.precision,
            Series::Recall => self.recall,
            Series::Map50 => self.map50,
            Series::Map5095 => self.map5095,
        }
    }

    fn set(&mut self, s: Series, v: f64) {
        *match s {
            Series::BoxLoss => &mut self.box_loss,
            Series::ObjectnessLoss => &mut self.objectness_loss,
            Series::ClassificationLoss => &mut self.classification_loss,
            Series::Precision => &mut self.precision,
            Series::Recall => &mut self.recall,
            Series::Map50 => &mut self.map50,
            Series::Map5095 => &mut self.map5095,
        } = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<EpochRecord>,
    /// Header columns that were ignored.
    pub ignored_columns: Vec<String>,
}

/// Parses a comma-separated log whose header names the columns. `epoch`
/// plus the seven series columns are required; others are ignored.
pub fn parse_training_log(text: &str) -> Result<ParsedLog, TrainLogError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| TrainLogError::Csv { line: 1, reason: e.to_string() })?;
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(TrainLogError::MissingHeader);
    }
    let names: Vec<String> = headers.iter().map(str::to_lowercase).collect();
    let find = |name: &'static str| names.iter().position(|n| n == name).ok_or(TrainLogError::MissingColumn(name));
    let epoch_col = find("epoch")?;
    let series_cols: Vec<(Series, usize)> =
        Series::ALL.iter().map(|s| find(s.column()).map(|i| (*s, i))).collect::<Result<_, _>>()?;
    let ignored_columns: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != epoch_col && !series_cols.iter().any(|(_, c)| c == i))
        .map(|(_, n)| n.clone())
        .collect();
    for c in &ignored_columns {
        tracing::warn!(column = %c, "ignoring unknown training-log column");
    }

    let mut records: Vec<EpochRecord> = Vec::new();
    for row in rdr.records() {
        let row =
            row.map_err(|e| TrainLogError::Csv { line: e.position().map_or(0, |p| p.line()), reason: e.to_string() })?;
        let line = row.position().map_or(0, |p| p.line());
        let raw_epoch = row.get(epoch_col).unwrap_or_default();
        let epoch: u32 = raw_epoch.parse().ok().filter(|e| *e >= 1).ok_or_else(|| TrainLogError::Number {
            line,
            column: "epoch",
            value: raw_epoch.to_string(),
        })?;
        if let Some(prev) = records.last() {
            if epoch <= prev.epoch {
                return Err(TrainLogError::NonMonotonic { line, epoch, previous: prev.epoch });
            }
        }
        let mut rec = EpochRecord {
            epoch,
            box_loss: 0.0,
            objectness_loss: 0.0,
            classification_loss: 0.0,
            precision: 0.0,
            recall: 0.0,
            map50: 0.0,
            map5095: 0.0,
        };
        for (s, col) in &series_cols {
            let raw = row.get(*col).unwrap_or_default();
            let v: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| TrainLogError::Number {
                line,
                column: s.column(),
                value: raw.to_string(),
            })?;
            let ok = if s.is_loss() { v >= 0.0 } else { (0.0..=1.0).contains(&v) };
            if !ok {
                return Err(TrainLogError::Range { line, column: s.column(), value: v });
            }
            rec.set(*s, v);
        }
        records.push(rec);
    }
    Ok(ParsedLog { records, ignored_columns })
}

/// Decimal text with 6 significant digits, trailing zeros trimmed.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { v.to_string() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    // Rounding can carry into a new digit (9.999995 -> 10.00000).
    if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 && decimals > 0 {
        s = format!("{v:.prec$}", prec = decimals - 1);
    }
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    s
}

/// Renders records as a log `parse_training_log` accepts.
pub fn emit_training_log(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch");
    for s in Series::ALL {
        out.push(',');
        out.push_str(s.column());
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.epoch);
        for s in Series::ALL {
            let _ = write!(out, ",{}", format_sig6(r.get(s)));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesExpectation {
    pub series: Series,
    pub direction: Direction,
    /// Expected end-window mean.
    pub end: f64,
    pub tolerance: f64,
    /// Expected start-window mean, checked only when set.
    #[serde(default)]
    pub start: Option<f64>,
}

impl SeriesExpectation {
    fn new(series: Series, direction: Direction, end: f64) -> Self {
        let tolerance = if series.is_loss() { LOSS_TOLERANCE } else { METRIC_TOLERANCE };
        Self { series, direction, end, tolerance, start: None }
    }
}

/// End points read off the reference 100-epoch run's narrative description
/// (not from a table), with the default tolerances.
pub fn default_expectations() -> Vec<SeriesExpectation> {
    use Direction::*;
    vec![
        SeriesExpectation::new(Series::BoxLoss, Decreasing, 0.02),
        SeriesExpectation::new(Series::ObjectnessLoss, Decreasing, 0.002),
        SeriesExpectation::new(Series::ClassificationLoss, Decreasing, 0.004),
        SeriesExpectation::new(Series::Precision, Increasing, 0.6),
        SeriesExpectation::new(Series::Recall, Increasing, 0.45),
        SeriesExpectation::new(Series::Map50, Increasing, 0.3),
        SeriesExpectation::new(Series::Map5095, Increasing, 0.23),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail { reasons: Vec<String> },
    InsufficientData,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesVerdict {
    pub expectation: SeriesExpectation,
    pub start_mean: Option<f64>,
    pub end_mean: Option<f64>,
    pub verdict: Verdict,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Window used for `n` records: at most [`TREND_WINDOW`], and never so wide
/// that the start and end windows overlap.
pub fn trend_window(n: usize) -> usize {
    TREND_WINDOW.min(n / 2)
}

pub fn check_trends(records: &[EpochRecord], expectations: &[SeriesExpectation]) -> Vec<SeriesVerdict> {
    let window = trend_window(records.len());
    expectations
        .iter()
        .map(|e| {
            if window == 0 {
                return SeriesVerdict {
                    expectation: e.clone(),
                    start_mean: None,
                    end_mean: None,
                    verdict: Verdict::InsufficientData,
                };
            }
            let values: Vec<f64> = records.iter().map(|r| r.get(e.series)).collect();
            let start = mean(&values[..window]);
            let end = mean(&values[values.len() - window..]);
            let mut reasons = Vec::new();
            match e.direction {
                Direction::Increasing if end <= start => {
                    reasons.push(format!("expected increase, went {start:.4} -> {end:.4}"))
                }
                Direction::Decreasing if end >= start => {
                    reasons.push(format!("expected decrease, went {start:.4} -> {end:.4}"))
                }
                _ => {}
            }
            if (end - e.end).abs() > e.tolerance {
                reasons.push(format!("end {end:.4} is not within {} of {}", e.tolerance, e.end));
            }
            if let Some(s) = e.start {
                if (start - s).abs() > e.tolerance {
                    reasons.push(format!("start {start:.4} is not within {} of {s}", e.tolerance));
                }
            }
            SeriesVerdict {
                expectation: e.clone(),
                start_mean: Some(start),
                end_mean: Some(end),
                verdict: if reasons.is_empty() { Verdict::Pass } else { Verdict::Fail { reasons } },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub schema: String,
    pub window: usize,
    pub tolerances: BTreeMap<String, f64>,
    pub expectations_source: String,
    pub epochs: Vec<u32>,
    pub series: BTreeMap<Series, Vec<f64>>,
    pub verdicts: Vec<SeriesVerdict>,
}

impl TrainingReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.verdict.passed())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "training log: {} epochs, window {} (loss tolerance ±{LOSS_TOLERANCE}, metric tolerance ±{METRIC_TOLERANCE}; expectations are narrative-derived)\n",
            self.epochs.len(),
            self.window
        );
        for v in &self.verdicts {
            let status = match &v.verdict {
                Verdict::Pass => "PASS".to_string(),
                Verdict::InsufficientData => "insufficient data".to_string(),
                Verdict::Fail { reasons } => format!("FAIL ({})", reasons.join("; ")),
            };
            let _ = match (v.start_mean, v.end_mean) {
                (Some(s), Some(e)) => {
                    writeln!(out, "  {:<20} {s:.4} -> {e:.4}  {status}", v.expectation.series.column())
                }
                _ => writeln!(out, "  {:<20} {status}", v.expectation.series.column()),
            };
        }
        let passed = self.verdicts.iter().filter(|v| v.verdict.passed()).count();
        let _ = writeln!(out, "{passed}/{} series pass", self.verdicts.len());
        out
    }
}

pub fn emit_training_report(records: &[EpochRecord], expectations: &[SeriesExpectation]) -> TrainingReport {
    TrainingReport {
        schema: TRAINLOG_SCHEMA.to_string(),
        window: trend_window(records.len()),
        tolerances: BTreeMap::from([("loss".to_string(), LOSS_TOLERANCE), ("metric".to_string(), METRIC_TOLERANCE)]),
        expectations_source: "narrative description of a 100-epoch reference run".to_string(),
        epochs: records.iter().map(|r| r.epoch).collect(),
        series: Series::ALL.iter().map(|s| (*s, records.iter().map(|r| r.get(*s)).collect())).collect(),
        verdicts: check_trends(records, expectations),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "epoch,box_loss,objectness_loss,classification_loss,precision,recall,map50,map5095";

    /// Straight lines between start and end values over `n` epochs.
    fn linear(n: u32, ends: [(f64, f64); 7]) -> Vec<EpochRecord> {
        (1..=n)
            .map(|e| {
                let t = f64::from(e - 1) / f64::from(n - 1);
                let v = |i: usize| ends[i].0 + (ends[i].1 - ends[i].0) * t;
                EpochRecord {
                    epoch: e,
                    box_loss: v(0),
                    objectness_loss: v(1),
                    classification_loss: v(2),
                    precision: v(3),
                    recall: v(4),
                    map50: v(5),
                    map5095: v(6),
                }
            })
            .collect()
    }

    const REFERENCE: [(f64, f64); 7] =
        [(0.05, 0.02), (0.012, 0.0019), (0.016, 0.004), (0.2, 0.6), (0.1, 0.45), (0.1, 0.3), (0.0, 0.23)];

    #[test]
    fn parses_three_lines() {
        let text = format!("{HEADER}\n1,0.05,0.012,0.016,0.2,0.1,0.1,0.0\n2,0.04,0.01,0.014,0.25,0.12,0.12,0.02\n3,0.035,0.009,0.012,0.3,0.15,0.14,0.04\n");
        let log = parse_training_log(&text).unwrap();
        assert_eq!(log.records.len(), 3);
        assert_eq!(log.records[2].box_loss, 0.035);
        assert!(log.ignored_columns.is_empty());
    }

    #[test]
    fn non_monotonic_epochs() {
        let text = format!("{HEADER}\n1,0,0,0,0,0,0,0\n1,0,0,0,0,0,0,0\n2,0,0,0,0,0,0,0\n");
        assert_eq!(
            parse_training_log(&text).unwrap_err(),
            TrainLogError::NonMonotonic { line: 3, epoch: 1, previous: 1 }
        );
    }

    #[test]
    fn missing_column_named() {
        let text = "epoch,objectness_loss,classification_loss,precision,recall,map50,map5095\n";
        assert_eq!(parse_training_log(text).unwrap_err(), TrainLogError::MissingColumn("box_loss"));
    }

    #[test]
    fn bad_number_has_line() {
        let text = format!("{HEADER}\n1,0,0,0,0,0,0,0\n2,0,abc,0,0,0,0,0\n");
        assert!(matches!(
            parse_training_log(&text).unwrap_err(),
            TrainLogError::Number { line: 3, column: "objectness_loss", .. }
        ));
        let text = format!("{HEADER}\n1,0,0,0,1.5,0,0,0\n");
        assert!(matches!(parse_training_log(&text).unwrap_err(), TrainLogError::Range { .. }));
    }

    #[test]
    fn extra_columns_ignored_without_changing_verdicts() {
        let records = linear(100, REFERENCE);
        let plain = emit_training_log(&records);
        let mut wide = String::new();
        for (i, line) in plain.lines().enumerate() {
            wide.push_str(line);
            wide.push_str(if i == 0 { ",lr,gpu_mem\n" } else { ",0.001,3.2\n" });
        }
        let a = parse_training_log(&plain).unwrap();
        let b = parse_training_log(&wide).unwrap();
        assert_eq!(b.ignored_columns, vec!["lr", "gpu_mem"]);
        assert_eq!(
            check_trends(&a.records, &default_expectations()),
            check_trends(&b.records, &default_expectations())
        );
    }

    #[test]
    fn reference_curves_pass() {
        let report = emit_training_report(&linear(100, REFERENCE), &default_expectations());
        assert!(report.all_passed(), "{}", report.summary());
        assert_eq!(report.series.len(), 7);
        assert_eq!(report.window, 5);
    }

    #[test]
    fn box_and_objectness_examples() {
        let records = linear(100, REFERENCE);
        let v = check_trends(&records, &default_expectations());
        assert!(v[0].verdict.passed());
        assert!(v[1].verdict.passed());
        assert!(v[2].verdict.passed());
    }

    #[test]
    fn flat_map5095_fails() {
        let mut ends = REFERENCE;
        ends[6] = (0.0, 0.0);
        let v = check_trends(&linear(100, ends), &default_expectations());
        assert!(matches!(v[6].verdict, Verdict::Fail { .. }));
        assert!(v[..6].iter().all(|x| x.verdict.passed()));
    }

    #[test]
    fn single_epoch_is_insufficient() {
        let r = linear(2, REFERENCE)[..1].to_vec();
        let report = emit_training_report(&r, &default_expectations());
        assert!(report.verdicts.iter().all(|v| v.verdict == Verdict::InsufficientData));
        assert!(report.summary().contains("insufficient data"));
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0123456789), "0.0123457");
        assert_eq!(format_sig6(0.02), "0.02");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(9.9999996), "10");
        assert_eq!(format_sig6(0.0), "0");
    }
}
