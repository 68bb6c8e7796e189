//! Per-image post-processing: non-maximum suppression, per-pod class
//! probabilities and knowledge-base lookup.
//!
//! Class probabilities come from renormalizing the observed per-class scores
//! within a class-agnostic NMS cluster: for each class, the highest score any
//! cluster member gives it, divided by the sum over classes. This is a
//! declared convention for turning box scores into a three-way diagnosis,
//! not a model of any particular classifier head.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{DetectionItem, FormatError};
use crate::class::{ClassId, ClassRegistry};
use crate::eval::detection_order;
use crate::geometry::{iou, BoundingBox, GeometryError};
use crate::metrics::ConfusionCounts;

pub const KB_SCHEMA: &str = "pod-sentry/kb@1";
pub const DIAGNOSIS_SCHEMA: &str = "pod-sentry/diagnosis@1";

const DEFAULT_KB: &str = include_str!("default_kb.json");

#[derive(Debug, Error)]
pub enum DiagnosisError {
    #[error("knowledge base has no entry for class {0:?}")]
    MissingKnowledge(String),
    #[error("knowledge base entry {index}: {reason}")]
    BadEntry { index: usize, reason: String },
    #[error("detection uses unregistered class {0}")]
    UnknownClass(ClassId),
    #[error("{diagnoses} diagnoses but {labels} truth labels")]
    LengthMismatch { diagnoses: usize, labels: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseConfig {
    pub score_floor: f64,
    pub nms_iou: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { score_floor: 0.25, nms_iou: 0.5 }
    }
}

/// Greedy clustering behind [`nms`]: each entry is a kept detection index
/// and the indices it suppressed (itself first).
pub fn nms_clusters(
    dets: &[DetectionItem],
    iou_threshold: f64,
    class_agnostic: bool,
) -> Result<Vec<(usize, Vec<usize>)>, GeometryError> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| detection_order(&dets[a], &dets[b]));
    let mut assigned = vec![false; dets.len()];
    let mut clusters = Vec::new();
    for (pos, &k) in order.iter().enumerate() {
        if assigned[k] {
            continue;
        }
        assigned[k] = true;
        let mut members = vec![k];
        for &j in &order[pos + 1..] {
            if assigned[j] || (!class_agnostic && dets[j].class_id != dets[k].class_id) {
                continue;
            }
            if iou(&dets[k].bbox, &dets[j].bbox)? > iou_threshold {
                assigned[j] = true;
                members.push(j);
            }
        }
        clusters.push((k, members));
    }
    Ok(clusters)
}

/// Score-descending greedy suppression. A detection is dropped when its IoU
/// with an already kept one (of the same class unless `class_agnostic`)
/// exceeds `iou_threshold`. Output is in processing order.
pub fn nms(
    dets: &[DetectionItem],
    iou_threshold: f64,
    class_agnostic: bool,
) -> Result<Vec<DetectionItem>, GeometryError> {
    Ok(nms_clusters(dets, iou_threshold, class_agnostic)?.into_iter().map(|(k, _)| dets[k].clone()).collect())
}

/// Renormalized per-class scores. Each class takes its highest score among
/// `scores`. A cluster whose scores are all zero splits mass evenly.
pub fn class_probabilities(scores: &[(ClassId, f64)]) -> BTreeMap<ClassId, f64> {
    let mut best: BTreeMap<ClassId, f64> = BTreeMap::new();
    for &(c, s) in scores {
        let e = best.entry(c).or_insert(s);
        *e = e.max(s);
    }
    let total: f64 = best.values().sum();
    let n = best.len() as f64;
    for v in best.values_mut() {
        *v = if total > 0.0 { *v / total } else { 1.0 / n };
    }
    best
}

/// Highest probability, ties to the lower class id.
pub fn top_class(probs: &BTreeMap<ClassId, f64>) -> Option<(ClassId, f64)> {
    probs.iter().fold(None, |acc: Option<(ClassId, f64)>, (c, p)| match acc {
        Some((_, bp)) if bp >= *p => acc,
        _ => Some((*c, *p)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseInfo {
    #[serde(rename = "class")]
    pub class_name: String,
    pub display_name: String,
    #[serde(default = "yes")]
    pub disease: bool,
    pub symptoms: Vec<String>,
    pub treatments: Vec<String>,
    #[serde(rename = "images", default)]
    pub reference_images: Vec<PathBuf>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub schema: String,
    pub entries: Vec<DiseaseInfo>,
}

impl KnowledgeBase {
    /// Parses and checks a knowledge-base document: known classes only, and
    /// disease entries must list symptoms and treatments.
    pub fn from_json(text: &str, registry: &ClassRegistry) -> Result<Self, DiagnosisError> {
        let kb: Self = serde_json::from_str(text).map_err(FormatError::from)?;
        if kb.schema != KB_SCHEMA {
            return Err(DiagnosisError::BadEntry {
                index: 0,
                reason: format!("schema tag {:?}, expected {KB_SCHEMA:?}", kb.schema),
            });
        }
        for (index, e) in kb.entries.iter().enumerate() {
            let bad = |reason: &str| DiagnosisError::BadEntry { index, reason: reason.to_string() };
            if registry.resolve(&e.class_name).is_none() {
                return Err(bad(&format!("unknown class {:?}", e.class_name)));
            }
            if e.disease && (e.symptoms.is_empty() || e.treatments.is_empty()) {
                return Err(bad("disease entries need symptoms and treatments"));
            }
        }
        Ok(kb)
    }

    pub fn load(path: &Path, registry: &ClassRegistry) -> Result<Self, DiagnosisError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::from_json(&text, registry)
    }

    /// The bundled entries for the default three classes.
    pub fn builtin(registry: &ClassRegistry) -> Result<Self, DiagnosisError> {
        Self::from_json(DEFAULT_KB, registry)
    }

    pub fn lookup(&self, class: ClassId, registry: &ClassRegistry) -> Option<&DiseaseInfo> {
        self.entries.iter().find(|e| registry.resolve(&e.class_name) == Some(class))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodDiagnosis {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Class name to probability; only classes observed in the cluster.
    pub probs: BTreeMap<String, f64>,
    pub top: String,
    pub top_class_id: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub schema: String,
    pub image_id: String,
    pub pods: Vec<PodDiagnosis>,
    /// Classes whose knowledge entries are attached, in first-seen order.
    pub kb_refs: Vec<String>,
    pub knowledge: Vec<DiseaseInfo>,
}

impl Diagnosis {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("diagnosis serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Turns one image's raw detections into per-pod probability vectors.
///
/// Detections are clustered with class-agnostic NMS and each cluster becomes
/// a pod located at its highest-scoring box. Pods whose best score is under
/// the floor are dropped; low-scoring members of a kept pod still count
/// toward its probabilities.
pub fn diagnose(
    image_id: &str,
    dets: &[DetectionItem],
    registry: &ClassRegistry,
    kb: &KnowledgeBase,
    config: &DiagnoseConfig,
) -> Result<Diagnosis, DiagnosisError> {
    if let Some(d) = dets.iter().find(|d| !registry.contains(d.class_id)) {
        return Err(DiagnosisError::UnknownClass(d.class_id));
    }
    let kept = dets;
    let clusters: Vec<_> = nms_clusters(kept, config.nms_iou, true)?
        .into_iter()
        .filter(|(lead, _)| kept[*lead].score >= config.score_floor)
        .collect();

    let mut pods = Vec::new();
    let mut kb_refs: Vec<String> = Vec::new();
    let mut knowledge = Vec::new();
    for (lead, members) in clusters {
        let scores: Vec<(ClassId, f64)> = members.iter().map(|&m| (kept[m].class_id, kept[m].score)).collect();
        let probs = class_probabilities(&scores);
        let (top_id, _) = top_class(&probs).expect("cluster has at least one member");
        let name = |c: ClassId| registry.name(c).unwrap_or_default().to_string();
        let top = name(top_id);
        let info = kb.lookup(top_id, registry).ok_or_else(|| DiagnosisError::MissingKnowledge(top.clone()))?;
        if !kb_refs.contains(&top) {
            kb_refs.push(top.clone());
            knowledge.push(info.clone());
        }
        pods.push(PodDiagnosis {
            bbox: kept[lead].bbox,
            probs: probs.iter().map(|(c, p)| (name(*c), *p)).collect(),
            top,
            top_class_id: top_id,
        });
    }
    Ok(Diagnosis { schema: DIAGNOSIS_SCHEMA.to_string(), image_id: image_id.to_string(), pods, kb_refs, knowledge })
}

/// Image-level label: the top class of the most confident pod.
pub fn image_prediction(d: &Diagnosis) -> Option<ClassId> {
    d.pods
        .iter()
        .map(|p| (p.top_class_id, p.probs.get(&p.top).copied().unwrap_or(0.0)))
        .fold(None, |acc: Option<(ClassId, f64)>, (c, p)| match acc {
            Some((_, bp)) if bp >= p => acc,
            _ => Some((c, p)),
        })
        .map(|(c, _)| c)
}

/// One-vs-rest counts per class, one truth label per image. An image with
/// no pods predicts nothing: FN for its truth class, TN elsewhere.
pub fn image_level_counts(
    diagnoses: &[Diagnosis],
    truth: &[ClassId],
    registry: &ClassRegistry,
) -> Result<BTreeMap<ClassId, ConfusionCounts>, DiagnosisError> {
    if diagnoses.len() != truth.len() {
        return Err(DiagnosisError::LengthMismatch { diagnoses: diagnoses.len(), labels: truth.len() });
    }
    let mut counts: BTreeMap<ClassId, ConfusionCounts> =
        registry.ids().map(|c| (c, ConfusionCounts::default())).collect();
    for (d, &t) in diagnoses.iter().zip(truth) {
        let predicted = image_prediction(d);
        for (c, cc) in counts.iter_mut() {
            match (predicted == Some(*c), t == *c) {
                (true, true) => cc.tp += 1,
                (true, false) => cc.fp += 1,
                (false, true) => cc.fn_ += 1,
                (false, false) => cc.tn += 1,
            }
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::accuracy;

    fn det(c: u32, b: [f64; 4], s: f64) -> DetectionItem {
        DetectionItem::new("img", ClassId(c), BoundingBox::pixel(b[0], b[1], b[2], b[3]).unwrap(), s).unwrap()
    }

    fn setup() -> (ClassRegistry, KnowledgeBase) {
        let r = ClassRegistry::default();
        let kb = KnowledgeBase::builtin(&r).unwrap();
        (r, kb)
    }

    #[test]
    fn nms_keeps_higher_score() {
        let dets = [det(0, [0., 0., 10., 10.], 0.7), det(0, [0., 0., 10., 9.], 0.8)];
        let kept = nms(&dets, 0.5, false).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.8);
    }

    #[test]
    fn nms_disjoint_and_per_class() {
        let dets = [det(0, [0., 0., 1., 1.], 0.7), det(0, [5., 5., 6., 6.], 0.8)];
        assert_eq!(nms(&dets, 0.5, false).unwrap().len(), 2);
        let dets = [det(0, [0., 0., 10., 10.], 0.7), det(1, [0., 0., 10., 10.], 0.8)];
        assert_eq!(nms(&dets, 0.5, false).unwrap().len(), 2);
        assert_eq!(nms(&dets, 0.5, true).unwrap().len(), 1);
    }

    #[test]
    fn nms_threshold_is_strict() {
        // IoU exactly 0.5 survives.
        let dets = [det(0, [0., 0., 10., 10.], 0.9), det(0, [0., 0., 5., 10.], 0.8)];
        assert_eq!(nms(&dets, 0.5, false).unwrap().len(), 2);
    }

    #[test]
    fn healthy_96_2_2() {
        let (r, kb) = setup();
        let b = [10., 10., 200., 300.];
        let dets = [det(2, b, 0.96), det(1, b, 0.02), det(0, b, 0.02)];
        let cfg = DiagnoseConfig { score_floor: 0.0, ..Default::default() };
        let d = diagnose("img", &dets, &r, &kb, &cfg).unwrap();
        assert_eq!(d.pods.len(), 1);
        let p = &d.pods[0];
        assert_eq!(p.top, "healthy");
        assert!((p.probs["healthy"] - 0.96).abs() < 1e-9);
        assert!((p.probs["monilia"] - 0.02).abs() < 1e-9);
        assert!((p.probs["black_pod"] - 0.02).abs() < 1e-9);
        assert!((p.probs.values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(d.kb_refs, vec!["healthy".to_string()]);
    }

    #[test]
    fn single_detection_renormalizes() {
        let (r, kb) = setup();
        let d = diagnose("img", &[det(1, [0., 0., 5., 5.], 0.5)], &r, &kb, &DiagnoseConfig::default()).unwrap();
        assert_eq!(d.pods[0].probs, BTreeMap::from([("monilia".to_string(), 1.0)]));
        assert_eq!(d.pods[0].top, "monilia");
        assert!(!d.knowledge[0].symptoms.is_empty());
    }

    #[test]
    fn two_pods_are_independent() {
        let (r, kb) = setup();
        let dets =
            [det(0, [0., 0., 10., 10.], 0.6), det(2, [0., 0., 10., 10.], 0.3), det(1, [50., 50., 60., 60.], 0.9)];
        let d = diagnose("img", &dets, &r, &kb, &DiagnoseConfig::default()).unwrap();
        assert_eq!(d.pods.len(), 2);
        assert_eq!(d.pods[0].top, "monilia");
        assert_eq!(d.pods[1].top, "black_pod");
        assert!((d.pods[1].probs["black_pod"] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_floor() {
        let (r, kb) = setup();
        let d = diagnose("img", &[], &r, &kb, &DiagnoseConfig::default()).unwrap();
        assert!(d.pods.is_empty());
        let d = diagnose("img", &[det(0, [0., 0., 1., 1.], 0.1)], &r, &kb, &DiagnoseConfig::default()).unwrap();
        assert!(d.pods.is_empty());
        let b = [0., 0., 10., 10.];
        let dets = [det(2, b, 0.96), det(1, b, 0.02), det(0, b, 0.02)];
        let d = diagnose("img", &dets, &r, &kb, &DiagnoseConfig::default()).unwrap();
        assert_eq!(d.pods.len(), 1);
        assert!((d.pods[0].probs["monilia"] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn missing_knowledge_is_error() {
        let r = ClassRegistry::default();
        let mut kb = KnowledgeBase::builtin(&r).unwrap();
        kb.entries.retain(|e| e.class_name != "monilia");
        let err = diagnose("img", &[det(1, [0., 0., 5., 5.], 0.9)], &r, &kb, &DiagnoseConfig::default());
        assert!(matches!(err, Err(DiagnosisError::MissingKnowledge(_))));
    }

    #[test]
    fn kb_validation() {
        let r = ClassRegistry::default();
        let bad = r#"{"schema":"pod-sentry/kb@1","entries":[{"class":"monilia","display_name":"M","symptoms":[],"treatments":["x"]}]}"#;
        assert!(matches!(KnowledgeBase::from_json(bad, &r), Err(DiagnosisError::BadEntry { .. })));
        let unknown = r#"{"schema":"pod-sentry/kb@1","entries":[{"class":"rust","display_name":"R","symptoms":["a"],"treatments":["b"]}]}"#;
        assert!(KnowledgeBase::from_json(unknown, &r).is_err());
    }

    #[test]
    fn top_class_ties_to_lower_id() {
        let probs = BTreeMap::from([(ClassId(2), 0.5), (ClassId(1), 0.5)]);
        assert_eq!(top_class(&probs), Some((ClassId(1), 0.5)));
    }

    fn diag_with_top(c: u32) -> Diagnosis {
        let (r, kb) = setup();
        diagnose("img", &[det(c, [0., 0., 5., 5.], 0.9)], &r, &kb, &DiagnoseConfig::default()).unwrap()
    }

    #[test]
    fn image_level_bookkeeping() {
        let r = ClassRegistry::default();
        let all_right = image_level_counts(
            &[diag_with_top(0), diag_with_top(1), diag_with_top(2)],
            &[ClassId(0), ClassId(1), ClassId(2)],
            &r,
        )
        .unwrap();
        assert!(all_right.values().all(|c| accuracy(c).unwrap() == 1.0));

        let c = image_level_counts(&[diag_with_top(2)], &[ClassId(1)], &r).unwrap();
        assert_eq!(c[&ClassId(2)], ConfusionCounts::new(0, 0, 1, 0));
        assert_eq!(c[&ClassId(1)], ConfusionCounts::new(0, 0, 0, 1));
        assert_eq!(c[&ClassId(0)], ConfusionCounts::new(0, 1, 0, 0));

        let empty = image_level_counts(&[], &[], &r).unwrap();
        assert!(accuracy(&empty[&ClassId(0)]).is_err());
        assert!(matches!(image_level_counts(&[], &[ClassId(0)], &r), Err(DiagnosisError::LengthMismatch { .. })));
    }
}
