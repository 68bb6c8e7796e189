//! Reference implementations used only by tests. Nothing here calls into the
//! library's matching, curve or AP code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pod_sentry::{
    BoundingBox, ClassId, ClassRegistry, DatasetManifest, DetectionItem, GroundTruthItem, ImageRecord, Split,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// IoU by counting cells of a `cells x cells` grid over `[lo, hi]^2` whose
/// centers fall inside each box.
pub fn grid_iou(a: [f64; 4], b: [f64; 4], lo: f64, hi: f64, cells: usize) -> f64 {
    let step = (hi - lo) / cells as f64;
    let inside = |r: [f64; 4], x: f64, y: f64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for i in 0..cells {
        let x = lo + (i as f64 + 0.5) * step;
        for j in 0..cells {
            let y = lo + (j as f64 + 0.5) * step;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Plain-formula IoU on raw corners.
pub fn formula_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    if area(a) <= 0.0 || area(b) <= 0.0 {
        return 0.0;
    }
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    inter / (area(a) + area(b) - inter)
}

pub fn corners(b: &BoundingBox) -> [f64; 4] {
    [b.x_min(), b.y_min(), b.x_max(), b.y_max()]
}

/// Explicit loop over the recall levels: for each level, scan every point.
pub fn oracle_ap(curve: &[(f64, f64)], points: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..points {
        let r = i as f64 / (points - 1) as f64;
        let mut best = 0.0f64;
        for &(recall, precision) in curve {
            if recall >= r && precision > best {
                best = precision;
            }
        }
        total += best;
    }
    total / points as f64
}

/// Independent greedy matcher for one image and class at one cutoff.
/// Returns the number of true positives after checking the matching is valid.
fn oracle_match(gts: &[[f64; 4]], dets: &[(f64, [f64; 4])], t: f64) -> usize {
    let mut dets = dets.to_vec();
    dets.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1[0].partial_cmp(&b.1[0]).unwrap())
            .then(a.1[1].partial_cmp(&b.1[1]).unwrap())
            .then(a.1[2].partial_cmp(&b.1[2]).unwrap())
            .then(a.1[3].partial_cmp(&b.1[3]).unwrap())
    });
    let mut used = BTreeSet::new();
    let mut pairs = Vec::new();
    for (di, (_, d)) in dets.iter().enumerate() {
        let mut pick: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if used.contains(&gi) {
                continue;
            }
            let v = formula_iou(*d, *g);
            if v >= t && pick.is_none_or(|(_, pv)| v > pv) {
                pick = Some((gi, v));
            }
        }
        if let Some((gi, _)) = pick {
            used.insert(gi);
            pairs.push((di, gi));
        }
    }
    // Verification: every ground truth at most once, every pair above threshold.
    let distinct: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
    assert_eq!(distinct.len(), pairs.len());
    for (di, gi) in &pairs {
        assert!(formula_iou(dets[*di].1, gts[*gi]) >= t);
    }
    pairs.len()
}

pub struct OracleResult {
    /// `(class, threshold index) -> AP` (None when the class has no GT).
    pub aps: BTreeMap<(ClassId, usize), Option<f64>>,
    pub per_threshold: Vec<f64>,
    pub map_50: f64,
    pub map_50_95: f64,
}

/// Brute force: for every class and threshold, re-run matching from scratch
/// at each distinct score cutoff, then average interpolated precision.
/// Evaluates all images (no split filter, no score floor).
pub fn brute_force_evaluate(
    manifest: &DatasetManifest,
    dets: &[DetectionItem],
    thresholds: &[f64],
    points: usize,
) -> OracleResult {
    let mut aps = BTreeMap::new();
    let images: Vec<&str> = manifest.images.iter().map(|i| i.id.as_str()).collect();
    for class in manifest.registry.ids() {
        let gts_of = |img: &str| -> Vec<[f64; 4]> {
            manifest
                .annotations
                .iter()
                .filter(|a| a.class_id == class && a.image_id == img)
                .map(|a| corners(&a.bbox))
                .collect()
        };
        let total: usize = images.iter().map(|i| gts_of(i).len()).sum();
        let class_dets: Vec<&DetectionItem> = dets.iter().filter(|d| d.class_id == class).collect();
        let mut cutoffs: Vec<f64> = class_dets.iter().map(|d| d.score).collect();
        cutoffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        cutoffs.dedup();
        for (ti, &t) in thresholds.iter().enumerate() {
            if total == 0 {
                aps.insert((class, ti), None);
                continue;
            }
            let mut curve = Vec::new();
            for &cut in &cutoffs {
                let (mut tp, mut n) = (0usize, 0usize);
                for img in &images {
                    let kept: Vec<(f64, [f64; 4])> = class_dets
                        .iter()
                        .filter(|d| d.image_id == *img && d.score >= cut)
                        .map(|d| (d.score, corners(&d.bbox)))
                        .collect();
                    n += kept.len();
                    tp += oracle_match(&gts_of(img), &kept, t);
                }
                curve.push((tp as f64 / total as f64, tp as f64 / n as f64));
            }
            let ap = if curve.is_empty() { 0.0 } else { oracle_ap(&curve, points) };
            aps.insert((class, ti), Some(ap));
        }
    }
    let per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|ti| {
            let vals: Vec<f64> = manifest.registry.ids().filter_map(|c| aps[&(c, ti)]).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let half = thresholds.iter().position(|t| (t - 0.5).abs() < 1e-12).unwrap();
    OracleResult {
        map_50: per_threshold[half],
        map_50_95: per_threshold.iter().sum::<f64>() / per_threshold.len() as f64,
        per_threshold,
        aps,
    }
}

pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

/// Random small corpus: up to `max_images` images with up to `max_boxes`
/// ground truths each, on a coarse grid so IoU ties and overlaps are common.
/// Detections jitter ground truths, duplicate them, or land at random, with
/// scores from a short list so score ties occur.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    max_images: usize,
    max_boxes: usize,
) -> (DatasetManifest, Vec<DetectionItem>) {
    let n_images = rng.random_range(1..=max_images);
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut dets = Vec::new();
    let grid = |rng: &mut ChaCha8Rng| -> [f64; 4] {
        let x0 = f64::from(rng.random_range(0..16u32)) * 4.0;
        let y0 = f64::from(rng.random_range(0..16u32)) * 4.0;
        let w = f64::from(rng.random_range(1..8u32)) * 4.0;
        let h = f64::from(rng.random_range(1..8u32)) * 4.0;
        [x0, y0, (x0 + w).min(100.0), (y0 + h).min(100.0)]
    };
    let score = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(1..=10u32)) / 10.0;
    for i in 0..n_images {
        let id = format!("img{i:02}");
        images.push(ImageRecord {
            id: id.clone(),
            path: format!("{id}.png").into(),
            width: 100,
            height: 100,
            split: Split::Validation,
        });
        for _ in 0..rng.random_range(0..=max_boxes) {
            let c = ClassId(rng.random_range(0..3));
            let b = grid(rng);
            anns.push(GroundTruthItem {
                image_id: id.clone(),
                class_id: c,
                bbox: BoundingBox::pixel(b[0], b[1], b[2], b[3]).unwrap(),
            });
            // Detections near this ground truth.
            for _ in 0..rng.random_range(0..=2) {
                let j = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(-2..=2i32)) * 2.0;
                let (dx, dy, dw) = (j(rng), j(rng), j(rng));
                let x0 = (b[0] + dx).clamp(0.0, 99.0);
                let y0 = (b[1] + dy).clamp(0.0, 99.0);
                let x1 = (b[2] + dx + dw).clamp(x0 + 1.0, 100.0);
                let y1 = (b[3] + dy).clamp(y0 + 1.0, 100.0);
                let cls = if rng.random_bool(0.85) { c } else { ClassId(rng.random_range(0..3)) };
                let s = score(rng);
                dets.push(DetectionItem::new(&id, cls, BoundingBox::pixel(x0, y0, x1, y1).unwrap(), s).unwrap());
            }
        }
        for _ in 0..rng.random_range(0..=2) {
            let b = grid(rng);
            let s = score(rng);
            dets.push(
                DetectionItem::new(
                    &id,
                    ClassId(rng.random_range(0..3)),
                    BoundingBox::pixel(b[0], b[1], b[2], b[3]).unwrap(),
                    s,
                )
                .unwrap(),
            );
        }
    }
    (DatasetManifest::new(ClassRegistry::default(), images, anns), dets)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// AP of a ranked TP/FP sequence against `total` ground truths, through the
/// oracle loop (one curve point per detection; scores are distinct).
pub fn sequence_ap(hits: &[bool], total: usize) -> f64 {
    let mut tp = 0;
    let curve: Vec<(f64, f64)> = hits
        .iter()
        .enumerate()
        .map(|(i, h)| {
            tp += usize::from(*h);
            (tp as f64 / total as f64, tp as f64 / (i + 1) as f64)
        })
        .collect();
    if curve.is_empty() {
        0.0
    } else {
        oracle_ap(&curve, 101)
    }
}

/// Smallest ranked TP/FP sequence (by ground-truth count, then length, then
/// lexicographic bit order) whose 101-point AP lies within `tol` of
/// `target`.
pub fn search_sequence(target: f64, tol: f64) -> (Vec<bool>, usize) {
    for total in 1..=8usize {
        for len in 1..=12usize {
            for bits in 0u32..(1 << len) {
                let hits: Vec<bool> = (0..len).map(|i| bits >> (len - 1 - i) & 1 == 1).collect();
                if hits.iter().filter(|h| **h).count() > total {
                    continue;
                }
                if (sequence_ap(&hits, total) - target).abs() <= tol {
                    return (hits, total);
                }
            }
        }
    }
    panic!("no sequence reaches AP {target}");
}

/// Builds a one-image-per-ground-truth corpus where each class follows the
/// given ranked hit sequence. True positives copy their ground-truth box
/// exactly; false positives sit in an empty corner, so the outcome is the
/// same at every IoU threshold.
pub fn fixture_from_sequences(seqs: &[(Vec<bool>, usize)]) -> (DatasetManifest, Vec<DetectionItem>) {
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut dets = Vec::new();
    for (c, (hits, total)) in seqs.iter().enumerate() {
        let class = ClassId(c as u32);
        let ids: Vec<String> = (0..*total).map(|k| format!("c{c}_gt{k}")).collect();
        for id in &ids {
            images.push(ImageRecord {
                id: id.clone(),
                path: format!("{id}.png").into(),
                width: 640,
                height: 640,
                split: Split::Validation,
            });
            anns.push(GroundTruthItem {
                image_id: id.clone(),
                class_id: class,
                bbox: BoundingBox::pixel(100., 100., 300., 400.).unwrap(),
            });
        }
        let mut next_gt = 0;
        for (rank, hit) in hits.iter().enumerate() {
            let score = f64::from(95 - 5 * rank as u32) / 100.0;
            let (image, b) = if *hit {
                next_gt += 1;
                (&ids[next_gt - 1], [100., 100., 300., 400.])
            } else {
                (&ids[rank % ids.len()], [500., 500., 600., 600.])
            };
            dets.push(
                DetectionItem::new(image, class, BoundingBox::pixel(b[0], b[1], b[2], b[3]).unwrap(), score).unwrap(),
            );
        }
    }
    (DatasetManifest::new(ClassRegistry::default(), images, anns), dets)
}

/// Error text for a set of malformed inputs across every parser, or
/// `Err(label)` when a malformed input was accepted.
pub fn malformed_input_messages() -> Vec<Result<(String, String), String>> {
    use pod_sentry::annotation::{parse_detections, parse_voc_xml, parse_yolo_labels};
    use pod_sentry::trainlog::parse_training_log;
    let reg = ClassRegistry::default();
    let mut out = Vec::new();
    let mut push = |label: &str, r: Result<(), String>| {
        out.push(match r {
            Ok(()) => Err(label.to_string()),
            Err(e) => Ok((label.to_string(), e)),
        })
    };
    let yolo = [
        ("yolo too few fields", "0 0.5 0.5 0.2 0.2\n1 0.5 0.5 0.2"),
        ("yolo not a number", "0 0.5 abc 0.2 0.2"),
        ("yolo unknown class", "0 0.5 0.5 0.2 0.2\n\n7 0.5 0.5 0.1 0.1"),
        ("yolo out of range", "2 0.9 0.5 0.4 0.2"),
        ("yolo negative size", "1 0.5 0.5 -0.1 0.2"),
        ("yolo non-integer class", "1.5 0.5 0.5 0.1 0.2"),
    ];
    for (label, text) in yolo {
        push(label, parse_yolo_labels(text, "x", (640, 480), &reg).map(|_| ()).map_err(|e| e.to_string()));
    }
    let voc_obj = |name: &str, bb: &str| {
        format!(
            "<annotation><filename>a.jpg</filename><size><width>100</width><height>80</height></size>\n<object><name>{name}</name>{bb}</object></annotation>"
        )
    };
    let voc = [
        (
            "voc unknown class",
            voc_obj("cherry", "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox>"),
        ),
        ("voc missing bndbox", voc_obj("monilia", "")),
        (
            "voc bad number",
            voc_obj("monilia", "<bndbox><xmin>one</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox>"),
        ),
        (
            "voc inverted box",
            voc_obj("monilia", "<bndbox><xmin>9</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox>"),
        ),
        ("voc missing corner", voc_obj("monilia", "<bndbox><xmin>1</xmin><ymin>1</ymin><ymax>5</ymax></bndbox>")),
        ("voc missing size", "<annotation><object><name>healthy</name></object></annotation>".to_string()),
        ("voc broken xml", "<annotation><size>".to_string()),
    ];
    for (label, text) in voc {
        push(label, parse_voc_xml(&text, "x", &reg).map(|_| ()).map_err(|e| e.to_string()));
    }
    let rec = |extra: &str| {
        format!(
            r#"{{"schema":"pod-sentry/detections@1","detections":[{{"image_id":"a","class_id":0,"score":0.5,"convention":"pixel","box":{{"x_min":0,"y_min":0,"x_max":5,"y_max":5}}}},{{"image_id":"a","class_id":0,"convention":"pixel",{extra}"box":{{"x_min":0,"y_min":0,"x_max":5,"y_max":5}}}}]}}"#
        )
    };
    let dets = [
        ("detections score above 1", rec(r#""score":1.2,"#)),
        ("detections missing score", rec("")),
        ("detections unknown field", rec(r#""score":0.3,"colour":"red","#)),
        ("detections truncated", "{\"schema\":\"pod-sentry/detections@1\",\"detections\":[".to_string()),
    ];
    for (label, text) in dets {
        push(label, parse_detections(&text).map(|_| ()).map_err(|e| e.to_string()));
    }
    let header = "epoch,box_loss,objectness_loss,classification_loss,precision,recall,map50,map5095";
    let logs = [
        ("trainlog bad number", format!("{header}\n1,0.05,0.01,0.01,0.1,0.1,0.1,0.05\n2,x,0.01,0.01,0.1,0.1,0.1,0.05")),
        (
            "trainlog epochs out of order",
            format!("{header}\n3,0.05,0.01,0.01,0.1,0.1,0.1,0.05\n2,0.05,0.01,0.01,0.1,0.1,0.1,0.05"),
        ),
        ("trainlog metric above 1", format!("{header}\n1,0.05,0.01,0.01,1.5,0.1,0.1,0.05")),
    ];
    for (label, text) in logs {
        push(label, parse_training_log(&text).map(|_| ()).map_err(|e| e.to_string()));
    }
    out
}

/// Whether an error message points at a location in its input.
pub fn has_position(msg: &str) -> bool {
    ["line ", "record ", "column ", "item ", "position "].iter().any(|k| msg.contains(k))
}

pub const TRAINLOG_HEADER: &str = "epoch,box_loss,objectness_loss,classification_loss,precision,recall,map50,map5095";

/// A 100-epoch log whose series approach the reference run's end points
/// along saturating curves, with a small deterministic wobble.
pub fn synthetic_training_log() -> String {
    // (start, end) per column after `epoch`.
    let series = [(0.05, 0.02), (0.012, 0.002), (0.016, 0.004), (0.05, 0.6), (0.02, 0.45), (0.01, 0.3), (0.004, 0.23)];
    let mut out = String::from(TRAINLOG_HEADER);
    for e in 1..=100u32 {
        let t = f64::from(e - 1) / 99.0;
        let decay = (-5.0 * t).exp();
        out.push_str(&format!("\n{e}"));
        for (k, (s, end)) in series.iter().enumerate() {
            let wobble = 1.0 + 0.01 * ((f64::from(e) * 1.7 + k as f64).sin());
            let v = (end + (s - end) * decay) * wobble;
            out.push_str(&format!(",{v:.6}"));
        }
    }
    out.push('\n');
    out
}

/// 100 epochs with every series frozen at its starting value.
pub fn flat_training_log() -> String {
    let mut out = String::from(TRAINLOG_HEADER);
    for e in 1..=100u32 {
        out.push_str(&format!("\n{e},0.05,0.012,0.016,0.05,0.02,0.01,0.004"));
    }
    out.push('\n');
    out
}

/// Deterministic noisy RGB test image.
pub fn test_image(width: u32, height: u32, seed: u64) -> image::RgbImage {
    let mut rng = seeded(seed);
    let base = [rng.random_range(0..200u8), rng.random_range(0..200u8), rng.random_range(0..200u8)];
    image::RgbImage::from_fn(width, height, |x, y| {
        let n = rng.random_range(0..40u8);
        image::Rgb([
            base[0].wrapping_add(((x * 7) % 50) as u8).wrapping_add(n),
            base[1].wrapping_add(((y * 5) % 50) as u8),
            base[2].wrapping_add((((x + y) * 3) % 50) as u8),
        ])
    })
}

/// Samples a `n x n` lattice of points inside `b`, maps each through the
/// crop window and scale, and returns the extent of the survivors together
/// with the lattice spacing in output pixels.
pub fn raster_transform(b: [f64; 4], crop: [f64; 4], target: f64, n: usize) -> Option<([f64; 4], f64)> {
    let scale = target / (crop[2] - crop[0]);
    let (sx, sy) = ((b[2] - b[0]) / n as f64, (b[3] - b[1]) / n as f64);
    let mut ext = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for i in 0..=n {
        let x = b[0] + i as f64 * sx;
        for j in 0..=n {
            let y = b[1] + j as f64 * sy;
            if x < crop[0] || x > crop[2] || y < crop[1] || y > crop[3] {
                continue;
            }
            let (u, v) = ((x - crop[0]) * scale, (y - crop[1]) * scale);
            any = true;
            ext = [ext[0].min(u), ext[1].min(v), ext[2].max(u), ext[3].max(v)];
        }
    }
    any.then_some((ext, sx.max(sy) * scale))
}

/// A smooth synthetic pod photo: a shaded ellipse on a soil-coloured
/// background. Compresses well, so it can live in the repository.
pub fn pod_image(width: u32, height: u32) -> image::RgbImage {
    let (cx, cy) = (f64::from(width) / 2.0, f64::from(height) / 2.0);
    let (rx, ry) = (f64::from(width) * 0.3, f64::from(height) * 0.36);
    image::RgbImage::from_fn(width, height, |x, y| {
        let (dx, dy) = ((f64::from(x) - cx) / rx, (f64::from(y) - cy) / ry);
        let d = dx * dx + dy * dy;
        if d <= 1.0 {
            let shade = 1.0 - 0.35 * d;
            image::Rgb([(150.0 * shade) as u8, (190.0 * shade) as u8, (60.0 * shade) as u8])
        } else {
            image::Rgb([92, 64 + (y % 8) as u8, 40])
        }
    })
}
