use pod_sentry::annotation::read_detections_file;
use pod_sentry::{evaluate, DatasetManifest, EvalConfig, EvaluationReport};
use pod_sentry_service::Store;

use crate::error::{CliError, EXIT_OK};
use crate::io::{read_toml, write_text};
use crate::EvalCmd;

pub fn run(cmd: EvalCmd) -> Result<u8, CliError> {
    let EvalCmd::Run { manifest, detections, out, config, all_splits, publish } = cmd;
    let mut cfg: EvalConfig = match &config {
        Some(p) => read_toml(p)?,
        None => EvalConfig::default(),
    };
    if all_splits {
        cfg.split = None;
    }
    let m = DatasetManifest::load(&manifest)?;
    let dets = read_detections_file(&detections)?;
    let report = evaluate(&m, &dets, &cfg)?;
    let text = report.to_json();
    write_text(&out, &text)?;
    if let Some(store) = publish {
        Store::open(&store)?.publish_eval(text.as_bytes())?;
        println!("published to {}", store.display());
    }
    print!("{}", summary(&report));
    Ok(EXIT_OK)
}

fn fmt_ap(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn summary(r: &EvaluationReport) -> String {
    let mut out = format!("{:<12} {:>5} {:>6} {:>8} {:>10}\n", "class", "gt", "dets", "AP@0.5", "AP@.5:.95");
    for c in &r.per_class {
        let at50 = c.aps.iter().find(|a| (a.iou_threshold - 0.5).abs() < 1e-12).and_then(|a| a.ap);
        let defined: Vec<f64> = c.aps.iter().filter_map(|a| a.ap).collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        out.push_str(&format!(
            "{:<12} {:>5} {:>6} {:>8} {:>10}\n",
            c.name,
            c.ground_truths,
            c.detections,
            fmt_ap(at50),
            fmt_ap(mean)
        ));
    }
    out.push_str(&format!("mAP@0.5      {:.4}\nmAP@0.5:0.95 {:.4}\n", r.map_50, r.map_50_95));
    out
}
