use pod_sentry::backend::BackendDescriptor;
use pod_sentry::diagnosis::diagnose;
use pod_sentry::preprocess::{decode_rgb, normalize_image};
use pod_sentry::{ClassRegistry, DiagnoseConfig, KnowledgeBase};

use crate::error::{CliError, EXIT_OK};
use crate::io::{read_toml, write_text};
use crate::DiagnoseCmd;

pub fn run(cmd: DiagnoseCmd) -> Result<u8, CliError> {
    let DiagnoseCmd::Image { image, backend, image_id, kb, config, target_size, out } = cmd;
    let cfg: DiagnoseConfig = match &config {
        Some(p) => read_toml(p)?,
        None => DiagnoseConfig::default(),
    };
    let registry = ClassRegistry::default();
    let kb = match &kb {
        Some(p) => KnowledgeBase::load(p, &registry)?,
        None => KnowledgeBase::builtin(&registry)?,
    };
    let descriptor: BackendDescriptor = backend.parse()?;
    let backend = descriptor.build()?;
    let bytes = std::fs::read(&image).map_err(|e| CliError::io(&image, e))?;
    let raster = decode_rgb(&bytes)?;
    let (processed, _) = normalize_image(&raster, None, target_size)?;
    let id = image_id
        .unwrap_or_else(|| image.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned()));
    let dets = backend.detect(&id, &processed)?;
    let d = diagnose(&id, &dets, &registry, &kb, &cfg)?;
    let text = d.to_json();
    match out {
        Some(p) => {
            write_text(&p, &text)?;
            for (i, pod) in d.pods.iter().enumerate() {
                let pct = pod.probs.get(&pod.top).copied().unwrap_or(0.0) * 100.0;
                println!("pod {i}: {} {pct:.1}%", pod.top);
            }
            if d.pods.is_empty() {
                println!("no pods detected");
            }
        }
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}
