use pod_sentry::preprocess::{run_pipeline, split_dataset, write_outcome, CropMode, CropSidecar};
use pod_sentry::{DatasetManifest, PreprocessConfig};

use super::manifest_dir;
use crate::error::{CliError, EXIT_DATA, EXIT_OK};
use crate::io::read_toml;
use crate::PreprocessCmd;

pub fn run(cmd: PreprocessCmd) -> Result<u8, CliError> {
    let PreprocessCmd::Run { manifest, out, config, crops, source_root, split, ratio, seed } = cmd;
    let mut cfg: PreprocessConfig = match &config {
        Some(p) => read_toml(p)?,
        None => PreprocessConfig::default(),
    };
    if let Some(r) = ratio {
        cfg.split_ratio = r;
    }
    if let Some(s) = seed {
        cfg.split_seed = s;
    }
    let sidecar = crops.as_deref().map(CropSidecar::load).transpose()?;
    if cfg.crop_mode == CropMode::CustomRect && sidecar.is_none() {
        return Err(CliError::Usage("crop_mode \"custom-rect\" needs --crops".into()));
    }
    let m = DatasetManifest::load(&manifest)?;
    let root = source_root.unwrap_or_else(|| manifest_dir(&manifest));
    let mut outcome = run_pipeline(&m, &cfg, sidecar.as_ref(), &root, &out)?;
    if split {
        outcome.manifest = split_dataset(&outcome.manifest, cfg.split_ratio, cfg.split_seed)?;
    }
    write_outcome(&outcome, &out)?;
    let failures = outcome.failures();
    for r in outcome.log.records.iter().filter(|r| r.error.is_some()) {
        println!("failed: {}: {}", r.image_id, r.error.as_deref().unwrap_or_default());
    }
    println!(
        "processed {}/{} images to {}x{} in {}",
        m.images.len() - failures,
        m.images.len(),
        cfg.target_size,
        cfg.target_size,
        out.display()
    );
    Ok(if failures == 0 { EXIT_OK } else { EXIT_DATA })
}
