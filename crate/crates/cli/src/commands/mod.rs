pub mod dataset;
pub mod diagnose;
pub mod eval;
pub mod preprocess;
pub mod serve;
pub mod trainlog;

use std::path::{Path, PathBuf};

/// Directory a manifest's relative image paths resolve against.
pub fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// File-system safe rendering of an image id.
pub fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}
