use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use pod_sentry::backend::BackendDescriptor;
use pod_sentry::preprocess::DEFAULT_TARGET_SIZE;
use pod_sentry::DiagnoseConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const ENV_STORE: &str = "POD_SENTRY_STORE";
pub const ENV_LISTEN: &str = "POD_SENTRY_LISTEN";

/// Name of the backend used when a request does not pick one.
pub const DEFAULT_BACKEND: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub store: PathBuf,
    /// Named backends in descriptor form (`file:...`, `mock:7`,
    /// `external:http://...`). Clients choose by name only.
    pub backends: BTreeMap<String, String>,
    /// Knowledge base document; the built-in one when unset.
    pub kb: Option<PathBuf>,
    pub target_size: u32,
    pub max_upload_bytes: usize,
    pub diagnose: DiagnoseConfig,
    /// Static bundle served at `/` when set.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store: PathBuf::from("store"),
            backends: BTreeMap::from([(DEFAULT_BACKEND.to_string(), "mock:0".to_string())]),
            kb: None,
            target_size: DEFAULT_TARGET_SIZE,
            max_upload_bytes: 20 * 1024 * 1024,
            diagnose: DiagnoseConfig::default(),
            ui_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file, resolving relative store/kb/ui/file-backend paths
    /// against the current directory, as written.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ServiceError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Applies `POD_SENTRY_STORE` / `POD_SENTRY_LISTEN` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(store) = lookup(ENV_STORE) {
            self.store = PathBuf::from(store);
        }
        if let Some(listen) = lookup(ENV_LISTEN) {
            self.listen = listen.parse().map_err(|e| ServiceError::Config(format!("{ENV_LISTEN}={listen:?}: {e}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.target_size == 0 {
            return Err(ServiceError::Config("target_size must be positive".into()));
        }
        if !self.backends.contains_key(DEFAULT_BACKEND) {
            return Err(ServiceError::Config(format!("backends must define {DEFAULT_BACKEND:?}")));
        }
        for (name, spec) in &self.backends {
            spec.parse::<BackendDescriptor>().map_err(|e| ServiceError::Config(format!("backend {name:?}: {e}")))?;
        }
        if !(0.0..=1.0).contains(&self.diagnose.score_floor) {
            return Err(ServiceError::Config("diagnose.score_floor must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.diagnose.nms_iou) {
            return Err(ServiceError::Config("diagnose.nms_iou must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
