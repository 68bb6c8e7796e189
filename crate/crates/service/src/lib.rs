//! HTTP diagnosis service: upload a pod photo, get per-pod class
//! probabilities and treatment guidance, and leave feedback on the result.
//!
//! All endpoints live under `/v1` and exchange schema-tagged JSON documents.

mod api;
pub mod config;
pub mod store;

use std::collections::BTreeMap;
use std::sync::Arc;

use pod_sentry::backend::BackendDescriptor;
use pod_sentry::diagnosis::DiagnosisError;
use pod_sentry::{BackendError, ClassRegistry, DetectionBackend, KnowledgeBase};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use api::router;
pub use config::ServiceConfig;
pub use store::{FeedbackRecord, Store, StoredCase, Verdict};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("stored document is unreadable: {0}")]
    Corrupt(String),
    #[error("backend {name:?}: {source}")]
    Backend {
        name: String,
        #[source]
        source: BackendError,
    },
    #[error("knowledge base: {0}")]
    Knowledge(#[from] DiagnosisError),
}

pub struct NamedBackend {
    pub descriptor: BackendDescriptor,
    pub backend: Box<dyn DetectionBackend>,
}

/// Everything a request handler needs; shared behind an `Arc`.
pub struct AppState {
    pub config: ServiceConfig,
    pub registry: ClassRegistry,
    pub kb: KnowledgeBase,
    pub backends: BTreeMap<String, NamedBackend>,
    pub store: Store,
    /// Digest of the settings that shape a diagnosis; part of every case id.
    fingerprint: String,
}

impl AppState {
    pub fn from_config(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let registry = ClassRegistry::default();
        let kb = match &config.kb {
            Some(p) => KnowledgeBase::load(p, &registry)?,
            None => KnowledgeBase::builtin(&registry)?,
        };
        let mut backends = BTreeMap::new();
        for (name, spec) in &config.backends {
            let descriptor: BackendDescriptor =
                spec.parse().map_err(|source| ServiceError::Backend { name: name.clone(), source })?;
            let backend = descriptor.build().map_err(|source| ServiceError::Backend { name: name.clone(), source })?;
            backends.insert(name.clone(), NamedBackend { descriptor, backend });
        }
        let store = Store::open(&config.store)?;
        let fingerprint = {
            let doc = serde_json::json!({
                "target_size": config.target_size,
                "diagnose": config.diagnose,
                "kb": kb,
            });
            hex::encode(Sha256::digest(doc.to_string()))
        };
        Ok(Arc::new(Self { config, registry, kb, backends, store, fingerprint }))
    }

    /// Content address of an upload under this configuration.
    pub fn case_id(&self, bytes: &[u8], image_id: Option<&str>, backend: &str) -> String {
        let mut h = Sha256::new();
        h.update(Sha256::digest(bytes));
        h.update(self.fingerprint.as_bytes());
        h.update(b"\0");
        h.update(backend.as_bytes());
        h.update(b"\0");
        h.update(image_id.unwrap_or("").as_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

/// Binds the configured address and serves until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let listen = config.listen;
    let state = AppState::from_config(config)?;
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|source| ServiceError::Io { path: listen.to_string(), source })?;
    tracing::info!(address = %listen, store = %state.store.root().display(), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServiceError::Io { path: listen.to_string(), source })
}
