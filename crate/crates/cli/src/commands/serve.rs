use pod_sentry_service::{serve, ServiceConfig};

use crate::error::{CliError, EXIT_OK};
use crate::ServeArgs;

/// Settings come from the config file, then `POD_SENTRY_STORE` /
/// `POD_SENTRY_LISTEN`, then flags.
pub fn run(args: ServeArgs) -> Result<u8, CliError> {
    let mut config = match &args.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(l) = &args.listen {
        config.listen = l.parse().map_err(|e| CliError::Usage(format!("--listen {l:?}: {e}")))?;
    }
    if let Some(s) = args.store {
        config.store = s;
    }
    if let Some(u) = args.ui {
        config.ui_dir = Some(u);
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(format!("starting runtime: {e}")))?;
    rt.block_on(serve(config))?;
    Ok(EXIT_OK)
}
