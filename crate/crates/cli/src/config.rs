//! Runtime configuration resolution: the MEDLINKER_CONFIG environment
//! variable may point at a JSON [`PipelineConfig`]; command-line flags
//! override individual fields.

use std::path::PathBuf;

use anyhow::Context;
use medlinker_core::PipelineConfig;

pub const CONFIG_ENV: &str = "MEDLINKER_CONFIG";

/// Load the config file named by MEDLINKER_CONFIG, or defaults when the
/// variable is unset.
pub fn load_env_config() -> anyhow::Result<PipelineConfig> {
    match std::env::var_os(CONFIG_ENV) {
        None => Ok(PipelineConfig::default()),
        Some(path) => {
            let path = PathBuf::from(path);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {} ({})", path.display(), CONFIG_ENV))?;
            let cfg: PipelineConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {} as pipeline config", path.display()))?;
            Ok(cfg)
        }
    }
}

/// Apply flag overrides on top of a loaded config.
pub fn apply_overrides(
    mut cfg: PipelineConfig,
    index: Option<PathBuf>,
    k: Option<usize>,
) -> PipelineConfig {
    if index.is_some() {
        cfg.index = index;
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    cfg
}
