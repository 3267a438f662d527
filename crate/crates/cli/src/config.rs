//! Pipeline configuration as a single JSON document. Every constant of the
//! pipeline is inspectable via `print-config` and overridable field by
//! field (missing fields take their defaults).

use std::fs;
use std::path::Path;

use lrsift_core::PipelineConfig;

use crate::error::{CliError, Result};

/// Pretty-printed JSON of the full default configuration.
pub fn default_config_json() -> String {
    serde_json::to_string_pretty(&PipelineConfig::default()).expect("config serializes")
}

/// Load and validate a config file; `None` yields the defaults.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let config = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
        }
    };
    config.validate()?;
    Ok(config)
}
