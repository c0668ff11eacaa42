use std::path::Path;

use anyhow::Context;
use crfid::pipeline::PipelineConfig;
use crfid::siggen::GeneratorConfig;
use serde::{Deserialize, Serialize};

/// Contents of `--config`; every table and key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub generator: GeneratorConfig,
    pub pipeline: PipelineConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read {}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| crate::commands::DataError(format!("{}: {e}", p.display())))?
            }
            None => CliConfig::default(),
        };
        if let Some(s) = seed {
            cfg.generator.seed = s;
            cfg.pipeline.seed = s;
        }
        Ok(cfg)
    }
}
