//! Experiment configuration files.
//!
//! A config is TOML with the system blocks understood by
//! [`SystemConfig`] plus `seed`, `[command]` and `[output]`:
//!
//! ```toml
//! seed = 7
//! [system]
//! kind = "cat_map"
//! [command]
//! alpha = 0.5
//! epsilon = 0.1
//! [output]
//! dir = "results"
//! format = "both"
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use estent_core::systems::{MetricBlock, SpaceBlock, SystemBlock};
use estent_core::{Error, SystemConfig, SystemDefinition};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

/// Subcommand parameters; every key has a matching command-line flag that
/// takes precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandBlock {
    pub alpha: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub tmin: Option<f64>,
    pub tmax: Option<f64>,
    pub grid: Option<usize>,
    pub particles: Option<usize>,
    pub samples: Option<usize>,
    pub k: Option<u32>,
    pub n: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub reorth: Option<usize>,
    pub beta: Option<f64>,
    pub horizon: Option<usize>,
    pub lipschitz: Option<f64>,
    pub safety: Option<f64>,
    pub domain: Option<String>,
    pub density: Option<f64>,
    pub chart_lipschitz: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub system: Option<SystemBlock>,
    pub space: Option<SpaceBlock>,
    pub metric: Option<MetricBlock>,
    #[serde(default)]
    pub command: CommandBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("invalid config: {e}")).into())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    /// The configured system; the cat map when no `[system]` block is given.
    pub fn system(&self) -> anyhow::Result<SystemDefinition> {
        let Some(system) = &self.system else {
            if self.space.is_some() || self.metric.is_some() {
                return Err(Error::Usage("[space] or [metric] given without [system]".into()).into());
            }
            return Ok(SystemDefinition::cat_map());
        };
        let cfg = SystemConfig {
            system: system.clone(),
            space: self.space.clone(),
            metric: self.metric.clone(),
        };
        Ok(SystemDefinition::from_config(&cfg)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_blocks() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 9
            [system]
            kind = "standard_map"
            a = 1.5
            [command]
            alpha = [0.0, 0.5]
            epsilon = 0.2
            [output]
            dir = "x"
            format = "csv"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.command.alpha, Some(vec![0.0, 0.5]));
        assert_eq!(cfg.output.format, Some(Format::Csv));
        assert_eq!(cfg.system().unwrap(), SystemDefinition::standard_map(1.5));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(ExperimentConfig::from_toml_str("[command]\nalpah = [1.0]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[metric]\nkind = \"euclidean\"\n").unwrap().system().is_err());
    }
}
