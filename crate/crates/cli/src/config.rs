//! Run configuration: a TOML file with one section per module, plus
//! `--set section.key=value` overrides applied before deserialization so
//! unknown keys are rejected either way.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sp4d::appearance::AppearanceConfig;
use sp4d::field::DEFAULT_TIME_CULL;
use sp4d::io::{SyntheticSpec, DEFAULT_SPLIT_RATIO};
use sp4d::losses::LossWeights;
use sp4d::render::{RenderSettings, DEFAULT_TILE_SIZE};
use sp4d::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory.
    pub path: PathBuf,
    /// Training frames per validation frame.
    pub split_ratio: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data"),
            split_ratio: DEFAULT_SPLIT_RATIO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/latest"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub tile_size: usize,
    pub time_cull: f64,
    pub parallel: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            time_cull: DEFAULT_TIME_CULL,
            parallel: true,
        }
    }
}

impl RenderConfig {
    pub fn settings(&self) -> RenderSettings {
        RenderSettings {
            tile_size: self.tile_size,
            time_cull: self.time_cull,
            sh_degree: None,
            parallel: self.parallel,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub output: OutputConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub appearance: AppearanceConfig,
    pub render: RenderConfig,
    pub synthetic: SyntheticSpec,
}

impl Config {
    /// Reads `path` (defaults when absent) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.validate()?;
        self.appearance.validate()?;
        if self.render.tile_size == 0 {
            bail!("render.tile_size must be positive");
        }
        if !(self.render.time_cull.is_finite() && self.render.time_cull >= 0.0) {
            bail!("render.time_cull must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing configuration")
    }

    /// Writes the resolved configuration to `dir/config.toml`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, value)) = spec.split_once('=') else {
        bail!("override `{spec}` is not of the form key=value");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty component");
    }
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for s in sections {
        let entry = node
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{s}` is not a section"),
        };
    }
    node.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}
