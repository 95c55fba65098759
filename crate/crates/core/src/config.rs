//! Versioned experiment configuration with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::divergences::DivergenceSpec;
use crate::error::{Error, Result};
use crate::gridworld::{GridWorldSpec, StateTransform};
use crate::policy::Regime;
use crate::tvd::TvDConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable that replaces `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "TVD_OUTPUT_DIR";

/// Target-domain transform; rotations are about the grid center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    Identity,
    /// Angle in radians.
    Rotation { angle: f64 },
}

impl TransformSpec {
    pub fn build(&self, grid: &GridWorldSpec) -> StateTransform {
        match *self {
            TransformSpec::Identity => StateTransform::Identity,
            TransformSpec::Rotation { angle } => StateTransform::rotation(grid, angle),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Master seed for every random substream.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub source_regime: Regime,
    /// Outer iterations between TvD checkpoints.
    pub checkpoint_every: usize,
    pub gridworld: GridWorldSpec,
    pub transform: TransformSpec,
    pub divergence: DivergenceSpec,
    pub tvd: TvDConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 1,
            output_dir: PathBuf::from("out"),
            source_regime: Regime::HighEntropyOptimal,
            checkpoint_every: 50,
            gridworld: GridWorldSpec::default(),
            transform: TransformSpec::Rotation {
                angle: std::f64::consts::FRAC_PI_2,
            },
            divergence: DivergenceSpec::default(),
            tvd: TvDConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file body, then applies `key.path=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::format("config", e.to_string()))?;
        match table.get("version") {
            None => return Err(Error::Config("config has no `version` key".into())),
            Some(toml::Value::Integer(v)) if *v == i64::from(CONFIG_VERSION) => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "unsupported config version {v}; this build reads version {CONFIG_VERSION}"
                )))
            }
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applies overrides and the output-dir variable.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::from_toml_str(&text, overrides)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", self.version)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        self.gridworld.validate()?;
        self.tvd_config().validate()
    }

    pub fn transform(&self) -> StateTransform {
        self.transform.build(&self.gridworld)
    }

    /// Outer-loop settings with the shared divergence and seed filled in.
    pub fn tvd_config(&self) -> TvDConfig {
        TvDConfig {
            divergence: self.divergence.clone(),
            seed: self.seed,
            ..self.tvd.clone()
        }
    }
}

/// Sets `a.b.c = value`, creating intermediate tables. The value is read as
/// a TOML literal, or as a bare string if it does not parse as one.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override path `{path}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cur = table;
    for k in parents {
        cur = match cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{path}`: `{k}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
