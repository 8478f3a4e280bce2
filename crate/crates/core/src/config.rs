//! Run configuration for the command-line tool.
//!
//! A run is configured by a TOML file whose tables mirror the library
//! configs (`[synthetic]`, `[encoder]`, `[pretrain]`, `[downstream]`,
//! `[ablation]`). Values are layered: the profile's defaults, then the file,
//! then `key.path = value` overrides from flags. Unknown keys are rejected
//! after layering.

use std::env;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SyntheticConfig, DATA_ROOT_ENV};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::train::{DownstreamConfig, PretrainConfig};

/// Named default sets. `full` keeps the full-scale hyperparameters, `desk`
/// shrinks the run to something a laptop finishes in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Full,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    /// `tiny`, `s`, `m` or `l`; ignored when `config` is given.
    pub preset: String,
    /// Initialization seed.
    pub seed: u64,
    pub config: Option<EncoderConfig>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self { preset: "tiny".into(), seed: 42, config: None }
    }
}

impl EncoderSection {
    pub fn resolve(&self) -> Result<EncoderConfig> {
        match &self.config {
            Some(c) => {
                c.validate()?;
                Ok(c.clone())
            }
            None => EncoderConfig::preset(&self.preset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub variants: Vec<String>,
    /// Pretraining epochs per variant; the `[pretrain]` value when absent.
    pub epochs: Option<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { variants: Objective::ablation_set().iter().map(ToString::to_string).collect(), epochs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: Profile,
    /// Base directory for relative data paths; `ECG_CONTRAST_DATA_ROOT` when unset.
    pub data_root: Option<PathBuf>,
    /// Directory of recorded noise (`<category>.ecgc`); synthetic noise when unset.
    pub noise_dir: Option<PathBuf>,
    /// Downstream seeds for probe, fine-tune and ablation runs.
    pub eval_seeds: Vec<u64>,
    pub encoder: EncoderSection,
    pub synthetic: SyntheticConfig,
    pub pretrain: PretrainConfig,
    pub downstream: DownstreamConfig,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Full)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (pretrain, downstream) = match profile {
            Profile::Full => (PretrainConfig::default(), DownstreamConfig::default()),
            Profile::Desk => (PretrainConfig::desk(), DownstreamConfig::desk()),
        };
        Self {
            profile,
            data_root: None,
            noise_dir: None,
            eval_seeds: (0..5).collect(),
            encoder: EncoderSection::default(),
            synthetic: SyntheticConfig::default(),
            pretrain,
            downstream,
            ablation: AblationSection::default(),
        }
    }

    /// Layers profile defaults, the optional file and `overrides`
    /// (`dotted.key`, value) in that order.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut layered = toml::Table::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io_at(p, e))?;
            layered = text.parse::<toml::Table>().map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
        }
        for (key, value) in overrides {
            set_path(&mut layered, key, value.clone())?;
        }
        let profile = match layered.get("profile") {
            Some(v) => Profile::deserialize(v.clone()).map_err(|e| Error::config(format!("profile: {e}")))?,
            None => Profile::default(),
        };
        let mut base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut base, layered);
        let cfg = Self::deserialize(toml::Value::Table(base)).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.resolve()?;
        self.synthetic.validate()?;
        self.pretrain.validate()?;
        self.downstream.validate()?;
        for v in &self.ablation.variants {
            v.parse::<Objective>()?;
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::config("eval_seeds must not be empty"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Configured data root, else the environment variable.
    pub fn data_root(&self) -> Option<PathBuf> {
        self.data_root.clone().or_else(|| env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }

    /// Resolves a data path: absolute paths and paths that exist relative to
    /// the working directory are used as given, others are joined to the
    /// data root.
    pub fn data_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() || p.exists() {
            return p.to_path_buf();
        }
        self.data_root().map_or_else(|| p.to_path_buf(), |r| r.join(p))
    }
}

/// Parses a flag value as a TOML literal, falling back to a plain string.
pub fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits `key=value` as given to `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::config(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config(format!("empty config key {key:?}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
