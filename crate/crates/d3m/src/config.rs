//! Run configuration: one TOML file, validated before anything runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use d3m_core::attribution::TrakConfig;
use d3m_core::datasets::SynthConfig;
use d3m_core::debias::D3MConfig;
use d3m_core::discovery::DiscoveryConfig;
use d3m_core::eval::SweepMethod;
use d3m_core::models::{ModelConfig, TrainConfig};
use d3m_core::numerics::derive_seed;

use crate::error::{CliError, IoContext, Result};

/// Where the train/val/test splits come from. Exactly one field is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthConfig>,
    /// Directory holding `train.bin`, `val.bin`, `test.bin` and their sidecars.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            synthetic: Some(SynthConfig::default()),
            path: None,
        }
    }
}

pub enum DataSource<'a> {
    Synthetic(&'a SynthConfig),
    Path(&'a Path),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Removal counts for `sweep`; empty means the default geometric grid up
    /// to the balancing removal count.
    pub k_grid: Vec<usize>,
    pub methods: Vec<SweepMethod>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_grid: Vec::new(),
            methods: SweepMethod::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub trak: TrakConfig,
    #[serde(default)]
    pub d3m: D3MConfig,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes")
    }
}

/// Stream ids mixing the global seed into each component.
mod stream {
    pub const DATA: u64 = 1;
    pub const MODEL: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const TRAK: u64 = 4;
    pub const SWEEP: u64 = 5;
}

impl RunConfig {
    /// Parses TOML text, applies `key=value` overrides, then validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config("<file>", e.to_string().trim_end()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message().trim_end())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = fs::read_to_string(path).at(path)?;
        RunConfig::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: d3m_core::Result<()>| r.map_err(|e| CliError::config(name, e));
        match (&self.data.synthetic, &self.data.path) {
            (Some(s), None) => {
                section("data.synthetic", s.validate())?;
                if self.model.input_dim != s.dim {
                    return Err(CliError::config(
                        "model.input_dim",
                        format!("is {} but data.synthetic.dim is {}", self.model.input_dim, s.dim),
                    ));
                }
                if self.model.class_count != 2 {
                    return Err(CliError::config("model.class_count", "synthetic data has 2 classes"));
                }
            }
            (None, Some(_)) => {}
            _ => return Err(CliError::config("data", "exactly one of `synthetic` or `path` must be set")),
        }
        section("model", self.model.validate())?;
        section("train", self.train.validate())?;
        section("trak", self.trak.validate())?;
        section("d3m", self.d3m.validate())?;
        section("discovery", self.discovery.validate())?;
        if self.eval.methods.is_empty() {
            return Err(CliError::config("eval.methods", "at least one method is required"));
        }
        Ok(())
    }

    pub fn source(&self) -> DataSource<'_> {
        match (&self.data.synthetic, &self.data.path) {
            (Some(s), _) => DataSource::Synthetic(s),
            (None, Some(p)) => DataSource::Path(p),
            (None, None) => unreachable!("validated config has a data source"),
        }
    }

    fn seeded(&self, stream: u64, local: u64) -> u64 {
        derive_seed(derive_seed(self.seed, stream), local)
    }

    /// Generator settings with the effective seed.
    pub fn synth(&self) -> Option<SynthConfig> {
        self.data.synthetic.as_ref().map(|s| SynthConfig {
            seed: self.seeded(stream::DATA, s.seed),
            ..s.clone()
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.with_seed(self.seeded(stream::MODEL, self.model.seed))
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.with_seed(self.seeded(stream::TRAIN, self.train.seed))
    }

    pub fn trak_config(&self) -> TrakConfig {
        TrakConfig {
            seed: self.seeded(stream::TRAK, self.trak.seed),
            ..self.trak.clone()
        }
    }

    pub fn sweep_seed(&self) -> u64 {
        self.seeded(stream::SWEEP, self.eval.seed)
    }

    /// The config as TOML, as stored in a run directory.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to toml")
    }

    /// SHA-256 of everything that influences results, i.e. the config
    /// without its output directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out: None,
            ..self.clone()
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&canonical).expect("run config serializes")))
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML value, falling back to
/// a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override key `{key}` is malformed")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(parts[..=i].join("."), "is not a table and cannot be overridden by a dotted key"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
