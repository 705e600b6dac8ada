//! Experiment configuration: a JSON document, patched by dotted-path
//! overrides before it is deserialized and validated.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use mufno::burgers::BurgersConfig;
use mufno::experiments::{SelectBy, SweepAxis};
use mufno::model::FnoConfig;
use mufno::parametrization::{HyperParams, Parametrization};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Where datasets come from: FNOD files when both paths are given,
/// otherwise generated in memory from `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub generate: BurgersConfig,
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub eval_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub modes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub select_by: SelectBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub k_proxy: usize,
    pub k_target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordCheckSection {
    pub modes: Vec<usize>,
    #[serde(default = "default_coord_steps")]
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormScalingSection {
    pub modes: Vec<usize>,
    pub dims: Vec<usize>,
    pub scales: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub layers: usize,
    pub width: usize,
    pub modes: usize,
    pub n: usize,
    pub batch: usize,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 4,
            modes: 4,
            n: 32,
            batch: 2,
            tolerance: 1e-5,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_coord_steps() -> usize {
    5
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: FnoConfig,
    pub parametrization: Parametrization,
    pub train: HyperParams,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub transfer: Option<TransferSection>,
    #[serde(default)]
    pub coordcheck: Option<CoordCheckSection>,
    #[serde(default)]
    pub normscaling: Option<NormScalingSection>,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; `None` falls back to the environment, then to the
    /// number of hardware threads.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

impl ExperimentConfig {
    /// Read `path`, apply `overrides` (`dotted.path=value`) and deserialize.
    pub fn load(path: &Path, overrides: &[String]) -> Result<(Self, Value), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut doc: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config = Self::from_value(doc.clone())?;
        Ok((config, doc))
    }

    pub fn from_value(doc: Value) -> Result<Self, CliError> {
        let config: Self = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                config.schema_version
            )));
        }
        config.model.validate()?;
        config.parametrization.validate()?;
        config.train.validate()?;
        if config.data.train_path.is_some() != config.data.eval_path.is_some() {
            return Err(CliError::Config(
                "data: train_path and eval_path must be given together".into(),
            ));
        }
        if config.data.train_path.is_none() {
            config.data.generate.validate()?;
        }
        if config.parallelism == Some(0) {
            return Err(CliError::Config("parallelism: must be >= 1".into()));
        }
        Ok(config)
    }

    /// SHA-256 of the canonical JSON of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Set the field at a dotted path. The value is parsed as JSON when possible
/// and taken as a string otherwise. Intermediate objects are created.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form path=value")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override path `{path}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let map = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => {
                return Err(CliError::Config(format!(
                    "override `{path}`: `{}` is not an object",
                    keys[..i].join(".")
                )))
            }
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("paths have at least one key")
}
