//! Run configuration: file loading, dotted-key overrides and hash stamping.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::STWaveConfig;
use crate::training::{GraphConfig, TrainConfig};

/// Where the flow data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Generated on the fly.
    Synthetic(SynthConfig),
    /// A directory with `flow.bin` or `flow.csv`, optional `edges.csv` and
    /// optional `manifest.json`.
    Dir { path: PathBuf },
    /// Explicit flow and edge-list files.
    Files { flow: PathBuf, edges: Option<PathBuf> },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: STWaveConfig,
    pub train: TrainConfig,
    pub graphs: GraphConfig,
    pub out_dir: PathBuf,
    /// Seeds parameter initialization and window shuffling.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::default(),
            model: STWaveConfig::default(),
            train: TrainConfig::default(),
            graphs: GraphConfig::default(),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Load a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        Ok(cfg)
    }

    /// Apply `key=value` overrides addressed by dotted path, e.g.
    /// `model.layers=1` or `train.lr=0.01`. Values are read as TOML
    /// literals, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            set_path(&mut tree, key.trim(), parse_literal(raw.trim())?)?;
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    /// Copy the master seed into the places that consume it and validate.
    pub fn resolved(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            if s.n_nodes < 2 {
                return Err(Error::Config("synthetic dataset needs at least 2 nodes".into()));
            }
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// SHA-256 of the canonical JSON form, hex-encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn parse_literal(raw: &str) -> Result<Value> {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => serde_json::to_value(w.v).map_err(Error::from),
        Err(_) => Ok(Value::String(raw.to_string())),
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    }
    Err(Error::Config("empty override key".into()))
}
