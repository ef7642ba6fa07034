//! Versioned JSON checkpoint: config echo, named parameter tensors,
//! optimizer moments, seed and normalization statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::STWaveConfig;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub lr: f64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: STWaveConfig,
    /// The full resolved run configuration, if any.
    pub config_echo: serde_json::Value,
    pub seed: u64,
    pub epoch: usize,
    pub norm: Option<NormStats>,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn capture(model: &STWaveConfig, store: &ParamStore, seed: u64, epoch: usize) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: model.clone(),
            config_echo: serde_json::Value::Null,
            seed,
            epoch,
            norm: None,
            params: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            optimizer: None,
        }
    }

    /// Copy the stored tensors into `store`; every parameter must be present
    /// with a matching shape.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Consistency(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for p in store.iter_mut() {
            let v = self
                .params
                .get(&p.name)
                .ok_or_else(|| Error::Consistency(format!("checkpoint lacks `{}`", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::shape("checkpoint restore", p.value.shape(), v.shape()));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Consistency(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::from_fn(&[2, 3], |ix| 0.1 * (ix[0] * 3 + ix[1]) as f64 - 0.2)).unwrap();
        s.add("b", Tensor::full(&[4], 1.0 / 3.0)).unwrap();
        s
    }

    #[test]
    fn roundtrip_is_byte_stable_and_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = Checkpoint::capture(&STWaveConfig::default(), &store(), 9, 4);
        ck.norm = Some(NormStats { mean: 0.1, std: 3.7 });
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());

        let mut fresh = ParamStore::new();
        fresh.add("a.w", Tensor::zeros(&[2, 3])).unwrap();
        fresh.add("b", Tensor::zeros(&[4])).unwrap();
        back.restore_into(&mut fresh).unwrap();
        for (p, q) in fresh.iter().zip(store().iter()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = Checkpoint::capture(&STWaveConfig::default(), &store(), 1, 0);
        ck.version = CHECKPOINT_VERSION + 1;
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Consistency(_))));
    }

    #[test]
    fn restore_checks_names_counts_and_shapes() {
        let ck = Checkpoint::capture(&STWaveConfig::default(), &store(), 1, 0);
        let mut fewer = ParamStore::new();
        fewer.add("a.w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(ck.restore_into(&mut fewer).is_err());
        let mut renamed = ParamStore::new();
        renamed.add("a.w", Tensor::zeros(&[2, 3])).unwrap();
        renamed.add("c", Tensor::zeros(&[4])).unwrap();
        assert!(ck.restore_into(&mut renamed).is_err());
        let mut reshaped = ParamStore::new();
        reshaped.add("a.w", Tensor::zeros(&[3, 2])).unwrap();
        reshaped.add("b", Tensor::zeros(&[4])).unwrap();
        assert!(ck.restore_into(&mut reshaped).is_err());
    }
}

