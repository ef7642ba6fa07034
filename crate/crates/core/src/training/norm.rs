use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NormStats;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Zscore,
    None,
}

/// Global z-score fitted on valid training entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    pub const IDENTITY: ZScore = ZScore { mean: 0.0, std: 1.0 };

    /// Population mean/std of the entries of `x` where `mask` is set.
    pub fn fit(x: &[f64], mask: Option<&[bool]>) -> Result<Self> {
        let vals: Vec<f64> = match mask {
            Some(m) => x.iter().zip(m).filter(|(_, &ok)| ok).map(|(v, _)| *v).collect(),
            None => x.to_vec(),
        };
        if vals.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ConstantSeries);
        }
        Ok(ZScore { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        x.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert(&self, z: &Tensor) -> Tensor {
        z.map(|v| v * self.std + self.mean)
    }

    pub fn stats(&self) -> NormStats {
        NormStats {
            mean: self.mean,
            std: self.std,
        }
    }

    pub fn from_stats(s: &NormStats) -> Self {
        ZScore {
            mean: s.mean,
            std: s.std,
        }
    }
}
