use serde::{Deserialize, Serialize};

use crate::attention::QuerySampling;
use crate::error::{Error, Result};
use crate::wavelet::{OddLength, WaveletFamily};

/// Component switches for ablation runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Drop the auxiliary low-frequency loss term.
    pub disable_multi_supervision: bool,
    /// Feed the raw input to both channels instead of the wavelet bands.
    pub disable_disentangle: bool,
    /// Merge the decoder channels by addition instead of fusion attention.
    pub additive_fusion: bool,
    /// Remove temporal attention and the dilated convolution.
    pub disable_temporal: bool,
    /// Remove the spectral graph attention.
    pub disable_spatial: bool,
}

impl Ablations {
    /// Short label used in reports: `full`, `-MS`, `-DF`, `-F`, `-T`, `-S`
    /// or a `+`-joined combination.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, tag) in [
            (self.disable_multi_supervision, "-MS"),
            (self.disable_disentangle, "-DF"),
            (self.additive_fusion, "-F"),
            (self.disable_temporal, "-T"),
            (self.disable_spatial, "-S"),
        ] {
            if on {
                parts.push(tag);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }

    /// Parse a single-variant label as produced by [`Ablations::label`].
    pub fn from_label(label: &str) -> Result<Self> {
        let mut a = Ablations::default();
        match label {
            "full" => {}
            "-MS" => a.disable_multi_supervision = true,
            "-DF" => a.disable_disentangle = true,
            "-F" => a.additive_fusion = true,
            "-T" => a.disable_temporal = true,
            "-S" => a.disable_spatial = true,
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(a)
    }

    /// The five single-component variants.
    pub fn variants() -> [&'static str; 5] {
        ["-MS", "-DF", "-F", "-T", "-S"]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct STWaveConfig {
    /// Input window length.
    pub t1: usize,
    /// Forecast horizon.
    pub t2: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
    /// Dilated convolution kernel size.
    pub kernel: usize,
    pub dilation: usize,
    pub wavelet: WaveletFamily,
    pub odd_length: OddLength,
    pub sampling: QuerySampling,
    /// Wrap every encoder sublayer as `x + f(x)`.
    pub residuals: bool,
    /// Dropout rate on encoder sublayer outputs during training.
    pub dropout: f64,
    pub ablations: Ablations,
}

impl Default for STWaveConfig {
    fn default() -> Self {
        STWaveConfig {
            t1: 12,
            t2: 12,
            heads: 8,
            head_dim: 16,
            layers: 2,
            kernel: 2,
            dilation: 1,
            wavelet: WaveletFamily::Haar,
            odd_length: OddLength::Reject,
            sampling: QuerySampling::default(),
            residuals: true,
            dropout: 0.0,
            ablations: Ablations::default(),
        }
    }
}

impl STWaveConfig {
    /// Model width `heads × head_dim`.
    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t1 == 0 || self.t2 == 0 {
            return bad("t1 and t2 must be positive".into());
        }
        if self.odd_length == OddLength::Reject && (self.t1 % 2 == 1 || self.t2 % 2 == 1) {
            return bad(format!("t1 = {} and t2 = {} must be even", self.t1, self.t2));
        }
        if self.heads == 0 || self.head_dim == 0 {
            return bad("heads and head_dim must be positive".into());
        }
        if self.layers == 0 || self.kernel == 0 || self.dilation == 0 {
            return bad("layers, kernel and dilation must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        match self.sampling {
            QuerySampling::Log { base } if !(base > 1.0 && base.is_finite()) => {
                bad(format!("sampling base {base} must exceed 1"))
            }
            QuerySampling::Fixed(0) => bad("fixed query count must be positive".into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = STWaveConfig::default();
        c.validate().unwrap();
        assert_eq!(c.d_model(), 128);
    }

    #[test]
    fn odd_horizon_needs_padding() {
        let mut c = STWaveConfig {
            t1: 11,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.odd_length = OddLength::PadRepeat;
        c.validate().unwrap();
    }

    #[test]
    fn ablation_labels_roundtrip() {
        for v in Ablations::variants() {
            assert_eq!(Ablations::from_label(v).unwrap().label(), v);
        }
        assert_eq!(Ablations::default().label(), "full");
        assert!(Ablations::from_label("-X").is_err());
    }
}
