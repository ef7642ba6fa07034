//! One-level discrete wavelet analysis and synthesis along the time axis,
//! with periodic boundary extension, plus the learnable lift that turns the
//! reconstructed low/high components into model features.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Binding, ParamId, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    #[default]
    Haar,
    Db2,
}

/// Orthonormal analysis/synthesis filter pair.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPair {
    pub family: WaveletFamily,
    pub analysis_low: Vec<f64>,
    pub analysis_high: Vec<f64>,
    pub synthesis_low: Vec<f64>,
    pub synthesis_high: Vec<f64>,
}

/// Quadrature mirror: `h_k = (-1)^k g_{L-1-k}`.
fn mirror(g: &[f64]) -> Vec<f64> {
    let l = g.len();
    (0..l)
        .map(|k| if k % 2 == 0 { g[l - 1 - k] } else { -g[l - 1 - k] })
        .collect()
}

impl WaveletPair {
    pub fn new(family: WaveletFamily) -> Self {
        let g = match family {
            WaveletFamily::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletFamily::Db2 => {
                let s3 = 3f64.sqrt();
                let norm = 4.0 * std::f64::consts::SQRT_2;
                vec![(1.0 + s3) / norm, (3.0 + s3) / norm, (3.0 - s3) / norm, (1.0 - s3) / norm]
            }
        };
        let h = mirror(&g);
        WaveletPair {
            family,
            synthesis_low: g.clone(),
            synthesis_high: h.clone(),
            analysis_low: g,
            analysis_high: h,
        }
    }

    pub fn haar() -> Self {
        Self::new(WaveletFamily::Haar)
    }

    pub fn db2() -> Self {
        Self::new(WaveletFamily::Db2)
    }

    pub fn filter_len(&self) -> usize {
        self.analysis_low.len()
    }

    /// Check even equal lengths and orthonormality within `1e-12`.
    pub fn validate(&self) -> Result<()> {
        let (g, h) = (&self.analysis_low, &self.analysis_high);
        if g.len() != h.len() || g.len() % 2 != 0 || g.is_empty() {
            return Err(Error::Argument("filters must share an even, nonzero length".into()));
        }
        if self.synthesis_low.len() != g.len() || self.synthesis_high.len() != g.len() {
            return Err(Error::Argument("synthesis filters must match analysis length".into()));
        }
        let gg: f64 = g.iter().map(|x| x * x).sum();
        let hh: f64 = h.iter().map(|x| x * x).sum();
        let gh: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
        if (gg - 1.0).abs() > 1e-12 || (hh - 1.0).abs() > 1e-12 || gh.abs() > 1e-12 {
            return Err(Error::Argument(format!(
                "filters are not orthonormal (|g|²={gg}, |h|²={hh}, <g,h>={gh})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Low,
    High,
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Branch::Low),
            "high" => Ok(Branch::High),
            other => Err(Error::Argument(format!("unknown wavelet branch `{other}`"))),
        }
    }
}

/// What to do with an odd number of time steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OddLength {
    #[default]
    Reject,
    /// Right-pad by repeating the last sample, truncate after synthesis.
    PadRepeat,
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Argument(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// `x_l[k] = Σ_m g[m] x[(2k+m) mod T]`, likewise for the high band.
/// Returns `(low, high)`, each with the time extent halved.
pub fn dwt_decompose(x: &Tensor, pair: &WaveletPair, axis: usize) -> Result<(Tensor, Tensor)> {
    pair.validate()?;
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    if len < pair.filter_len() {
        return Err(Error::TooShort {
            len,
            filter_len: pair.filter_len(),
        });
    }
    if len % 2 != 0 {
        return Err(Error::Argument(format!("time extent {len} must be even")));
    }
    let half = len / 2;
    let mut shape = x.shape().to_vec();
    shape[axis] = half;
    let mut low = vec![0.0; outer * half * inner];
    let mut high = vec![0.0; outer * half * inner];
    let src = x.data();
    for o in 0..outer {
        for k in 0..half {
            let dst = (o * half + k) * inner;
            for (m, (&gm, &hm)) in pair.analysis_low.iter().zip(&pair.analysis_high).enumerate() {
                let j = (2 * k + m) % len;
                let s = (o * len + j) * inner;
                for i in 0..inner {
                    low[dst + i] += gm * src[s + i];
                    high[dst + i] += hm * src[s + i];
                }
            }
        }
    }
    Ok((Tensor::new(shape.clone(), low)?, Tensor::new(shape, high)?))
}

/// Adjoint of the analysis operator for one branch; doubles the time extent.
pub fn dwt_upsample(c: &Tensor, pair: &WaveletPair, branch: Branch, axis: usize) -> Result<Tensor> {
    pair.validate()?;
    let (outer, half, inner) = split_axis(c.shape(), axis)?;
    let len = 2 * half;
    if len < pair.filter_len() {
        return Err(Error::TooShort {
            len,
            filter_len: pair.filter_len(),
        });
    }
    let filter = match branch {
        Branch::Low => &pair.synthesis_low,
        Branch::High => &pair.synthesis_high,
    };
    let mut shape = c.shape().to_vec();
    shape[axis] = len;
    let mut out = vec![0.0; outer * len * inner];
    let src = c.data();
    for o in 0..outer {
        for k in 0..half {
            let s = (o * half + k) * inner;
            for (m, &fm) in filter.iter().enumerate() {
                let j = (2 * k + m) % len;
                let dst = (o * len + j) * inner;
                for i in 0..inner {
                    out[dst + i] += fm * src[s + i];
                }
            }
        }
    }
    Tensor::new(shape, out)
}

fn pad_repeat(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    let mut shape = x.shape().to_vec();
    shape[axis] = len + 1;
    let mut out = Vec::with_capacity(outer * (len + 1) * inner);
    for o in 0..outer {
        let block = &x.data()[o * len * inner..(o + 1) * len * inner];
        out.extend_from_slice(block);
        out.extend_from_slice(&block[(len - 1) * inner..]);
    }
    Tensor::new(shape, out)
}

fn truncate(x: &Tensor, axis: usize, keep: usize) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    let mut shape = x.shape().to_vec();
    shape[axis] = keep;
    let mut out = Vec::with_capacity(outer * keep * inner);
    for o in 0..outer {
        out.extend_from_slice(&x.data()[o * len * inner..(o * len + keep) * inner]);
    }
    Tensor::new(shape, out)
}

/// Decompose and synthesize each band back to the input length, giving the
/// pre-lift low- and high-frequency reconstructions. They sum to `x`.
pub fn components(
    x: &Tensor,
    pair: &WaveletPair,
    axis: usize,
    odd: OddLength,
) -> Result<(Tensor, Tensor)> {
    let (_, len, _) = split_axis(x.shape(), axis)?;
    let padded = if len % 2 == 1 {
        match odd {
            OddLength::Reject => {
                return Err(Error::Argument(format!(
                    "time extent {len} is odd; enable padding to accept it"
                )))
            }
            OddLength::PadRepeat => Some(pad_repeat(x, axis)?),
        }
    } else {
        None
    };
    let src = padded.as_ref().unwrap_or(x);
    let (lo, hi) = dwt_decompose(src, pair, axis)?;
    let mut low = dwt_upsample(&lo, pair, Branch::Low, axis)?;
    let mut high = dwt_upsample(&hi, pair, Branch::High, axis)?;
    if padded.is_some() {
        low = truncate(&low, axis, len)?;
        high = truncate(&high, axis, len)?;
    }
    Ok((low, high))
}

/// Low-frequency reconstruction of a future window, the auxiliary
/// supervision target. Uses only the window itself.
pub fn low_target(x_future: &Tensor, pair: &WaveletPair, axis: usize, odd: OddLength) -> Result<Tensor> {
    Ok(components(x_future, pair, axis, odd)?.0)
}

/// Learnable affine lift `C → d` for each band.
#[derive(Clone, Copy, Debug)]
pub struct LiftParams {
    pub w_low: ParamId,
    pub b_low: ParamId,
    pub w_high: ParamId,
    pub b_high: ParamId,
}

/// Lifted low- and high-frequency features, `[..., T, N, d]` each.
#[derive(Clone, Debug)]
pub struct Disentangled {
    pub low: Var,
    pub high: Var,
}

/// Split `x` (`[..., T, N, C]`, time axis third from the end) into bands,
/// synthesize both back to length `T` and lift each to `d` channels.
pub fn disentangle(
    x: &Tensor,
    pair: &WaveletPair,
    odd: OddLength,
    lift: &LiftParams,
    params: &Binding,
) -> Result<Disentangled> {
    if x.rank() < 3 {
        return Err(Error::Argument(format!("expected [..., T, N, C], got {:?}", x.shape())));
    }
    let axis = x.rank() - 3;
    let (low, high) = components(x, pair, axis, odd)?;
    lift_pair(Var::constant(low), Var::constant(high), lift, params)
}

pub(crate) fn lift_pair(low: Var, high: Var, lift: &LiftParams, params: &Binding) -> Result<Disentangled> {
    Ok(Disentangled {
        low: low.matmul(&params[lift.w_low])?.add(&params[lift.b_low])?,
        high: high.matmul(&params[lift.w_high])?.add(&params[lift.b_high])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const R2: f64 = std::f64::consts::SQRT_2;

    fn seq(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn haar_constant_has_no_detail() {
        let (lo, hi) = dwt_decompose(&seq(&[1.0; 4]), &WaveletPair::haar(), 0).unwrap();
        assert!(lo.data().iter().all(|&v| (v - R2).abs() < 1e-15));
        assert!(hi.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn haar_alternating_is_pure_detail() {
        let (lo, hi) = dwt_decompose(&seq(&[1.0, -1.0, 1.0, -1.0]), &WaveletPair::haar(), 0).unwrap();
        assert!(lo.data().iter().all(|&v| v.abs() < 1e-15));
        assert!(hi.data().iter().all(|&v| (v - R2).abs() < 1e-15));
    }

    #[test]
    fn haar_matches_direct_double_loop() {
        let x = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let pair = WaveletPair::haar();
        let (lo, hi) = dwt_decompose(&seq(&x), &pair, 0).unwrap();
        // x_l[k] = Σ_j g[j-2k] x[j], over every j with a valid filter index.
        for k in 0..4 {
            let mut l = 0.0;
            let mut h = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                let m = j as isize - 2 * k as isize;
                if (0..2).contains(&m) {
                    l += pair.analysis_low[m as usize] * xj;
                    h += pair.analysis_high[m as usize] * xj;
                }
            }
            assert!((lo.data()[k] - l).abs() < 1e-14);
            assert!((hi.data()[k] - h).abs() < 1e-14);
        }
        // Pairwise sums and differences over √2.
        assert!((lo.data()[2] - 14.0 / R2).abs() < 1e-14);
        assert!((hi.data()[3] - (-4.0 / R2)).abs() < 1e-14);
    }

    #[test]
    fn haar_low_upsample_inverts_constant() {
        let c = seq(&[R2, R2]);
        let up = dwt_upsample(&c, &WaveletPair::haar(), Branch::Low, 0).unwrap();
        assert!(up.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_short_and_odd() {
        let pair = WaveletPair::db2();
        assert!(matches!(
            dwt_decompose(&seq(&[1.0, 2.0]), &pair, 0),
            Err(Error::TooShort { len: 2, filter_len: 4 })
        ));
        assert!(components(&seq(&[1.0, 2.0, 3.0]), &WaveletPair::haar(), 0, OddLength::Reject).is_err());
    }

    #[test]
    fn odd_length_padding_reconstructs() {
        let x = seq(&[2.0, 7.0, 1.0, 8.0, 2.0]);
        let (lo, hi) = components(&x, &WaveletPair::haar(), 0, OddLength::PadRepeat).unwrap();
        assert_eq!(lo.shape(), &[5]);
        for i in 0..5 {
            assert!((lo.data()[i] + hi.data()[i] - x.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn branch_parse() {
        assert_eq!("low".parse::<Branch>().unwrap(), Branch::Low);
        assert!(matches!("mid".parse::<Branch>(), Err(Error::Argument(_))));
    }

    #[test]
    fn families_are_orthonormal() {
        WaveletPair::haar().validate().unwrap();
        WaveletPair::db2().validate().unwrap();
        let mut bad = WaveletPair::haar();
        bad.analysis_low[0] = 0.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn low_target_cases() {
        let pair = WaveletPair::haar();
        let c = Tensor::full(&[4, 3, 1], 5.0);
        assert!(low_target(&c, &pair, 0, OddLength::Reject).unwrap().max_abs_diff(&c) < 1e-12);
        let alt = Tensor::from_fn(&[4, 2, 1], |i| if i[0] % 2 == 0 { 1.0 } else { -1.0 });
        let t = low_target(&alt, &pair, 0, OddLength::Reject).unwrap();
        assert!(t.data().iter().all(|v| v.abs() < 1e-15));
    }

    fn energy(t: &Tensor) -> f64 {
        t.data().iter().map(|v| v * v).sum()
    }

    proptest::proptest! {
        #[test]
        fn bands_reconstruct_and_preserve_energy(
            vals in proptest::collection::vec(-100.0f64..100.0, 24),
            db2 in proptest::bool::ANY,
        ) {
            let pair = if db2 { WaveletPair::db2() } else { WaveletPair::haar() };
            let x = Tensor::new(vec![12, 2, 1], vals).unwrap();
            let (lo, hi) = dwt_decompose(&x, &pair, 0).unwrap();
            let scale = energy(&x).max(1.0);
            proptest::prop_assert!((energy(&lo) + energy(&hi) - energy(&x)).abs() / scale < 1e-12);
            let (low, high) = components(&x, &pair, 0, OddLength::Reject).unwrap();
            let sum = low.zip_map(&high, |a, b| a + b).unwrap();
            proptest::prop_assert!(sum.max_abs_diff(&x) < 1e-10);
        }

        #[test]
        fn components_are_linear(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
            c in -3.0f64..3.0,
        ) {
            let pair = WaveletPair::db2();
            let (ta, tb) = (seq(&a), seq(&b));
            let mix = ta.zip_map(&tb, |x, y| x + c * y).unwrap();
            let (la, _) = components(&ta, &pair, 0, OddLength::Reject).unwrap();
            let (lb, _) = components(&tb, &pair, 0, OddLength::Reject).unwrap();
            let (lm, _) = components(&mix, &pair, 0, OddLength::Reject).unwrap();
            let expect = la.zip_map(&lb, |x, y| x + c * y).unwrap();
            proptest::prop_assert!(lm.max_abs_diff(&expect) < 1e-10);
        }
    }
}
