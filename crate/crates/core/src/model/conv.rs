use rand::Rng;

use crate::attention::glorot;
use crate::error::{Error, Result};
use crate::numerics::{Binding, ParamId, ParamStore, Tensor, Var};

/// Kernel taps `Θ_0..Θ_{J-1}` (each `d × d`) and bias `b` (`d`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub taps: Vec<ParamId>,
    pub bias: ParamId,
}

impl ConvParams {
    pub fn register(store: &mut ParamStore, prefix: &str, d: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        let taps = (0..kernel)
            .map(|j| store.add(format!("{prefix}.tap{j}"), glorot(rng, &[d, d], d * kernel, d)))
            .collect::<Result<_>>()?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[d]))?;
        Ok(ConvParams { taps, bias })
    }
}

/// `ReLU(Σ_j x(t − c·j) Θ_j + b)` with zeros before the first step, so the
/// output keeps the input length. The time axis is third from the end.
pub fn dilated_causal_conv(x: &Var, conv: &ConvParams, dilation: usize, params: &Binding) -> Result<Var> {
    if x.rank() < 3 {
        return Err(Error::Argument(format!("expected [..., T, N, d], got {:?}", x.shape())));
    }
    let axis = x.rank() - 3;
    let mut acc: Option<Var> = None;
    for (j, &tap) in conv.taps.iter().enumerate() {
        let shifted = if j == 0 { x.clone() } else { x.shift(axis, dilation * j)? };
        let term = shifted.matmul(&params[tap])?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::Argument("convolution needs at least one tap".into()))?;
    Ok(acc.add(&params[conv.bias])?.relu())
}
