//! The forecasting network: wavelet disentangling, a stack of dual-channel
//! encoder layers, and the frequency-specific decoder.

pub mod checkpoint;
pub mod config;
pub mod conv;

use std::cell::{Cell, RefCell};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, NormStats, OptimizerState};
pub use config::{Ablations, STWaveConfig};
pub use conv::{dilated_causal_conv, ConvParams};

use crate::attention::{
    esgat, fusion_attention, glorot, temporal_attention, AttentionHeads, FusionHeads, SpatialContext,
};
use crate::error::{Error, Result};
use crate::graphs::{Graph, GraphPE};
use crate::numerics::{no_grad, Binding, ParamId, ParamStore, Tensor, Var};
use crate::wavelet::{components, lift_pair, Disentangled, LiftParams, WaveletPair};

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn register(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Linear {
            w: store.add(format!("{prefix}.w"), glorot(rng, &[fan_in, fan_out], fan_in, fan_out))?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    fn apply(&self, x: &Var, params: &Binding) -> Result<Var> {
        x.matmul(&params[self.w])?.add(&params[self.b])
    }
}

/// One encoder layer. The two channels never share parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub low_temporal: AttentionHeads,
    pub low_spatial: AttentionHeads,
    pub low_projector: ParamId,
    pub high_conv: ConvParams,
    pub high_spatial: AttentionHeads,
    pub high_projector: ParamId,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub lift: LiftParams,
    pub layers: Vec<LayerParams>,
    pub scale_spatial: ParamId,
    pub scale_temporal: ParamId,
    /// Maps the input window onto the horizon, one per channel.
    pub predictor_low: Linear,
    pub predictor_high: Linear,
    pub fusion: FusionHeads,
    pub head: Linear,
    pub head_low: Linear,
}

pub const INITIAL_PE_SCALE: f64 = -1.0;

impl ModelParams {
    pub fn new(cfg: &STWaveConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let d = cfg.d_model();
        let (e, de) = (cfg.heads, cfg.head_dim);
        let lift = LiftParams {
            w_low: store.add("lift.low.w", glorot(rng, &[1, d], 1, d))?,
            b_low: store.add("lift.low.b", Tensor::zeros(&[d]))?,
            w_high: store.add("lift.high.w", glorot(rng, &[1, d], 1, d))?,
            b_high: store.add("lift.high.b", Tensor::zeros(&[d]))?,
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("encoder.{l}");
            layers.push(LayerParams {
                low_temporal: AttentionHeads::register(&mut store, &format!("{p}.low.temporal"), e, de, rng)?,
                low_spatial: AttentionHeads::register(&mut store, &format!("{p}.low.spatial"), e, de, rng)?,
                low_projector: store.add(format!("{p}.low.projector"), glorot(rng, &[d, 1], d, 1))?,
                high_conv: ConvParams::register(&mut store, &format!("{p}.high.conv"), d, cfg.kernel, rng)?,
                high_spatial: AttentionHeads::register(&mut store, &format!("{p}.high.spatial"), e, de, rng)?,
                high_projector: store.add(format!("{p}.high.projector"), glorot(rng, &[d, 1], d, 1))?,
            });
        }
        let scale_spatial = store.add("pe.spatial.scale", Tensor::full(&[1], INITIAL_PE_SCALE))?;
        let scale_temporal = store.add("pe.temporal.scale", Tensor::full(&[1], INITIAL_PE_SCALE))?;
        let predictor_low = Linear::register(&mut store, "decoder.predictor.low", cfg.t1, cfg.t2, rng)?;
        let predictor_high = Linear::register(&mut store, "decoder.predictor.high", cfg.t1, cfg.t2, rng)?;
        let fusion = FusionHeads {
            self_heads: AttentionHeads::register(&mut store, "decoder.fusion.self", e, de, rng)?,
            cross_heads: AttentionHeads::register(&mut store, "decoder.fusion.cross", e, de, rng)?,
        };
        let head = Linear::register(&mut store, "decoder.head", d, 1, rng)?;
        let head_low = Linear::register(&mut store, "decoder.head_low", d, 1, rng)?;
        Ok(ModelParams {
            store,
            lift,
            layers,
            scale_spatial,
            scale_temporal,
            predictor_low,
            predictor_high,
            fusion,
            head,
            head_low,
        })
    }
}

/// Encoder outputs for both channels, `[B, T1, N, d]` each.
pub struct Encoded {
    pub low: Var,
    pub high: Var,
}

/// Decoder outputs, `[B, T2, N, 1]` each.
pub struct Forecast {
    pub y: Var,
    pub y_low: Var,
}

pub struct StWave {
    cfg: STWaveConfig,
    pair: WaveletPair,
    pub params: ModelParams,
    neighbors: Vec<Vec<usize>>,
    pe_spatial: GraphPE,
    pe_temporal: GraphPE,
    training: Cell<bool>,
    dropout_rng: RefCell<ChaCha8Rng>,
}

impl StWave {
    /// Build a model for the given spatial and temporal graphs. Both
    /// positional encodings have width `d`.
    pub fn new(cfg: &STWaveConfig, spatial: &Graph, temporal: &Graph, seed: u64) -> Result<Self> {
        let d = cfg.d_model();
        let pe_s = GraphPE::padded(spatial, d)?;
        let pe_t = GraphPE::padded(temporal, d)?;
        Self::from_encodings(cfg, spatial.neighbors(), pe_s, pe_t, seed)
    }

    /// Build from precomputed encodings (e.g. a cached eigenbasis).
    pub fn from_encodings(
        cfg: &STWaveConfig,
        neighbors: Vec<Vec<usize>>,
        pe_spatial: GraphPE,
        pe_temporal: GraphPE,
        seed: u64,
    ) -> Result<Self> {
        let d = cfg.d_model();
        let n = neighbors.len();
        for pe in [&pe_spatial, &pe_temporal] {
            if pe.d != d || pe.n() != n {
                return Err(Error::Consistency(format!(
                    "encoding is {}×{}, model needs {n}×{d}",
                    pe.n(),
                    pe.d
                )));
            }
        }
        let params = ModelParams::new(cfg, seed)?;
        let pe_spatial = pe_spatial.with_scale(params.scale_spatial);
        let pe_temporal = pe_temporal.with_scale(params.scale_temporal);
        Ok(StWave {
            cfg: cfg.clone(),
            pair: WaveletPair::new(cfg.wavelet),
            params,
            neighbors,
            pe_spatial,
            pe_temporal,
            training: Cell::new(false),
            dropout_rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed ^ 0xd50f)),
        })
    }

    pub fn config(&self) -> &STWaveConfig {
        &self.cfg
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn store(&self) -> &ParamStore {
        &self.params.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params.store
    }

    pub fn n_params(&self) -> usize {
        self.params.store.numel()
    }

    /// Dropout is active only in training mode.
    pub fn set_training(&self, on: bool) {
        self.training.set(on);
    }

    /// Lifted low/high features of `x` (`[B, T1, N, 1]`).
    pub fn disentangle(&self, x: &Tensor, params: &Binding) -> Result<Disentangled> {
        let (low, high) = if self.cfg.ablations.disable_disentangle {
            (x.clone(), x.clone())
        } else {
            components(x, &self.pair, x.rank() - 3, self.cfg.odd_length)?
        };
        lift_pair(Var::constant(low), Var::constant(high), &self.params.lift, params)
    }

    fn dropout(&self, y: Var) -> Result<Var> {
        let p = self.cfg.dropout;
        if p == 0.0 || !self.training.get() {
            return Ok(y);
        }
        let mut rng = self.dropout_rng.borrow_mut();
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(y.shape(), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
        y.mul(&Var::constant(mask))
    }

    fn sublayer(&self, x: &Var, f: impl FnOnce(&Var) -> Result<Var>) -> Result<Var> {
        let y = self.dropout(f(x)?)?;
        if self.cfg.residuals {
            x.add(&y)
        } else {
            Ok(y)
        }
    }

    pub fn encode(&self, input: &Disentangled, params: &Binding) -> Result<Encoded> {
        let ab = &self.cfg.ablations;
        let encodings = [self.pe_spatial.rho(params)?, self.pe_temporal.rho(params)?];
        let ctx = SpatialContext {
            neighbors: &self.neighbors,
            encodings: &encodings,
            sampling: self.cfg.sampling,
        };
        let (mut low, mut high) = (input.low.clone(), input.high.clone());
        for layer in &self.params.layers {
            if !ab.disable_temporal {
                low = self.sublayer(&low, |x| temporal_attention(x, &layer.low_temporal, params))?;
                high = self.sublayer(&high, |x| {
                    dilated_causal_conv(x, &layer.high_conv, self.cfg.dilation, params)
                })?;
            }
            if !ab.disable_spatial {
                low = self.sublayer(&low, |x| esgat(x, &ctx, &layer.low_spatial, layer.low_projector, params))?;
                high = self.sublayer(&high, |x| {
                    esgat(x, &ctx, &layer.high_spatial, layer.high_projector, params)
                })?;
            }
        }
        Ok(Encoded { low, high })
    }

    /// Dense map over the time axis of `[B, T1, N, d]`, giving `[B, T2, N, d]`.
    fn predict_horizon(z: &Var, lin: &Linear, params: &Binding) -> Result<Var> {
        let over_time = z.permute(&[0, 2, 3, 1])?;
        lin.apply(&over_time, params)?.permute(&[0, 3, 1, 2])
    }

    pub fn decode(&self, z: &Encoded, params: &Binding) -> Result<Forecast> {
        let p = &self.params;
        let y_l = Self::predict_horizon(&z.low, &p.predictor_low, params)?;
        let y_h = Self::predict_horizon(&z.high, &p.predictor_high, params)?;
        let fused = if self.cfg.ablations.additive_fusion {
            y_l.add(&y_h)?
        } else {
            fusion_attention(&y_l, &y_h, &p.fusion, params)?
        };
        Ok(Forecast {
            y: p.head.apply(&fused, params)?,
            y_low: p.head_low.apply(&y_l, params)?,
        })
    }

    /// `x` is `[B, T1, N, 1]` or `[T1, N, 1]`; outputs keep the same rank.
    pub fn forward(&self, x: &Tensor, params: &Binding) -> Result<Forecast> {
        let squeeze = x.rank() == 3;
        let x4 = if squeeze {
            x.reshape(&[1, x.shape()[0], x.shape()[1], x.shape()[2]])?
        } else {
            x.clone()
        };
        let s = x4.shape();
        if s.len() != 4 || s[1] != self.cfg.t1 || s[2] != self.n_nodes() || s[3] != 1 {
            return Err(Error::Argument(format!(
                "input must be [B, {}, {}, 1], got {:?}",
                self.cfg.t1,
                self.n_nodes(),
                x.shape()
            )));
        }
        let z = self.encode(&self.disentangle(&x4, params)?, params)?;
        let out = self.decode(&z, params)?;
        if squeeze {
            let (t2, n) = (self.cfg.t2, self.n_nodes());
            return Ok(Forecast {
                y: out.y.reshape(&[t2, n, 1])?,
                y_low: out.y_low.reshape(&[t2, n, 1])?,
            });
        }
        Ok(out)
    }

    /// Evaluation-mode forward without a gradient tape.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let was = self.training.replace(false);
        let r = no_grad(|| {
            let out = self.forward(x, &self.params.store.bind())?;
            Ok((out.y.value().clone(), out.y_low.value().clone()))
        });
        self.training.set(was);
        r
    }

    /// Low-frequency supervision target of future windows `[B, T2, N, 1]`.
    pub fn low_target(&self, y: &Tensor) -> Result<Tensor> {
        crate::wavelet::low_target(y, &self.pair, y.rank() - 3, self.cfg.odd_length)
    }

    pub fn loss(&self, out: &Forecast, y: &Tensor, y_low: &Tensor, mask: Option<&Tensor>) -> Result<Var> {
        forecast_loss(
            &out.y,
            &out.y_low,
            y,
            y_low,
            mask,
            !self.cfg.ablations.disable_multi_supervision,
        )
    }
}

/// Masked mean absolute error; `mask` holds 1 for valid entries, 0 otherwise.
fn masked_l1(pred: &Var, target: &Tensor, mask: Option<&Tensor>) -> Result<Var> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss", pred.shape(), target.shape()));
    }
    let diff = pred.sub(&Var::constant(target.clone()))?.abs();
    match mask {
        None => Ok(diff.mean()),
        Some(m) => {
            if m.shape() != target.shape() {
                return Err(Error::shape("loss mask", m.shape(), target.shape()));
            }
            let count = m.sum().max(1.0);
            Ok(diff.mul(&Var::constant(m.clone()))?.sum().scale(1.0 / count))
        }
    }
}

/// `mean|y − ŷ| + mean|y_l − ŷ_l|`, the second term only with multi-supervision.
pub fn forecast_loss(
    y_hat: &Var,
    y_low_hat: &Var,
    y: &Tensor,
    y_low: &Tensor,
    mask: Option<&Tensor>,
    multi_supervision: bool,
) -> Result<Var> {
    let main = masked_l1(y_hat, y, mask)?;
    if !multi_supervision {
        return Ok(main);
    }
    main.add(&masked_l1(y_low_hat, y_low, mask)?)
}
