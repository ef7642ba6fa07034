use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::metrics::{ha_baseline, ForecastReport, MetricAccumulator};
use super::norm::{Normalization, ZScore};
use super::split::{gather_windows, slice_time, split_ranges, window_starts, Segment, SplitRanges};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graphs::{build_temporal_graph, Graph, TemporalGraphOptions};
use crate::model::{Checkpoint, StWave};
use crate::numerics::{backward, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied when validation MAE plateaus.
    pub lr_decay: f64,
    pub decay_patience: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub normalization: Normalization,
    /// Train/validation/test fractions, in chronological order.
    pub split: [f64; 3],
    /// Use every `window_stride`-th training window per epoch.
    pub window_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            lr_decay: 0.1,
            decay_patience: 10,
            early_stop_patience: 30,
            seed: 0,
            normalization: Normalization::Zscore,
            split: [0.6, 0.2, 0.2],
            window_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::Config("batch_size and window_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// How the temporal (DTW) graph is derived from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Peers per node; defaults to the spatial graph's rounded mean degree.
    pub temporal_k: Option<usize>,
    /// Block-average histories to at most this many points before DTW.
    pub dtw_max_len: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            temporal_k: None,
            dtw_max_len: Some(576),
        }
    }
}

/// One mini-batch: normalized inputs/targets, raw targets and validity.
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub y_raw: Tensor,
    pub mask: Tensor,
}

/// A dataset split, normalized and paired with its graphs.
pub struct Prepared {
    pub ranges: SplitRanges,
    pub norm: ZScore,
    pub t1: usize,
    pub t2: usize,
    pub spatial: Graph,
    pub temporal: Graph,
    raw: Tensor,
    normalized: Tensor,
    mask: Tensor,
}

impl Prepared {
    pub fn new(ds: &Dataset, t1: usize, t2: usize, train: &TrainConfig, graphs: &GraphConfig) -> Result<Self> {
        ds.validate()?;
        let ranges = split_ranges(ds.n_steps(), train.split, t1 + t2)?;
        let n = ds.n_nodes();
        let train_len = ranges.train.len();
        let norm = match train.normalization {
            Normalization::Zscore => ZScore::fit(
                &ds.flow.data()[..train_len * n],
                Some(&ds.mask[..train_len * n]),
            )?,
            Normalization::None => ZScore::IDENTITY,
        };
        let k = graphs
            .temporal_k
            .unwrap_or_else(|| ds.graph.mean_degree().round() as usize)
            .clamp(1, n.saturating_sub(1).max(1));
        let temporal = if n < 2 {
            Graph::empty(n, crate::graphs::GraphKind::Temporal)
        } else {
            build_temporal_graph(
                &slice_time(&ds.flow, ranges.train.clone())?,
                &TemporalGraphOptions {
                    k_sparsity: k,
                    max_len: graphs.dtw_max_len,
                },
            )?
        };
        Ok(Prepared {
            ranges,
            norm,
            t1,
            t2,
            spatial: ds.graph.clone(),
            temporal,
            normalized: norm.apply(&ds.flow),
            raw: ds.flow.clone(),
            mask: ds.mask_tensor(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.raw.shape()[1]
    }

    pub fn windows(&self, seg: Segment, stride: usize) -> Vec<usize> {
        window_starts(self.ranges.get(seg).len(), self.t1, self.t2, stride)
    }

    pub fn batch(&self, seg: Segment, starts: &[usize]) -> Batch {
        let off = self.ranges.get(seg).start;
        let fut = off + self.t1;
        Batch {
            x: gather_windows(&self.normalized, off, starts, self.t1),
            y: gather_windows(&self.normalized, fut, starts, self.t2),
            y_raw: gather_windows(&self.raw, fut, starts, self.t2),
            mask: gather_windows(&self.mask, fut, starts, self.t2),
        }
    }

    /// Raw input windows, for baselines working in flow units.
    pub fn raw_inputs(&self, seg: Segment, starts: &[usize]) -> Tensor {
        gather_windows(&self.raw, self.ranges.get(seg).start, starts, self.t1)
    }
}

fn evaluate_with(
    prep: &Prepared,
    seg: Segment,
    batch_size: usize,
    label: &str,
    hash: &str,
    mut predict: impl FnMut(&Prepared, &[usize], &Batch) -> Result<Tensor>,
) -> Result<ForecastReport> {
    let starts = prep.windows(seg, 1);
    if starts.is_empty() {
        return Err(Error::EmptySplit(seg.name()));
    }
    let mut acc = MetricAccumulator::new(prep.t2);
    for chunk in starts.chunks(batch_size.max(1)) {
        let b = prep.batch(seg, chunk);
        let pred = predict(prep, chunk, &b)?;
        acc.add(&b.y_raw, &pred, Some(&b.mask))?;
    }
    acc.finish(label, seg.name(), hash)
}

/// Forecast metrics of `model` on a split, in flow units.
pub fn evaluate(model: &StWave, prep: &Prepared, seg: Segment, batch_size: usize, hash: &str) -> Result<ForecastReport> {
    let label = model.config().ablations.label();
    evaluate_with(prep, seg, batch_size, &format!("stwave:{label}"), hash, |p, _, b| {
        let (y, _) = model.predict(&b.x)?;
        Ok(p.norm.invert(&y))
    })
}

/// Historical-average metrics on a split.
pub fn evaluate_ha(prep: &Prepared, seg: Segment, hash: &str) -> Result<ForecastReport> {
    evaluate_with(prep, seg, 256, "ha", hash, |p, starts, _| {
        ha_baseline(&p.raw_inputs(seg, starts), p.t2)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Best-validation parameters with the final optimizer state.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub test: Option<ForecastReport>,
}

fn snapshot(model: &StWave, cfg: &TrainConfig, norm: &ZScore, epoch: usize, adam: Option<&Adam>) -> Checkpoint {
    let mut ck = Checkpoint::capture(model.config(), model.store(), cfg.seed, epoch);
    ck.norm = Some(norm.stats());
    ck.optimizer = adam.map(|a| a.state(model.store()));
    ck
}

/// Mean training loss of one pass over `starts`.
fn run_epoch(model: &mut StWave, prep: &Prepared, starts: &[usize], adam: &mut Adam, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    model.set_training(true);
    for chunk in starts.chunks(batch_size) {
        let b = prep.batch(Segment::Train, chunk);
        let y_low = model.low_target(&b.y)?;
        let params = model.store().bind();
        let out = model.forward(&b.x, &params)?;
        let loss = model.loss(&out, &b.y, &y_low, Some(&b.mask))?;
        let lv = loss.value().data()[0];
        if !lv.is_finite() {
            model.set_training(false);
            return Err(Error::NonFinite("training loss".into()));
        }
        let grads = backward(&loss)?;
        drop(out);
        drop(params);
        let store = model.store_mut();
        store.zero_grads();
        store.accumulate(&grads);
        if let Err(e) = adam.step(store) {
            model.set_training(false);
            return Err(e);
        }
        total += lv * chunk.len() as f64;
        count += chunk.len();
    }
    model.set_training(false);
    Ok(total / count.max(1) as f64)
}

/// Train with seeded shuffling, plateau lr decay and early stopping on
/// validation MAE; the best-validation parameters are restored at the end
/// and evaluated on the test split when it is non-empty.
pub fn train(model: &mut StWave, prep: &Prepared, cfg: &TrainConfig, hash: &str) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), cfg.lr);
    let mut starts = prep.windows(Segment::Train, cfg.window_stride);
    if starts.is_empty() && cfg.epochs > 0 {
        return Err(Error::EmptySplit("train"));
    }
    let has_val = !prep.windows(Segment::Val, 1).is_empty();

    let mut history = Vec::new();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.store().values();
    let mut last_good = best_params.clone();
    let mut since_best = 0;
    let mut since_decay = 0;

    for epoch in 1..=cfg.epochs {
        starts.shuffle(&mut rng);
        let train_loss = match run_epoch(model, prep, &starts, &mut adam, cfg.batch_size) {
            Ok(l) => l,
            Err(Error::NonFinite(what)) => {
                log::error!("epoch {epoch}: non-finite {what}; aborting");
                model.store_mut().set_values(&last_good)?;
                let ck = snapshot(model, cfg, &prep.norm, epoch - 1, None);
                return Err(Error::Diverged {
                    epoch,
                    checkpoint: Box::new(ck),
                });
            }
            Err(e) => return Err(e),
        };
        last_good = model.store().values();
        let val_mae = if has_val {
            Some(evaluate(model, prep, Segment::Val, cfg.batch_size, hash)?.overall.mae)
        } else {
            None
        };
        let score = val_mae.unwrap_or(train_loss);
        info!(
            "epoch {epoch}: train loss {train_loss:.5}, val mae {}, lr {:.2e}",
            val_mae.map_or("-".into(), |v| format!("{v:.4}")),
            adam.lr
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            val_mae,
            lr: adam.lr,
        });
        if score < best_score {
            best_score = score;
            best_epoch = epoch;
            best_params = last_good.clone();
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_decay >= cfg.decay_patience {
                adam.lr *= cfg.lr_decay;
                since_decay = 0;
                debug!("lr decayed to {:.2e}", adam.lr);
            }
            if since_best >= cfg.early_stop_patience {
                info!("early stop after epoch {epoch} (best {best_epoch})");
                break;
            }
        }
    }
    model.store_mut().set_values(&best_params)?;
    let checkpoint = snapshot(model, cfg, &prep.norm, best_epoch, Some(&adam));
    let test = if prep.windows(Segment::Test, 1).is_empty() {
        None
    } else {
        Some(evaluate(model, prep, Segment::Test, cfg.batch_size, hash)?)
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        best_epoch,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_traffic, SynthConfig};
    use crate::model::STWaveConfig;

    fn small_data() -> Dataset {
        synth_traffic(&SynthConfig {
            n_nodes: 4,
            steps: 160,
            period: 24,
            ..Default::default()
        })
        .unwrap()
        .0
    }

    fn tiny_cfg() -> STWaveConfig {
        STWaveConfig {
            t1: 4,
            t2: 4,
            heads: 2,
            head_dim: 2,
            layers: 1,
            ..Default::default()
        }
    }

    fn short_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr: 5e-3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn later_splits_do_not_leak_into_fitting() {
        let ds = small_data();
        let mut tampered = ds.clone();
        let n = ds.n_nodes();
        let cut = split_ranges(ds.n_steps(), [0.6, 0.2, 0.2], 8).unwrap().train.end;
        for v in &mut tampered.flow.data_mut()[cut * n..] {
            *v = *v * 3.0 + 500.0;
        }
        let (tc, gc) = (TrainConfig::default(), GraphConfig::default());
        let a = Prepared::new(&ds, 4, 4, &tc, &gc).unwrap();
        let b = Prepared::new(&tampered, 4, 4, &tc, &gc).unwrap();
        assert_eq!(a.norm, b.norm);
        assert_eq!(a.temporal.adjacency(), b.temporal.adjacency());
        let starts = a.windows(Segment::Train, 1);
        let (ba, bb) = (a.batch(Segment::Train, &starts), b.batch(Segment::Train, &starts));
        assert_eq!(ba.x, bb.x);
        assert_eq!(ba.y, bb.y);
    }

    #[test]
    fn windows_stay_inside_their_segment() {
        let prep = Prepared::new(&small_data(), 4, 4, &TrainConfig::default(), &GraphConfig::default()).unwrap();
        for seg in [Segment::Train, Segment::Val, Segment::Test] {
            let len = prep.ranges.get(seg).len();
            let w = prep.windows(seg, 1);
            assert_eq!(w.len(), len - 7);
            assert!(w.iter().all(|&s| s + 8 <= len));
        }
    }

    #[test]
    fn seeded_training_is_reproducible_and_learns() {
        let ds = small_data();
        let prep = Prepared::new(&ds, 4, 4, &TrainConfig::default(), &GraphConfig::default()).unwrap();
        let run = || {
            let mut m = StWave::new(&tiny_cfg(), &prep.spatial, &prep.temporal, 11).unwrap();
            train(&mut m, &prep, &short_train(4), "h").unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 4);
        assert!(a.history[3].train_loss < a.history[0].train_loss);
        let test = a.test.unwrap();
        assert_eq!(test.per_horizon.len(), 4);
        assert!(test.overall.mae.is_finite());
    }

    #[test]
    fn restored_checkpoint_reproduces_metrics() {
        let prep = Prepared::new(&small_data(), 4, 4, &TrainConfig::default(), &GraphConfig::default()).unwrap();
        let mut m = StWave::new(&tiny_cfg(), &prep.spatial, &prep.temporal, 11).unwrap();
        let out = train(&mut m, &prep, &short_train(2), "h").unwrap();
        let mut fresh = StWave::new(&tiny_cfg(), &prep.spatial, &prep.temporal, 99).unwrap();
        out.checkpoint.restore_into(fresh.store_mut()).unwrap();
        let again = evaluate(&fresh, &prep, Segment::Test, 16, "h").unwrap();
        assert_eq!(again, out.test.unwrap());
    }

    #[test]
    fn early_stop_and_decay() {
        let prep = Prepared::new(&small_data(), 4, 4, &TrainConfig::default(), &GraphConfig::default()).unwrap();
        let mut m = StWave::new(&tiny_cfg(), &prep.spatial, &prep.temporal, 11).unwrap();
        // A vanishing learning rate cannot improve on the first epoch.
        let cfg = TrainConfig {
            lr: 1e-300,
            decay_patience: 1,
            early_stop_patience: 2,
            ..short_train(10)
        };
        let out = train(&mut m, &prep, &cfg, "h").unwrap();
        assert!(out.history.len() < 10);
        assert!(out.history.last().unwrap().lr < cfg.lr);
    }

    #[test]
    fn ha_baseline_report_is_finite() {
        let prep = Prepared::new(&small_data(), 4, 4, &TrainConfig::default(), &GraphConfig::default()).unwrap();
        let r = evaluate_ha(&prep, Segment::Test, "h").unwrap();
        assert_eq!(r.model, "ha");
        assert!(r.overall.mae > 0.0 && r.overall.rmse >= r.overall.mae);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_decay: 1.5, ..Default::default() }.validate().is_err());
    }
}
