use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Targets with `|x| ≤ MAPE_FLOOR` are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean absolute percentage error as a fraction.
    pub mape: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub model: String,
    pub split: String,
    pub n_samples: usize,
    pub config_hash: String,
    pub per_horizon: Vec<HorizonMetrics>,
    pub overall: Metrics,
}

#[derive(Clone, Debug, Default)]
struct Sums {
    abs: f64,
    sq: f64,
    n: usize,
    pct: f64,
    n_pct: usize,
}

impl Sums {
    fn add(&mut self, x: f64, y: f64) {
        let e = (x - y).abs();
        self.abs += e;
        self.sq += e * e;
        self.n += 1;
        if x.abs() > MAPE_FLOOR {
            self.pct += e / x.abs();
            self.n_pct += 1;
        }
    }

    fn merge(&mut self, o: &Sums) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.n += o.n;
        self.pct += o.pct;
        self.n_pct += o.n_pct;
    }

    fn finish(&self) -> Metrics {
        let n = self.n.max(1) as f64;
        Metrics {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: if self.n_pct == 0 { 0.0 } else { self.pct / self.n_pct as f64 },
        }
    }
}

/// Streaming per-horizon metric accumulation in a fixed order.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    horizons: Vec<Sums>,
    samples: usize,
}

impl MetricAccumulator {
    pub fn new(t2: usize) -> Self {
        MetricAccumulator {
            horizons: vec![Sums::default(); t2],
            samples: 0,
        }
    }

    /// Add a batch: `truth` and `pred` are `[B, T2, ...]`; `mask` entries of
    /// 0 are skipped.
    pub fn add(&mut self, truth: &Tensor, pred: &Tensor, mask: Option<&Tensor>) -> Result<()> {
        if truth.shape() != pred.shape() || truth.shape().len() < 2 || truth.shape()[1] != self.horizons.len() {
            return Err(Error::shape("metrics", truth.shape(), pred.shape()));
        }
        if let Some(m) = mask {
            if m.shape() != truth.shape() {
                return Err(Error::shape("metrics mask", m.shape(), truth.shape()));
            }
        }
        let s = truth.shape();
        let inner: usize = s[2..].iter().product();
        for b in 0..s[0] {
            for (h, sums) in self.horizons.iter_mut().enumerate() {
                let off = (b * s[1] + h) * inner;
                for i in off..off + inner {
                    if mask.is_some_and(|m| m.data()[i] == 0.0) {
                        continue;
                    }
                    sums.add(truth.data()[i], pred.data()[i]);
                }
            }
        }
        self.samples += s[0];
        Ok(())
    }

    pub fn finish(&self, model: &str, split: &str, config_hash: &str) -> Result<ForecastReport> {
        if self.samples == 0 {
            return Err(Error::EmptySplit("evaluation"));
        }
        let mut all = Sums::default();
        for h in &self.horizons {
            all.merge(h);
        }
        Ok(ForecastReport {
            model: model.into(),
            split: split.into(),
            n_samples: self.samples,
            config_hash: config_hash.into(),
            per_horizon: self
                .horizons
                .iter()
                .enumerate()
                .map(|(i, h)| HorizonMetrics {
                    horizon: i + 1,
                    metrics: h.finish(),
                })
                .collect(),
            overall: all.finish(),
        })
    }
}

impl ForecastReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,mae,rmse,mape\n");
        for h in &self.per_horizon {
            let m = &h.metrics;
            let _ = writeln!(out, "{},{},{},{}", h.horizon, m.mae, m.rmse, m.mape);
        }
        let m = &self.overall;
        let _ = writeln!(out, "all,{},{},{}", m.mae, m.rmse, m.mape);
        out
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.json")), &serde_json::to_vec_pretty(self)?)?;
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())
    }
}

/// Historical average: every future step equals the mean of the input
/// window per node. `history` is `[T1, N, C]` or `[B, T1, N, C]`.
pub fn ha_baseline(history: &Tensor, t2: usize) -> Result<Tensor> {
    let batched = history.rank() == 4;
    let h = if batched {
        history.clone()
    } else if history.rank() == 3 {
        let s = history.shape();
        history.reshape(&[1, s[0], s[1], s[2]])?
    } else {
        return Err(Error::Argument(format!("history must be [B,] T, N, C, got {:?}", history.shape())));
    };
    let s = h.shape().to_vec();
    let (b, t1, inner) = (s[0], s[1], s[2] * s[3]);
    let mut out = Vec::with_capacity(b * t2 * inner);
    for bi in 0..b {
        let mut mean = vec![0.0; inner];
        for t in 0..t1 {
            let row = &h.data()[(bi * t1 + t) * inner..(bi * t1 + t + 1) * inner];
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t1 as f64);
        for _ in 0..t2 {
            out.extend_from_slice(&mean);
        }
    }
    let shape = if batched {
        vec![b, t2, s[2], s[3]]
    } else {
        vec![t2, s[2], s[3]]
    };
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(truth: &[f64], pred: &[f64]) -> ForecastReport {
        let t = Tensor::new(vec![1, truth.len()], truth.to_vec()).unwrap();
        let p = Tensor::new(vec![1, pred.len()], pred.to_vec()).unwrap();
        let mut acc = MetricAccumulator::new(truth.len());
        acc.add(&t, &p, None).unwrap();
        acc.finish("m", "test", "").unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let r = report(&[3.0, 4.0], &[3.0, 4.0]);
        assert_eq!(r.overall, Metrics { mae: 0.0, rmse: 0.0, mape: 0.0 });
    }

    #[test]
    fn hand_computed_pair() {
        let r = report(&[1.0, 2.0], &[1.0, 4.0]);
        assert_eq!(r.overall.mae, 1.0);
        assert!((r.overall.rmse - 2f64.sqrt()).abs() < 1e-15);
        // |x| = 1 is excluded, leaving 2/2.
        assert_eq!(r.overall.mape, 1.0);
    }

    #[test]
    fn ha_means() {
        let h = Tensor::from_fn(&[12, 2, 1], |ix| ix[0] as f64);
        let p = ha_baseline(&h, 3).unwrap();
        assert_eq!(p.shape(), &[3, 2, 1]);
        assert!(p.data().iter().all(|&v| v == 5.5));
        let c = ha_baseline(&Tensor::full(&[2, 4, 3, 1], 7.0), 2).unwrap();
        assert!(c.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn csv_layout() {
        let csv = report(&[1.0, 2.0], &[1.0, 4.0]).to_csv();
        assert!(csv.starts_with("horizon,mae,rmse,mape\n1,0,0,0\n2,2,2,1\n"));
    }

    fn oracle(truth: &[f64], pred: &[f64], mask: &[f64]) -> Metrics {
        let kept: Vec<(f64, f64)> = truth
            .iter()
            .zip(pred)
            .zip(mask)
            .filter(|(_, &m)| m != 0.0)
            .map(|((&x, &y), _)| (x, y))
            .collect();
        let n = kept.len().max(1) as f64;
        let mae = kept.iter().map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        let rmse = (kept.iter().map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt();
        let pct: Vec<f64> = kept.iter().filter(|(x, _)| x.abs() > 1.0).map(|(x, y)| (x - y).abs() / x.abs()).collect();
        let mape = if pct.is_empty() { 0.0 } else { pct.iter().sum::<f64>() / pct.len() as f64 };
        Metrics { mae, rmse, mape }
    }

    fn close(a: &Metrics, b: &Metrics) -> bool {
        (a.mae - b.mae).abs() < 1e-9 && (a.rmse - b.rmse).abs() < 1e-9 && (a.mape - b.mape).abs() < 1e-9
    }

    #[test]
    fn shape_mismatch_and_empty() {
        let mut acc = MetricAccumulator::new(2);
        assert!(acc.add(&Tensor::zeros(&[1, 2, 3]), &Tensor::zeros(&[1, 2, 2]), None).is_err());
        assert!(acc.add(&Tensor::zeros(&[1, 3, 2]), &Tensor::zeros(&[1, 3, 2]), None).is_err());
        assert!(acc.finish("m", "test", "").is_err());
    }

    proptest! {
        #[test]
        fn matches_elementwise_oracle_and_rmse_dominates(
            vals in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, 0u8..4), 2 * 3 * 4),
        ) {
            let shape = vec![2, 3, 4];
            let truth: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let pred: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let mask: Vec<f64> = vals.iter().map(|v| if v.2 == 0 { 0.0 } else { 1.0 }).collect();
            let mut acc = MetricAccumulator::new(3);
            acc.add(
                &Tensor::new(shape.clone(), truth.clone()).unwrap(),
                &Tensor::new(shape.clone(), pred.clone()).unwrap(),
                Some(&Tensor::new(shape, mask.clone()).unwrap()),
            ).unwrap();
            let r = acc.finish("m", "test", "").unwrap();
            prop_assert!(close(&r.overall, &oracle(&truth, &pred, &mask)));
            prop_assert!(r.overall.rmse + 1e-12 >= r.overall.mae);
            for h in &r.per_horizon {
                prop_assert!(h.metrics.rmse + 1e-12 >= h.metrics.mae);
            }
        }

        #[test]
        fn invariant_under_node_permutation(
            vals in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3 * 2 * 5),
            perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let shape = [3, 2, 5];
            let truth = Tensor::from_fn(&shape, |ix| vals[(ix[0] * 2 + ix[1]) * 5 + ix[2]].0);
            let pred = Tensor::from_fn(&shape, |ix| vals[(ix[0] * 2 + ix[1]) * 5 + ix[2]].1);
            let permute = |t: &Tensor| Tensor::from_fn(&shape, |ix| t.get(&[ix[0], ix[1], perm[ix[2]]]));
            let run = |x: &Tensor, y: &Tensor| {
                let mut acc = MetricAccumulator::new(2);
                acc.add(x, y, None).unwrap();
                acc.finish("m", "test", "").unwrap()
            };
            let a = run(&truth, &pred);
            let b = run(&permute(&truth), &permute(&pred));
            prop_assert!(close(&a.overall, &b.overall));
            for (x, y) in a.per_horizon.iter().zip(&b.per_horizon) {
                prop_assert!(close(&x.metrics, &y.metrics));
            }
        }

        #[test]
        fn ha_matches_window_loop(
            vals in prop::collection::vec(-100.0f64..100.0, 2 * 6 * 3),
            t2 in 1usize..5,
        ) {
            let h = Tensor::new(vec![2, 6, 3, 1], vals.clone()).unwrap();
            let p = ha_baseline(&h, t2).unwrap();
            prop_assert_eq!(p.shape(), &[2, t2, 3, 1]);
            for b in 0..2 {
                for n in 0..3 {
                    let mut sum = 0.0;
                    for t in 0..6 {
                        sum += vals[(b * 6 + t) * 3 + n];
                    }
                    for s in 0..t2 {
                        prop_assert!((p.get(&[b, s, n, 0]) - sum / 6.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
