//! Dynamic time warping and the node-similarity graph built from it.

use log::warn;

use super::{Graph, GraphKind};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Classic DTW with absolute-difference local cost and the three unit steps
/// (insertion, deletion, match). Returns the terminal cumulative cost.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("dtw requires non-empty series".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &ai in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let cost = (ai - b[j - 1]).abs();
            cur[j] = cost + prev[j - 1].min(prev[j]).min(cur[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Clone, Debug)]
pub struct TemporalGraphOptions {
    /// Peers kept per node before symmetrization.
    pub k_sparsity: usize,
    /// Block-average each history so DTW runs on at most this many points.
    pub max_len: Option<usize>,
}

fn standardize(series: &mut [f64]) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in series.iter_mut() {
        *x -= mean;
        if std > 1e-12 {
            *x /= std;
        }
    }
}

fn block_average(series: &[f64], max_len: usize) -> Vec<f64> {
    let factor = series.len().div_ceil(max_len.max(1));
    if factor <= 1 {
        return series.to_vec();
    }
    series
        .chunks(factor)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Pairwise DTW over per-node standardized histories (`T × N × 1`).
///
/// Each node keeps its `k_sparsity` nearest peers (ties to the lower id),
/// weights are `exp(-dist / σ)` with σ the standard deviation of the kept
/// distances, and the result is symmetrized by taking the maximum. When
/// every kept distance is identical the graph falls back to unit weights
/// and is flagged `degenerate`.
pub fn build_temporal_graph(history: &Tensor, opts: &TemporalGraphOptions) -> Result<Graph> {
    let s = history.shape();
    if s.len() != 3 || s[2] != 1 {
        return Err(Error::Argument(format!("history must be T×N×1, got {s:?}")));
    }
    let (t, n) = (s[0], s[1]);
    if t < 2 {
        return Err(Error::Argument("temporal graph needs at least 2 time steps".into()));
    }
    let k = opts.k_sparsity;
    if k == 0 || k >= n {
        return Err(Error::Argument(format!("k_sparsity {k} must lie in [1, {n})")));
    }
    let series: Vec<Vec<f64>> = (0..n)
        .map(|node| {
            let mut v: Vec<f64> = (0..t).map(|ti| history.data()[ti * n + node]).collect();
            standardize(&mut v);
            match opts.max_len {
                Some(len) => block_average(&v, len),
                None => v,
            }
        })
        .collect();

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dtw_distance(&series[i], &series[j])?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut kept: Vec<(usize, usize, f64)> = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut peers: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        peers.sort_by(|&a, &b| dist[i * n + a].total_cmp(&dist[i * n + b]).then(a.cmp(&b)));
        kept.extend(peers.into_iter().take(k).map(|j| (i, j, dist[i * n + j])));
    }
    let mean = kept.iter().map(|e| e.2).sum::<f64>() / kept.len() as f64;
    let sigma = (kept.iter().map(|e| (e.2 - mean).powi(2)).sum::<f64>() / kept.len() as f64).sqrt();
    let degenerate = sigma <= 1e-12;
    if degenerate {
        warn!("temporal graph: all kept DTW distances are equal; using uniform weights");
    }

    let mut adj = Tensor::zeros(&[n, n]);
    for (i, j, d) in kept {
        let w = if degenerate { 1.0 } else { (-d / sigma).exp() };
        let w = w.max(adj.get(&[i, j]));
        adj.set(&[i, j], w);
        adj.set(&[j, i], w);
    }
    let mut g = Graph::new(adj, GraphKind::Temporal)?;
    g.degenerate = degenerate;
    Ok(g)
}
