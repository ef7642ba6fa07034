use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Metadata};
use crate::error::{Error, Result};
use crate::graphs::{spatial_graph_from_costs, Graph};
use crate::numerics::Tensor;

/// `(from, to, cost)` triples.
pub type EdgeList = Vec<(usize, usize, f64)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthGraph {
    Ring,
    /// Near-square grid; the last row may be partial.
    Grid,
}

/// Synthetic traffic: a daily sinusoid per node, transient bursts that
/// spread to graph neighbours with a one-step lag, and Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub graph: SynthGraph,
    /// Steps per day (288 at 5-minute sampling).
    pub period: usize,
    pub base: f64,
    pub amplitude: f64,
    pub noise_std: f64,
    /// Probability that a burst starts at a node on a given step.
    pub burst_rate: f64,
    pub burst_size: f64,
    /// Per-step retention of a node's own burst level.
    pub burst_decay: f64,
    /// Fraction of the neighbours' mean burst level received next step.
    pub burst_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_nodes: 20,
            steps: 4000,
            seed: 7,
            graph: SynthGraph::Ring,
            period: 288,
            base: 250.0,
            amplitude: 150.0,
            noise_std: 10.0,
            burst_rate: 0.01,
            burst_size: 80.0,
            burst_decay: 0.6,
            burst_spread: 0.35,
        }
    }
}

fn edges_for(kind: SynthGraph, n: usize) -> EdgeList {
    match kind {
        SynthGraph::Ring if n == 2 => vec![(0, 1, 1.0)],
        SynthGraph::Ring => (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect(),
        SynthGraph::Grid => {
            let cols = (n as f64).sqrt().ceil() as usize;
            let mut e = Vec::new();
            for i in 0..n {
                if (i + 1) % cols != 0 && i + 1 < n {
                    e.push((i, i + 1, 1.0));
                }
                if i + cols < n {
                    e.push((i, i + cols, 1.0));
                }
            }
            e
        }
    }
}

/// Generate a dataset and the edge list of its graph.
pub fn synth_traffic(cfg: &SynthConfig) -> Result<(Dataset, EdgeList)> {
    let n = cfg.n_nodes;
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 nodes, got {n}")));
    }
    if cfg.period == 0 || cfg.noise_std < 0.0 || !(0.0..=1.0).contains(&cfg.burst_rate) {
        return Err(Error::Argument("period > 0, noise_std ≥ 0 and burst_rate in [0, 1] required".into()));
    }
    let edges = edges_for(cfg.graph, n);
    let graph = spatial_graph_from_costs(n, &edges)?;
    let neighbors = non_self_neighbors(&graph);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let gain: Vec<f64> = (0..n).map(|_| rng.random_range(0.7..1.3)).collect();
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");

    let omega = std::f64::consts::TAU / cfg.period as f64;
    let mut burst = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut data = Vec::with_capacity(cfg.steps * n);
    for t in 0..cfg.steps {
        for i in 0..n {
            let spread = if neighbors[i].is_empty() {
                0.0
            } else {
                neighbors[i].iter().map(|&j| burst[j]).sum::<f64>() / neighbors[i].len() as f64
            };
            let mut b = cfg.burst_decay * burst[i] + cfg.burst_spread * spread;
            if cfg.burst_rate > 0.0 && rng.random::<f64>() < cfg.burst_rate {
                b += cfg.burst_size * rng.random_range(0.5..1.5);
            }
            next[i] = b;
        }
        std::mem::swap(&mut burst, &mut next);
        for i in 0..n {
            let season = gain[i] * (cfg.base + cfg.amplitude * (omega * t as f64 + phase[i]).sin());
            let eps = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data.push((season + burst[i] + eps).max(0.0));
        }
    }
    let ds = Dataset {
        flow: Tensor::new(vec![cfg.steps, n, 1], data)?,
        mask: vec![true; cfg.steps * n],
        graph,
        metadata: Metadata {
            name: format!("synthetic-{}-n{}-seed{}", graph_name(cfg.graph), n, cfg.seed),
            sample_minutes: 5,
            time_range: (0, cfg.steps),
            ingest: None,
        },
    };
    Ok((ds, edges))
}

fn graph_name(kind: SynthGraph) -> &'static str {
    match kind {
        SynthGraph::Ring => "ring",
        SynthGraph::Grid => "grid",
    }
}

fn non_self_neighbors(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.n_nodes();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i && g.weight(i, j) > 0.0).collect())
        .collect()
}
