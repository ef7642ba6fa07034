//! Timing of full spatial attention against query-sampled ESGAT.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{esgat, glorot, AttentionHeads, QuerySampling, SpatialContext};
use crate::error::Result;
use crate::graphs::{Graph, GraphPE};
use crate::numerics::{no_grad, EigenBasis, ParamStore, Tensor, Var};

const ROUND_MS: f64 = 200.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub heads: usize,
    pub head_dim: usize,
    /// Time steps per forward pass.
    pub steps: usize,
    /// Interleaved timing rounds.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![256, 512, 1024, 2048],
            heads: 4,
            head_dim: 16,
            steps: 12,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub mode: String,
    /// Queries per time step.
    pub queries: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Lowest `d` eigenpairs of a ring's normalized Laplacian in closed form:
/// `λ_k = 1 − cos(2πk/N)` with cosine/sine modes.
pub fn ring_basis(n: usize, d: usize) -> EigenBasis {
    let d = d.min(n);
    let mut freqs = vec![(0usize, false)];
    let mut k = 1;
    while freqs.len() < d {
        freqs.push((k, false));
        if freqs.len() < d && 2 * k != n {
            freqs.push((k, true));
        }
        k += 1;
    }
    let eigenvalues = freqs.iter().map(|&(k, _)| 1.0 - (TAU * k as f64 / n as f64).cos()).collect();
    let eigenvectors = Tensor::from_fn(&[n, d], |ix| {
        let (k, sine) = freqs[ix[1]];
        let angle = TAU * (k * ix[0]) as f64 / n as f64;
        if k == 0 || 2 * k == n {
            let v = if k == 0 { 1.0 } else { angle.cos() };
            v / (n as f64).sqrt()
        } else if sine {
            angle.sin() * (2.0 / n as f64).sqrt()
        } else {
            angle.cos() * (2.0 / n as f64).sqrt()
        }
    });
    EigenBasis {
        eigenvalues,
        eigenvectors,
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

struct Case {
    n: usize,
    mode: &'static str,
    sampling: QuerySampling,
    neighbors: Vec<Vec<usize>>,
    encodings: [Var; 1],
    inputs: Vec<Var>,
}

/// Median forward time for both modes at every size. Each time step is run
/// separately so full attention never materializes more than one `N × N`
/// weight matrix per head.
///
/// Every case is warmed up once, then timed in `repeats` interleaved rounds
/// so that slow drift in machine load affects all sizes alike. Within a round
/// a cheap case is repeated until `ROUND_MS` has elapsed and contributes its
/// mean pass time.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let d = cfg.heads * cfg.head_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let heads = AttentionHeads::register(&mut store, "bench", cfg.heads, cfg.head_dim, &mut rng)?;
    let projector = store.add("bench.projector", glorot(&mut rng, &[d, 1], d, 1))?;
    let params = store.bind();

    let mut cases = Vec::new();
    for &n in &cfg.sizes {
        let neighbors = Graph::ring(n).neighbors();
        let pe = GraphPE::from_basis(ring_basis(n, d), d)?.rho_at(-1.0);
        let inputs: Vec<Var> = (0..cfg.steps)
            .map(|_| Var::constant(Tensor::from_fn(&[1, 1, n, d], |_| rng.random_range(-1.0..1.0))))
            .collect();
        for (mode, sampling) in [("full", QuerySampling::Full), ("sampled", QuerySampling::Log { base: 2.0 })] {
            cases.push(Case {
                n,
                mode,
                sampling,
                neighbors: neighbors.clone(),
                encodings: [Var::constant(pe.clone())],
                inputs: inputs.clone(),
            });
        }
    }

    let pass = |c: &Case| -> Result<f64> {
        let ctx = SpatialContext {
            neighbors: &c.neighbors,
            encodings: &c.encodings,
            sampling: c.sampling,
        };
        let start = Instant::now();
        no_grad(|| -> Result<()> {
            for x in &c.inputs {
                std::hint::black_box(esgat(x, &ctx, &heads, projector, &params)?);
            }
            Ok(())
        })?;
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };

    for c in &cases {
        pass(c)?;
    }
    let mut times = vec![Vec::with_capacity(cfg.repeats); cases.len()];
    for _ in 0..cfg.repeats.max(1) {
        for (c, t) in cases.iter().zip(&mut times) {
            let (mut total, mut count) = (0.0, 0usize);
            while count == 0 || total < ROUND_MS {
                total += pass(c)?;
                count += 1;
            }
            t.push(total / count as f64);
        }
    }

    let mut rows = Vec::with_capacity(cases.len());
    for (c, mut t) in cases.iter().zip(times) {
        let (min, max) = t.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        let queries = match c.sampling {
            QuerySampling::Full => c.n,
            _ => crate::attention::sample_count(c.n, 2.0),
        };
        let row = BenchRow {
            n: c.n,
            mode: c.mode.into(),
            queries,
            median_ms: median(&mut t),
            min_ms: min,
            max_ms: max,
        };
        log::info!("bench n={} {}: {:.2} ms", row.n, row.mode, row.median_ms);
        rows.push(row);
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,mode,queries,median_ms,min_ms,max_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4}\n",
            r.n, r.mode, r.queries, r.median_ms, r.min_ms, r.max_ms
        ));
    }
    out
}

/// Ratio of median times between consecutive sizes for one mode.
pub fn growth_factors(rows: &[BenchRow], mode: &str) -> Vec<(usize, f64)> {
    let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.mode == mode).collect();
    sel.windows(2).map(|w| (w[1].n, w[1].median_ms / w[0].median_ms)).collect()
}
