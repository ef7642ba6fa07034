//! Multi-head attention and the spatial/temporal variants built on it:
//! causal temporal attention, neighbourhood (GAT) scoring, top-k query
//! sampling, the efficient spectral graph attention (ESGAT) and the
//! decoder's fusion attention.
//!
//! Layout conventions: sequences are `[G, L, d]` with `G` an arbitrary
//! flattened group extent; spatio-temporal features are `[B, T, N, d]`.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::batched_matmul;
use crate::numerics::{softmax_lastdim, Binding, Mask, ParamId, ParamStore, Tensor, Var};

/// Uniform Glorot initialization for a `fan_in × fan_out` shaped tensor.
pub fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

/// Projections of one multi-head attention block. Model width is
/// `n_heads * head_dim`; all four projections are `d × d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionHeads {
    pub n_heads: usize,
    pub head_dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionHeads {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        n_heads: usize,
        head_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = n_heads * head_dim;
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), glorot(rng, &[d, d], d, d));
        Ok(AttentionHeads {
            n_heads,
            head_dim,
            wq: w("wq")?,
            wk: w("wk")?,
            wv: w("wv")?,
            wo: w("wo")?,
        })
    }

    pub fn d_model(&self) -> usize {
        self.n_heads * self.head_dim
    }
}

/// `[G, L, d] → [G, e, L, d_e]`
fn split_heads(x: &Var, e: usize) -> Result<Var> {
    let s = x.shape();
    let (g, l, d) = (s[0], s[1], s[2]);
    x.reshape(&[g, l, e, d / e])?.permute(&[0, 2, 1, 3])
}

/// `[G, e, L, d_e] → [G, L, d]`
fn merge_heads(x: &Var) -> Result<Var> {
    let s = x.shape();
    let (g, e, l, de) = (s[0], s[1], s[2], s[3]);
    x.permute(&[0, 2, 1, 3])?.reshape(&[g, l, e * de])
}

fn check_seq(x: &Var, d: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[2] != d {
        return Err(Error::Argument(format!("{what} must be [G, L, {d}], got {s:?}")));
    }
    Ok(())
}

/// Scaled dot-product attention over pre-projected, head-split operands.
/// Returns the head outputs and the attention weights `[G, e, Lq, Lk]`.
fn attend(qh: &Var, kh: &Var, vh: &Var, head_dim: usize, mask: Option<&Mask>) -> Result<(Var, Var)> {
    let scores = qh.matmul_t(kh)?.scale(1.0 / (head_dim as f64).sqrt());
    let weights = scores.softmax_lastdim(mask)?;
    let out = weights.matmul(vh)?;
    Ok((out, weights))
}

/// Multi-head attention `softmax(QWq (KWk)ᵀ / √d_e) VWv`, heads concatenated
/// and projected by `Wo`. Inputs are `[G, Lq, d]` and `[G, Lk, d]`; an
/// optional mask broadcasts over `[G, e, Lq, Lk]`.
pub fn self_attention(
    q: &Var,
    k: &Var,
    v: &Var,
    heads: &AttentionHeads,
    params: &Binding,
    mask: Option<&Mask>,
) -> Result<Var> {
    Ok(self_attention_weights(q, k, v, heads, params, mask)?.0)
}

/// [`self_attention`] that also returns the attention weights.
pub fn self_attention_weights(
    q: &Var,
    k: &Var,
    v: &Var,
    heads: &AttentionHeads,
    params: &Binding,
    mask: Option<&Mask>,
) -> Result<(Var, Var)> {
    let d = heads.d_model();
    check_seq(q, d, "queries")?;
    check_seq(k, d, "keys")?;
    check_seq(v, d, "values")?;
    if k.shape() != v.shape() || q.shape()[0] != k.shape()[0] {
        return Err(Error::shape("self_attention", q.shape(), k.shape()));
    }
    let e = heads.n_heads;
    let qh = split_heads(&q.matmul(&params[heads.wq])?, e)?;
    let kh = split_heads(&k.matmul(&params[heads.wk])?, e)?;
    let vh = split_heads(&v.matmul(&params[heads.wv])?, e)?;
    let (out, weights) = attend(&qh, &kh, &vh, heads.head_dim, mask)?;
    Ok((merge_heads(&out)?.matmul(&params[heads.wo])?, weights))
}

fn as_batched(x: &Var) -> Result<(Var, bool)> {
    match x.rank() {
        3 => {
            let s = x.shape();
            Ok((x.reshape(&[1, s[0], s[1], s[2]])?, true))
        }
        4 => Ok((x.clone(), false)),
        _ => Err(Error::Argument(format!("expected [B,] T, N, d, got {:?}", x.shape()))),
    }
}

fn unbatch(x: Var, squeeze: bool) -> Result<Var> {
    if squeeze {
        let s = x.shape().to_vec();
        x.reshape(&s[1..])
    } else {
        Ok(x)
    }
}

/// Causal self-attention along time, independently per node.
/// Accepts `[T, N, d]` or `[B, T, N, d]`.
pub fn temporal_attention(x: &Var, heads: &AttentionHeads, params: &Binding) -> Result<Var> {
    let (x, squeeze) = as_batched(x)?;
    let s = x.shape().to_vec();
    let (b, t, n, d) = (s[0], s[1], s[2], s[3]);
    let seq = x.permute(&[0, 2, 1, 3])?.reshape(&[b * n, t, d])?;
    let mask = Mask::causal(t);
    let out = self_attention(&seq, &seq, &seq, heads, params, Some(&mask))?;
    let out = out.reshape(&[b, n, t, d])?.permute(&[0, 2, 1, 3])?;
    unbatch(out, squeeze)
}

/// Per-node attention restricted to neighbour sets, on already projected
/// `[G, N, d]` queries/keys/values. Returns the head-concatenated output
/// before the output projection.
fn neighbourhood_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    neighbors: &[Vec<usize>],
    n_heads: usize,
    head_dim: usize,
) -> Tensor {
    let s = q.shape();
    let (groups, n, d) = (s[0], s[1], s[2]);
    let scale = 1.0 / (head_dim as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0; groups * n * d];
    let mut w = Vec::new();
    for g in 0..groups {
        let base = g * n * d;
        for (node, nb) in neighbors.iter().enumerate() {
            for h in 0..n_heads {
                let off = h * head_dim;
                let qrow = &qd[base + node * d + off..base + node * d + off + head_dim];
                w.clear();
                w.extend(nb.iter().map(|&m| {
                    let krow = &kd[base + m * d + off..base + m * d + off + head_dim];
                    qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale
                }));
                let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in w.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                let dst = base + node * d + off;
                for (&m, &wm) in nb.iter().zip(&w) {
                    let vrow = &vd[base + m * d + off..base + m * d + off + head_dim];
                    for (o, vv) in out[dst..dst + head_dim].iter_mut().zip(vrow) {
                        *o += wm / total * vv;
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![groups, n, d], out)
}

/// GAT scores: each node attends to its neighbour set (keys and values are
/// the neighbours). `x` is `[N, d]` or `[G, N, d]`; the result has the same
/// shape. Isolated nodes attend to themselves.
pub fn gat_score(x: &Tensor, neighbors: &[Vec<usize>], heads: &AttentionHeads, params: &Binding) -> Result<Tensor> {
    let squeeze = x.rank() == 2;
    let x3 = if squeeze {
        x.reshape(&[1, x.shape()[0], x.shape()[1]])?
    } else {
        x.clone()
    };
    if x3.rank() != 3 || x3.shape()[1] != neighbors.len() || x3.shape()[2] != heads.d_model() {
        return Err(Error::Argument(format!(
            "gat_score expects [G, {}, {}], got {:?}",
            neighbors.len(),
            heads.d_model(),
            x.shape()
        )));
    }
    let q = batched_matmul(&x3, false, params[heads.wq].value(), false)?;
    let k = batched_matmul(&x3, false, params[heads.wk].value(), false)?;
    let v = batched_matmul(&x3, false, params[heads.wv].value(), false)?;
    let m = neighbourhood_attention(&q, &k, &v, neighbors, heads.n_heads, heads.head_dim);
    let out = batched_matmul(&m, false, params[heads.wo].value(), false)?;
    if squeeze {
        out.into_reshape(x.shape())
    } else {
        Ok(out)
    }
}

/// Query budget `⌈log_base N⌉`, at least one and at most `N`.
pub fn sample_count(n: usize, base: f64) -> usize {
    if n <= 1 {
        return n;
    }
    let mut k = 0usize;
    let mut power = 1.0f64;
    while power * (1.0 + 1e-12) < n as f64 {
        power *= base;
        k += 1;
    }
    k.clamp(1, n)
}

/// Indices of the `k` largest values, largest first; ties go to the lower index.
pub fn rank_top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k.min(values.len()));
    order
}

/// Sampled query nodes per group, ascending within each group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuerySample {
    pub k: usize,
    /// `G·k` node ids.
    pub indices: Vec<usize>,
}

impl QuerySample {
    pub fn group(&self, g: usize) -> &[usize] {
        &self.indices[g * self.k..(g + 1) * self.k]
    }

    fn identity(groups: usize, n: usize) -> Self {
        QuerySample {
            k: n,
            indices: (0..groups).flat_map(|_| 0..n).collect(),
        }
    }
}

/// Project GAT scores `[G, N, d]` (or `[N, d]`) onto `P / ‖P‖` and keep the
/// `k` highest-scoring nodes per group.
pub fn sample_queries(scores: &Tensor, projector: &Tensor, k: usize) -> Result<QuerySample> {
    let norm = projector.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroProjector);
    }
    let s = scores.shape();
    let (groups, n, d) = match s.len() {
        2 => (1, s[0], s[1]),
        3 => (s[0], s[1], s[2]),
        _ => return Err(Error::Argument(format!("scores must be [G,] N, d, got {s:?}"))),
    };
    if projector.len() != d {
        return Err(Error::shape("sample_queries", s, projector.shape()));
    }
    let k = k.clamp(1, n.max(1));
    let p = projector.data();
    let mut indices = Vec::with_capacity(groups * k);
    let mut proj = vec![0.0; n];
    for g in 0..groups {
        for (node, pv) in proj.iter_mut().enumerate() {
            let row = &scores.data()[(g * n + node) * d..(g * n + node + 1) * d];
            *pv = row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / norm;
        }
        let mut top = rank_top_k(&proj, k);
        top.sort_unstable();
        indices.extend(top);
    }
    Ok(QuerySample { k, indices })
}

/// How many spatial queries ESGAT keeps per time step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySampling {
    /// `⌈log_base N⌉` queries chosen by GAT score.
    Log { base: f64 },
    /// A fixed count chosen by GAT score (capped at `N`).
    Fixed(usize),
    /// Every node is a query: plain full spatial attention.
    Full,
}

impl Default for QuerySampling {
    fn default() -> Self {
        QuerySampling::Log { base: 2.0 }
    }
}

/// Everything ESGAT needs that is shared across layers.
pub struct SpatialContext<'a> {
    pub neighbors: &'a [Vec<usize>],
    /// Positional encodings `[N, d]` added to the input.
    pub encodings: &'a [Var],
    pub sampling: QuerySampling,
}

pub struct EsgatOutput {
    pub out: Var,
    pub sample: QuerySample,
    /// For each node, the position within its group's sample whose output it takes.
    pub assignment: Vec<usize>,
    /// Attention weights `[G, e, k, N]`.
    pub weights: Tensor,
}

/// Efficient spectral graph attention on `[B, T, N, d]` (or `[T, N, d]`).
pub fn esgat(
    x: &Var,
    ctx: &SpatialContext<'_>,
    heads: &AttentionHeads,
    projector: ParamId,
    params: &Binding,
) -> Result<Var> {
    Ok(esgat_detailed(x, ctx, heads, projector, params)?.out)
}

/// [`esgat`] exposing the sample, the copy assignment and the weights.
///
/// Per time step, `x̃ = x + Σρ`; GAT scores over the spatial neighbourhoods
/// pick the query nodes; the sampled queries attend over all `N` nodes; an
/// unsampled node copies the output of the sampled query that gives it the
/// largest head-averaged attention weight (ties to the earlier query).
pub fn esgat_detailed(
    x: &Var,
    ctx: &SpatialContext<'_>,
    heads: &AttentionHeads,
    projector: ParamId,
    params: &Binding,
) -> Result<EsgatOutput> {
    let (x, squeeze) = as_batched(x)?;
    let s = x.shape().to_vec();
    let (b, t, n, d) = (s[0], s[1], s[2], s[3]);
    if d != heads.d_model() || ctx.neighbors.len() != n {
        return Err(Error::Argument(format!(
            "esgat input {s:?} inconsistent with d = {} and {} graph nodes",
            heads.d_model(),
            ctx.neighbors.len()
        )));
    }
    let mut xt = x;
    for pe in ctx.encodings {
        if pe.shape() != [n, d] {
            return Err(Error::shape("esgat encoding", pe.shape(), &[n, d]));
        }
        xt = xt.add(pe)?;
    }
    let groups = b * t;
    let xt = xt.reshape(&[groups, n, d])?;
    let e = heads.n_heads;
    let q = xt.matmul(&params[heads.wq])?;
    let k = xt.matmul(&params[heads.wk])?;
    let v = xt.matmul(&params[heads.wv])?;

    let sample = match ctx.sampling {
        QuerySampling::Full => QuerySample::identity(groups, n),
        QuerySampling::Log { .. } | QuerySampling::Fixed(_) => {
            let budget = match ctx.sampling {
                QuerySampling::Log { base } => sample_count(n, base),
                QuerySampling::Fixed(c) => c.clamp(1, n),
                QuerySampling::Full => unreachable!(),
            };
            let m = neighbourhood_attention(q.value(), k.value(), v.value(), ctx.neighbors, e, heads.head_dim);
            let m = batched_matmul(&m, false, params[heads.wo].value(), false)?;
            sample_queries(&m, params[projector].value(), budget)?
        }
    };
    let ks = sample.k;

    let qs = q.gather_rows(Rc::new(sample.indices.clone()), ks)?;
    let (out, weights) = attend(
        &split_heads(&qs, e)?,
        &split_heads(&k, e)?,
        &split_heads(&v, e)?,
        heads.head_dim,
        None,
    )?;
    let out = merge_heads(&out)?.matmul(&params[heads.wo])?;

    let assignment = copy_assignment(weights.value(), &sample, n);
    let full = out.gather_rows(Rc::new(assignment.clone()), n)?;
    let full = unbatch(full.reshape(&[b, t, n, d])?, squeeze)?;
    Ok(EsgatOutput {
        out: full,
        sample,
        assignment,
        weights: weights.value().clone(),
    })
}

/// Sampled nodes take their own output; every other node takes the output of
/// the sampled query with the largest head-averaged weight on it.
fn copy_assignment(weights: &Tensor, sample: &QuerySample, n: usize) -> Vec<usize> {
    let s = weights.shape();
    let (groups, e, k) = (s[0], s[1], s[2]);
    let w = weights.data();
    let mut assign = Vec::with_capacity(groups * n);
    let mut avg = vec![0.0; k * n];
    for g in 0..groups {
        avg.iter_mut().for_each(|a| *a = 0.0);
        for h in 0..e {
            let block = &w[(g * e + h) * k * n..(g * e + h + 1) * k * n];
            for (a, x) in avg.iter_mut().zip(block) {
                *a += x;
            }
        }
        let idx = sample.group(g);
        for j in 0..n {
            if let Ok(pos) = idx.binary_search(&j) {
                assign.push(pos);
                continue;
            }
            let mut best = 0;
            for q in 1..k {
                if avg[q * n + j] > avg[best * n + j] {
                    best = q;
                }
            }
            assign.push(best);
        }
    }
    assign
}

/// Full spatial self-attention over all nodes of each time step (no
/// positional encoding, no sampling), on `[B, T, N, d]` or `[T, N, d]`.
pub fn spatial_attention(x: &Var, heads: &AttentionHeads, params: &Binding) -> Result<Var> {
    let (x, squeeze) = as_batched(x)?;
    let s = x.shape().to_vec();
    let seq = x.reshape(&[s[0] * s[1], s[2], s[3]])?;
    let out = self_attention(&seq, &seq, &seq, heads, params, None)?;
    unbatch(out.reshape(&s)?, squeeze)
}

/// Heads of the decoder's fusion attention.
#[derive(Clone, Copy, Debug)]
pub struct FusionHeads {
    pub self_heads: AttentionHeads,
    pub cross_heads: AttentionHeads,
}

/// Per node, unmasked over the horizon:
/// `Att(y_l, y_l, y_l) + Att(y_l, y_h, y_h)`. Accepts `[T, N, d]` or `[B, T, N, d]`.
pub fn fusion_attention(y_low: &Var, y_high: &Var, heads: &FusionHeads, params: &Binding) -> Result<Var> {
    if y_low.shape() != y_high.shape() {
        return Err(Error::shape("fusion_attention", y_low.shape(), y_high.shape()));
    }
    let (yl, squeeze) = as_batched(y_low)?;
    let (yh, _) = as_batched(y_high)?;
    let s = yl.shape().to_vec();
    let (b, t, n, d) = (s[0], s[1], s[2], s[3]);
    let to_seq = |y: &Var| y.permute(&[0, 2, 1, 3])?.reshape(&[b * n, t, d]);
    let (ls, hs) = (to_seq(&yl)?, to_seq(&yh)?);
    let own = self_attention(&ls, &ls, &ls, &heads.self_heads, params, None)?;
    let cross = self_attention(&ls, &hs, &hs, &heads.cross_heads, params, None)?;
    let out = own.add(&cross)?.reshape(&[b, n, t, d])?.permute(&[0, 2, 1, 3])?;
    unbatch(out, squeeze)
}

/// Head-averaged weights for inspection, `[G, Lq, Lk]`.
pub fn mean_over_heads(weights: &Tensor) -> Tensor {
    let s = weights.shape();
    let (g, e, lq, lk) = (s[0], s[1], s[2], s[3]);
    Tensor::from_fn(&[g, lq, lk], |ix| {
        (0..e).map(|h| weights.get(&[ix[0], h, ix[1], ix[2]])).sum::<f64>() / e as f64
    })
}

#[doc(hidden)]
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    softmax_lastdim(x, None)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::graphs::Graph;
    use crate::numerics::{grad_check, ParamStore};
    use proptest::prelude::{prop_assert_eq, prop_oneof, proptest, Just};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heads(store: &mut ParamStore, e: usize, de: usize, seed: u64) -> AttentionHeads {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AttentionHeads::register(store, &format!("h{seed}"), e, de, &mut rng).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn set(store: &mut ParamStore, id: ParamId, t: Tensor) {
        store.get_mut(id).value = t;
    }

    /// Direct single-query multi-head attention over explicit key rows.
    fn oracle_row(q: &[f64], keys: &[&[f64]], h: &AttentionHeads, store: &ParamStore) -> Vec<f64> {
        let d = h.d_model();
        let proj = |x: &[f64], id: ParamId| -> Vec<f64> {
            let w = &store.get(id).value;
            (0..d).map(|j| (0..d).map(|i| x[i] * w.get(&[i, j])).sum()).collect()
        };
        let qp = proj(q, h.wq);
        let kp: Vec<Vec<f64>> = keys.iter().map(|k| proj(k, h.wk)).collect();
        let vp: Vec<Vec<f64>> = keys.iter().map(|k| proj(k, h.wv)).collect();
        let mut cat = vec![0.0; d];
        for head in 0..h.n_heads {
            let r = head * h.head_dim..(head + 1) * h.head_dim;
            let s: Vec<f64> = kp
                .iter()
                .map(|k| r.clone().map(|i| qp[i] * k[i]).sum::<f64>() / (h.head_dim as f64).sqrt())
                .collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
            for (j, v) in vp.iter().enumerate() {
                let w = (s[j] - m).exp() / z;
                for i in r.clone() {
                    cat[i] += w * v[i];
                }
            }
        }
        proj(&cat, h.wo)
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 2, 2, 1);
        let q = Var::constant(random(&[3, 2, 4], 2));
        let kv = Var::constant(random(&[3, 1, 4], 3));
        let out = self_attention(&q, &kv, &kv, &h, &store.bind(), None).unwrap();
        let b = store.bind();
        let expect = kv.matmul(&b[h.wv]).unwrap().matmul(&b[h.wo]).unwrap();
        for g in 0..3 {
            for l in 0..2 {
                for c in 0..4 {
                    assert!((out.value().get(&[g, l, c]) - expect.value().get(&[g, 0, c])).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_query_projection_averages_values() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 2, 2, 4);
        set(&mut store, h.wq, Tensor::zeros(&[4, 4]));
        set(&mut store, h.wv, Tensor::eye(4));
        set(&mut store, h.wo, Tensor::eye(4));
        let x = random(&[1, 5, 4], 5);
        let v = Var::constant(x.clone());
        let (out, w) = self_attention_weights(&v, &v, &v, &h, &store.bind(), None).unwrap();
        assert!(w.value().data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        for c in 0..4 {
            let mean = (0..5).map(|l| x.get(&[0, l, c])).sum::<f64>() / 5.0;
            assert!((out.value().get(&[0, 3, c]) - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 1, 2, 6);
        for id in [h.wq, h.wk, h.wv, h.wo] {
            set(&mut store, id, Tensor::eye(2));
        }
        let x = Var::constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let out = self_attention(&x, &x, &x, &h, &store.bind(), None).unwrap();
        // scores [[1,0],[0,1]] / √2
        let a = (1.0 / 2f64.sqrt()).exp();
        let p = a / (a + 1.0);
        let expect = [p, 1.0 - p, 1.0 - p, p];
        for (o, e) in out.value().data().iter().zip(expect) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn temporal_matches_causal_oracle() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 2, 3, 7);
        let x = random(&[3, 2, 6], 8);
        let out = temporal_attention(&Var::constant(x.clone()), &h, &store.bind()).unwrap();
        assert_eq!(out.shape(), &[3, 2, 6]);
        let row = |t: usize, n: usize| -> Vec<f64> { (0..6).map(|c| x.get(&[t, n, c])).collect() };
        for t in 0..3 {
            for n in 0..2 {
                let keys: Vec<Vec<f64>> = (0..=t).map(|s| row(s, n)).collect();
                let refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
                let expect = oracle_row(&row(t, n), &refs, &h, &store);
                for c in 0..6 {
                    assert!((out.value().get(&[t, n, c]) - expect[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn temporal_is_causal() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 2, 2, 9);
        let a = random(&[2, 6, 3, 4], 10);
        let mut b = a.clone();
        for n in 0..3 {
            for c in 0..4 {
                b.set(&[1, 4, n, c], 9.0);
                b.set(&[1, 5, n, c], -9.0);
            }
        }
        let p = store.bind();
        let ya = temporal_attention(&Var::constant(a), &h, &p).unwrap();
        let yb = temporal_attention(&Var::constant(b), &h, &p).unwrap();
        for t in 0..4 {
            for n in 0..3 {
                for c in 0..4 {
                    assert_eq!(ya.value().get(&[1, t, n, c]), yb.value().get(&[1, t, n, c]));
                }
            }
        }
        assert_ne!(ya.value().get(&[1, 4, 0, 0]), yb.value().get(&[1, 4, 0, 0]));
    }

    #[test]
    fn gat_single_neighbour_copies_it() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 2, 2, 11);
        let x = random(&[3, 4], 12);
        let nb = vec![vec![2], vec![0], vec![1]];
        let out = gat_score(&x, &nb, &h, &store.bind()).unwrap();
        let w = |id: ParamId| store.get(id).value.clone();
        let direct = x.matmul(&w(h.wv)).unwrap().matmul(&w(h.wo)).unwrap();
        for (node, n) in nb.iter().enumerate() {
            for c in 0..4 {
                assert!((out.get(&[node, c]) - direct.get(&[n[0], c])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gat_star_and_isolated_nodes() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 1, 3, 13);
        let g = Graph::from_edges(5, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)], crate::graphs::GraphKind::Spatial).unwrap();
        let nb = g.neighbors();
        assert_eq!(nb[4], vec![4]);
        let x = random(&[5, 3], 14);
        let out = gat_score(&x, &nb, &h, &store.bind()).unwrap();
        let row = |n: usize| -> Vec<f64> { (0..3).map(|c| x.get(&[n, c])).collect() };
        for node in 0..5 {
            let keys: Vec<Vec<f64>> = nb[node].iter().map(|&m| row(m)).collect();
            let refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
            let expect = oracle_row(&row(node), &refs, &h, &store);
            for c in 0..3 {
                assert!((out.get(&[node, c]) - expect[c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gat_complete_graph_is_full_attention_without_self() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 2, 2, 15);
        let n = 6;
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0))).collect();
        let g = Graph::from_edges(n, &edges, crate::graphs::GraphKind::Spatial).unwrap();
        let x = random(&[2, n, 4], 16);
        let out = gat_score(&x, &g.neighbors(), &h, &store.bind()).unwrap();
        let off_diagonal = Mask::new(vec![n, n], (0..n * n).map(|i| i / n != i % n).collect()).unwrap();
        let v = Var::constant(x);
        let full = self_attention(&v, &v, &v, &h, &store.bind(), Some(&off_diagonal)).unwrap();
        assert!(out.max_abs_diff(full.value()) < 1e-13);
    }

    #[test]
    fn sample_count_is_ceil_log() {
        assert_eq!(sample_count(1, 2.0), 1);
        assert_eq!(sample_count(2, 2.0), 1);
        assert_eq!(sample_count(3, 2.0), 2);
        assert_eq!(sample_count(20, 2.0), 5);
        assert_eq!(sample_count(1024, 2.0), 10);
        assert_eq!(sample_count(1025, 2.0), 11);
        assert_eq!(sample_count(100, 10.0), 2);
    }

    #[test]
    fn sample_queries_examples() {
        // Projection onto P/|P| with P = (3, 4): scores 0.6a + 0.8b.
        let scores = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, -1.0, -1.0]).unwrap();
        let p = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let s = sample_queries(&scores, &p, 2).unwrap();
        assert_eq!(s.indices, vec![1, 2]);
        // ties resolve to the lower index
        let flat = Tensor::zeros(&[4, 2]);
        assert_eq!(sample_queries(&flat, &p, 3).unwrap().indices, vec![0, 1, 2]);
        assert!(matches!(sample_queries(&flat, &Tensor::zeros(&[2]), 1), Err(Error::ZeroProjector)));
        assert_eq!(sample_queries(&flat, &p, 10).unwrap().k, 4);
    }

    fn esgat_setup(n: usize, seed: u64) -> (ParamStore, AttentionHeads, ParamId, Vec<Vec<usize>>) {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 2, 2, seed);
        let proj = store.add("proj", random(&[4], seed + 1)).unwrap();
        (store, h, proj, Graph::ring(n).neighbors())
    }

    #[test]
    fn esgat_full_sample_equals_spatial_attention() {
        for seed in 0..5 {
            let n = 3 + seed as usize * 3;
            let (store, h, proj, nb) = esgat_setup(n, seed);
            let x = Var::constant(random(&[2, 3, n, 4], seed + 100));
            let p = store.bind();
            let full = spatial_attention(&x, &h, &p).unwrap();
            for sampling in [QuerySampling::Full, QuerySampling::Fixed(n)] {
                let ctx = SpatialContext {
                    neighbors: &nb,
                    encodings: &[],
                    sampling,
                };
                let y = esgat(&x, &ctx, &h, proj, &p).unwrap();
                assert_eq!(y.value().data(), full.value().data());
            }
        }
    }

    #[test]
    fn esgat_single_node() {
        let (store, h, proj, nb) = esgat_setup(1, 20);
        let x = Var::constant(random(&[4, 1, 4], 21));
        let ctx = SpatialContext {
            neighbors: &nb,
            encodings: &[],
            sampling: QuerySampling::default(),
        };
        let p = store.bind();
        let y = esgat(&x, &ctx, &h, proj, &p).unwrap();
        let full = spatial_attention(&x, &h, &p).unwrap();
        assert_eq!(y.value().data(), full.value().data());
    }

    #[test]
    fn esgat_copy_assignment_brute_force() {
        let n = 6;
        let (store, h, proj, nb) = esgat_setup(n, 30);
        let x = random(&[3, n, 4], 31);
        let pe = Var::constant(random(&[n, 4], 32));
        let ctx = SpatialContext {
            neighbors: &nb,
            encodings: std::slice::from_ref(&pe),
            sampling: QuerySampling::Log { base: 2.0 },
        };
        let p = store.bind();
        let det = esgat_detailed(&Var::constant(x.clone()), &ctx, &h, proj, &p).unwrap();
        assert_eq!(det.sample.k, 3);

        let xt = x.zip_map(&Tensor::from_fn(&[3, n, 4], |ix| pe.value().get(&[ix[1], ix[2]])), |a, b| a + b).unwrap();
        let row = |t: usize, m: usize| -> Vec<f64> { (0..4).map(|c| xt.get(&[t, m, c])).collect() };
        for t in 0..3 {
            // sampled set: top-3 projected GAT scores
            let g = gat_score(&Tensor::from_fn(&[n, 4], |ix| xt.get(&[t, ix[0], ix[1]])), &nb, &h, &p).unwrap();
            let pv = store.get(proj).value.data();
            let norm = pv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let score: Vec<f64> = (0..n).map(|m| (0..4).map(|c| g.get(&[m, c]) * pv[c]).sum::<f64>() / norm).collect();
            let mut want: Vec<usize> = (0..n).collect();
            want.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).unwrap().then(a.cmp(&b)));
            let mut want = want[..3].to_vec();
            want.sort();
            assert_eq!(det.sample.group(t), want.as_slice());

            let keys: Vec<Vec<f64>> = (0..n).map(|m| row(t, m)).collect();
            let refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
            let outs: Vec<Vec<f64>> = want.iter().map(|&q| oracle_row(&row(t, q), &refs, &h, &store)).collect();
            for node in 0..n {
                let src = match want.iter().position(|&q| q == node) {
                    Some(pos) => pos,
                    None => {
                        let avg = |qi: usize| (0..2).map(|e| det.weights.get(&[t, e, qi, node])).sum::<f64>();
                        (1..3).fold(0, |best, qi| if avg(qi) > avg(best) { qi } else { best })
                    }
                };
                assert_eq!(det.assignment[t * n + node], src);
                for c in 0..4 {
                    assert!((det.out.value().get(&[t, node, c]) - outs[src][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn esgat_gradients() {
        let (mut store, h, proj, nb) = esgat_setup(5, 40);
        let x = Var::constant(random(&[2, 5, 4], 41));
        let target = Var::constant(random(&[2, 5, 4], 42));
        let report = grad_check(
            &mut store,
            |p| {
                let ctx = SpatialContext {
                    neighbors: &nb,
                    encodings: &[],
                    sampling: QuerySampling::Fixed(2),
                };
                Ok(esgat(&x, &ctx, &h, proj, p)?.sub(&target)?.mul(&target)?.sum())
            },
            1e-6,
            Some(&[h.wq, h.wk, h.wv, h.wo]),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn fusion_with_equal_channels_doubles_self_attention() {
        let mut store = ParamStore::new();
        let a = heads(&mut store, 2, 2, 50);
        let f = FusionHeads {
            self_heads: a,
            cross_heads: a,
        };
        let y = Var::constant(random(&[2, 4, 3, 4], 51));
        let p = store.bind();
        let out = fusion_attention(&y, &y, &f, &p).unwrap();
        let seq = y.permute(&[0, 2, 1, 3]).unwrap().reshape(&[6, 4, 4]).unwrap();
        let own = self_attention(&seq, &seq, &seq, &a, &p, None)
            .unwrap()
            .reshape(&[2, 3, 4, 4])
            .unwrap()
            .permute(&[0, 2, 1, 3])
            .unwrap();
        assert!(out.value().max_abs_diff(&own.value().map(|v| 2.0 * v)) < 1e-14);
        assert!(fusion_attention(&y, &Var::constant(Tensor::zeros(&[2, 4, 3, 2])), &f, &p).is_err());
    }

    #[test]
    fn fusion_sees_the_whole_horizon() {
        let mut store = ParamStore::new();
        let f = FusionHeads {
            self_heads: heads(&mut store, 1, 4, 52),
            cross_heads: heads(&mut store, 1, 4, 53),
        };
        let yl = random(&[4, 2, 4], 54);
        let yh = random(&[4, 2, 4], 55);
        let mut yh2 = yh.clone();
        yh2.set(&[3, 0, 0], 5.0);
        let p = store.bind();
        let a = fusion_attention(&Var::constant(yl.clone()), &Var::constant(yh), &f, &p).unwrap();
        let b = fusion_attention(&Var::constant(yl), &Var::constant(yh2), &f, &p).unwrap();
        assert_ne!(a.value().get(&[0, 0, 0]), b.value().get(&[0, 0, 0]));
        assert_eq!(a.value().get(&[0, 1, 0]), b.value().get(&[0, 1, 0]));
    }

    proptest! {
        #[test]
        fn sample_queries_matches_sort_oracle(
            vals in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), -2.0f64..2.0], 24),
            k in 1usize..8,
        ) {
            let scores = Tensor::new(vec![3, 8, 1], vals.clone()).unwrap();
            let s = sample_queries(&scores, &Tensor::full(&[1], 2.0), k).unwrap();
            for g in 0..3 {
                let v = &vals[g * 8..(g + 1) * 8];
                let mut order: Vec<usize> = (0..8).collect();
                order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
                let mut want = order[..k].to_vec();
                want.sort();
                prop_assert_eq!(s.group(g), want.as_slice());
            }
        }
    }
}
