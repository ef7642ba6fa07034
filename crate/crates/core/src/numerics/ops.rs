//! Differentiable operations on [`Var`].

use std::rc::Rc;

use super::autodiff::Var;
use super::linalg::batched_matmul;
use super::tensor::{broadcast_shape, numel, Broadcast, Tensor};
use crate::error::{Error, Result};

/// Boolean mask broadcastable to the tensor it filters; `true` keeps an entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape {
                op: "mask",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Mask { shape, data })
    }

    /// Lower-triangular `len × len` mask: row `t` sees columns `≤ t`.
    pub fn causal(len: usize) -> Self {
        let mut data = vec![false; len * len];
        for t in 0..len {
            for s in 0..=t {
                data[t * len + s] = true;
            }
        }
        Mask {
            shape: vec![len, len],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

fn binary(a: &Var, b: &Var, kind: Binary) -> Result<Var> {
    let (sa, sb) = (a.shape(), b.shape());
    let op = match kind {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
    };
    let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(op, sa, sb))?;
    let n = numel(&out_shape);
    let (av, bv) = (a.value().data(), b.value().data());
    let f = |x: f64, y: f64| match kind {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
    };
    let data: Vec<f64> = if sa == sb {
        av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let ma = Broadcast::new(sa, &out_shape);
        let mb = Broadcast::new(sb, &out_shape);
        (0..n).map(|i| f(av[ma.index(i)], bv[mb.index(i)])).collect()
    };
    let value = Tensor::from_parts(out_shape.clone(), data);
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(move |g, parents, _| {
            let (pa, pb) = (&parents[0], &parents[1]);
            match kind {
                Binary::Add => vec![
                    Some(g.reduce_to(pa.shape())),
                    Some(g.reduce_to(pb.shape())),
                ],
                Binary::Sub => vec![
                    Some(g.reduce_to(pa.shape())),
                    Some(g.reduce_to(pb.shape()).map(|x| -x)),
                ],
                Binary::Mul => {
                    let ga = if pa.requires_grad() {
                        Some(scaled_by(g, pb.value()).reduce_to(pa.shape()))
                    } else {
                        None
                    };
                    let gb = if pb.requires_grad() {
                        Some(scaled_by(g, pa.value()).reduce_to(pb.shape()))
                    } else {
                        None
                    };
                    vec![ga, gb]
                }
            }
        }),
    ))
}

/// `g ⊙ broadcast(other)` in the shape of `g`.
fn scaled_by(g: &Tensor, other: &Tensor) -> Tensor {
    let m = Broadcast::new(other.shape(), g.shape());
    let od = other.data();
    let data = g.data().iter().enumerate().map(|(i, &x)| x * od[m.index(i)]).collect();
    Tensor::from_parts(g.shape().to_vec(), data)
}

fn unary(a: &Var, value: Tensor, dfdx: impl Fn(f64, f64) -> f64 + 'static) -> Var {
    Var::from_op(
        value,
        vec![a.clone()],
        Box::new(move |g, parents, out| {
            let x = parents[0].value().data();
            let y = out.data();
            let data = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, &gi)| gi * dfdx(x[i], y[i]))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        }),
    )
}

impl Var {
    pub fn add(&self, other: &Var) -> Result<Var> {
        binary(self, other, Binary::Add)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        binary(self, other, Binary::Sub)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        binary(self, other, Binary::Mul)
    }

    pub fn scale(&self, c: f64) -> Var {
        unary(self, self.value().map(|x| c * x), move |_, _| c)
    }

    pub fn relu(&self) -> Var {
        unary(self, self.value().map(|x| x.max(0.0)), |x, _| {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(&self) -> Var {
        unary(self, self.value().map(f64::exp), |_, y| y)
    }

    pub fn abs(&self) -> Var {
        unary(self, self.value().map(f64::abs), |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sum(&self) -> Var {
        let value = Tensor::scalar(self.value().sum());
        Var::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, parents, _| vec![Some(Tensor::full(parents[0].shape(), g.data()[0]))]),
        )
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().reshape(shape)?;
        Ok(Var::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, parents, _| {
                vec![Some(g.reshape(parents[0].shape()).expect("reshape back"))]
            }),
        ))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var> {
        let value = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.permute(&inverse).expect("inverse permutation"))]),
        ))
    }

    /// `self · other` over broadcast leading extents.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        matmul_impl(self, other, false)
    }

    /// `self · otherᵀ` (transpose of the trailing two axes of `other`).
    pub fn matmul_t(&self, other: &Var) -> Result<Var> {
        matmul_impl(self, other, true)
    }

    /// Softmax over the last axis. Masked-out entries are exactly zero.
    pub fn softmax_lastdim(&self, mask: Option<&Mask>) -> Result<Var> {
        let value = softmax_forward(self.value(), mask)?;
        Ok(Var::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, y| {
                let len = *y.shape().last().unwrap_or(&1);
                let mut out = vec![0.0; y.len()];
                for ((o, gr), yr) in out
                    .chunks_mut(len)
                    .zip(g.data().chunks(len))
                    .zip(y.data().chunks(len))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((oi, gi), yi) in o.iter_mut().zip(gr).zip(yr) {
                        *oi = yi * (gi - dot);
                    }
                }
                vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
            }),
        ))
    }

    /// Select rows along axis 1 of a `[G, N, d]` tensor: `idx` holds `k`
    /// row indices per group, giving `[G, k, d]`. Gradients scatter back
    /// onto the selected rows only.
    pub fn gather_rows(&self, idx: Rc<Vec<usize>>, k: usize) -> Result<Var> {
        let s = self.shape();
        if s.len() != 3 || idx.len() != s[0] * k {
            return Err(Error::Argument(format!(
                "gather_rows expects [G,N,d] and G·k indices, got {s:?} and {}",
                idx.len()
            )));
        }
        let (groups, n, d) = (s[0], s[1], s[2]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Argument(format!("row index {bad} out of range {n}")));
        }
        let src = self.value().data();
        let mut data = Vec::with_capacity(groups * k * d);
        for gi in 0..groups {
            for &r in &idx[gi * k..(gi + 1) * k] {
                let off = (gi * n + r) * d;
                data.extend_from_slice(&src[off..off + d]);
            }
        }
        let value = Tensor::from_parts(vec![groups, k, d], data);
        Ok(Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut out = vec![0.0; groups * n * d];
                let gd = g.data();
                for gi in 0..groups {
                    for (j, &r) in idx[gi * k..(gi + 1) * k].iter().enumerate() {
                        let dst = (gi * n + r) * d;
                        let srco = (gi * k + j) * d;
                        for c in 0..d {
                            out[dst + c] += gd[srco + c];
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![groups, n, d], out))]
            }),
        ))
    }

    /// Shift along `axis` by `offset ≥ 0` steps, filling the front with zeros:
    /// `out[.., t, ..] = x[.., t - offset, ..]`.
    pub fn shift(&self, axis: usize, offset: usize) -> Result<Var> {
        let value = shift_tensor(self.value(), axis, offset, false)?;
        Ok(Var::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(shift_tensor(g, axis, offset, true).expect("valid shift"))]
            }),
        ))
    }
}

fn matmul_impl(a: &Var, b: &Var, tb: bool) -> Result<Var> {
    let value = batched_matmul(a.value(), false, b.value(), tb)?;
    Ok(Var::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(move |g, parents, _| {
            let (pa, pb) = (&parents[0], &parents[1]);
            let (av, bv) = (pa.value(), pb.value());
            let ga = pa.requires_grad().then(|| {
                // dA = dC · op(B)ᵀ
                let full = batched_matmul(g, false, bv, !tb).expect("matmul backward");
                full.reduce_to(av.shape())
            });
            let gb = pb.requires_grad().then(|| {
                if bv.rank() == 2 && av.rank() > 2 {
                    // Shared weight: fold every batch into rows.
                    let k = av.shape()[av.rank() - 1];
                    let n = g.shape()[g.rank() - 1];
                    let a2 = av.reshape(&[av.len() / k, k]).expect("fold");
                    let g2 = g.reshape(&[g.len() / n, n]).expect("fold");
                    if tb {
                        batched_matmul(&g2, true, &a2, false).expect("matmul backward")
                    } else {
                        batched_matmul(&a2, true, &g2, false).expect("matmul backward")
                    }
                } else {
                    let full = if tb {
                        batched_matmul(g, true, av, false)
                    } else {
                        batched_matmul(av, true, g, false)
                    }
                    .expect("matmul backward");
                    full.reduce_to(bv.shape())
                }
            });
            vec![ga, gb]
        }),
    ))
}

pub(crate) fn softmax_forward(x: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    let len = *x.shape().last().ok_or_else(|| Error::Argument("softmax of a scalar".into()))?;
    let map = match mask {
        Some(m) => {
            if broadcast_shape(m.shape(), x.shape()).as_deref() != Some(x.shape()) {
                return Err(Error::shape("softmax mask", m.shape(), x.shape()));
            }
            Some((Broadcast::new(m.shape(), x.shape()), m.data()))
        }
        None => None,
    };
    let mut out = vec![0.0; x.len()];
    for (row, (o, xr)) in out.chunks_mut(len).zip(x.data().chunks(len)).enumerate() {
        let keep = |j: usize| match &map {
            Some((b, data)) => data[b.index(row * len + j)],
            None => true,
        };
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in xr.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateMask { row });
        }
        let mut total = 0.0;
        for (j, (oj, &v)) in o.iter_mut().zip(xr).enumerate() {
            if keep(j) {
                *oj = (v - max).exp();
                total += *oj;
            }
        }
        let inv = 1.0 / total;
        o.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

fn shift_tensor(x: &Tensor, axis: usize, offset: usize, backward: bool) -> Result<Tensor> {
    let s = x.shape();
    if axis >= s.len() {
        return Err(Error::Argument(format!("shift axis {axis} out of range for {s:?}")));
    }
    let outer: usize = s[..axis].iter().product();
    let len = s[axis];
    let inner: usize = s[axis + 1..].iter().product();
    let mut out = vec![0.0; x.len()];
    if offset < len {
        let src = x.data();
        for o in 0..outer {
            let base = o * len * inner;
            let span = (len - offset) * inner;
            let (from, to) = if backward {
                (base + offset * inner, base)
            } else {
                (base, base + offset * inner)
            };
            out[to..to + span].copy_from_slice(&src[from..from + span]);
        }
    }
    Ok(Tensor::from_parts(s.to_vec(), out))
}
