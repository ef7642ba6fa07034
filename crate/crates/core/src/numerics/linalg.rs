//! Matrix products. Large products go through `matrixmultiply`; tiny ones
//! (attention over a dozen time steps) use a direct loop, which avoids the
//! packing overhead.

use super::tensor::{broadcast_shape, numel, Tensor};
use crate::error::{Error, Result};

const SMALL_GEMM: usize = 16 * 16 * 16;

/// `c (+)= op(a) · op(b)` for a single matrix, strides in elements.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    if !accumulate {
        c[..m * n].iter_mut().for_each(|x| *x = 0.0);
    }
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    if m * n * k <= SMALL_GEMM {
        small_gemm(m, k, n, a, rsa, csa, b, rsb, csb, c);
        return;
    }
    // SAFETY: every index touched lies within the slices: the caller passes
    // strides consistent with m×k, k×n and m×n row-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += op(a) · op(b)` by direct loops, picking the loop order that keeps
/// the innermost reads contiguous.
#[allow(clippy::too_many_arguments)]
fn small_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    if csb == 1 {
        for (i, crow) in c.chunks_exact_mut(n).take(m).enumerate() {
            for p in 0..k {
                let aip = a[i * rsa + p * csa];
                let brow = &b[p * rsb..p * rsb + n];
                for (cj, bj) in crow.iter_mut().zip(brow) {
                    *cj += aip * bj;
                }
            }
        }
    } else if csa == 1 && rsb == 1 {
        for (i, crow) in c.chunks_exact_mut(n).take(m).enumerate() {
            let arow = &a[i * rsa..i * rsa + k];
            for (j, cj) in crow.iter_mut().enumerate() {
                let bcol = &b[j * csb..j * csb + k];
                let mut acc = 0.0;
                for (x, y) in arow.iter().zip(bcol) {
                    acc += x * y;
                }
                *cj += acc;
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                }
                c[i * n + j] += acc;
            }
        }
    }
}

/// Logical (rows, cols) of a possibly transposed trailing matrix.
fn mat_dims(t: &Tensor, trans: bool) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(Error::Argument(format!("matmul operand must have rank ≥ 2, got {s:?}")));
    }
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    Ok(if trans { (c, r) } else { (r, c) })
}

/// Batched product `op(a) · op(b)` over broadcast leading extents.
pub fn batched_matmul(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let (m, ka) = mat_dims(a, ta)?;
    let (kb, n) = mat_dims(b, tb)?;
    if ka != kb {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let k = ka;
    let a_batch = &a.shape()[..a.rank() - 2];
    let b_batch = &b.shape()[..b.rank() - 2];
    let batch = broadcast_shape(a_batch, b_batch)
        .ok_or_else(|| Error::shape("matmul", a.shape(), b.shape()))?;
    let mut out_shape = batch.clone();
    out_shape.push(m);
    out_shape.push(n);
    if out_shape.len() > super::tensor::MAX_RANK {
        return Err(Error::Argument("matmul result rank exceeds maximum".into()));
    }

    let (a_rows, a_cols) = (a.shape()[a.rank() - 2], a.shape()[a.rank() - 1]);
    let (rsa, csa) = if ta { (1, a_cols) } else { (a_cols, 1) };
    let (b_rows, b_cols) = (b.shape()[b.rank() - 2], b.shape()[b.rank() - 1]);
    let (rsb, csb) = if tb { (1, b_cols) } else { (b_cols, 1) };

    let mut out = vec![0.0; numel(&out_shape)];

    // Shared right operand, untransposed left: fold the batch into rows.
    if b_batch.is_empty() && !ta && a_batch == batch.as_slice() {
        let rows = numel(&batch) * m;
        gemm(rows, k, n, a.data(), rsa, csa, b.data(), rsb, csb, &mut out, true);
        return Ok(Tensor::from_parts(out_shape, out));
    }

    let nb = numel(&batch);
    let a_map = batch_offsets(a_batch, &batch);
    let b_map = batch_offsets(b_batch, &batch);
    let a_mat = a_rows * a_cols;
    let b_mat = b_rows * b_cols;
    for bi in 0..nb {
        let ao = a_map[bi] * a_mat;
        let bo = b_map[bi] * b_mat;
        gemm(
            m,
            k,
            n,
            &a.data()[ao..ao + a_mat],
            rsa,
            csa,
            &b.data()[bo..bo + b_mat],
            rsb,
            csb,
            &mut out[bi * m * n..(bi + 1) * m * n],
            true,
        );
    }
    Ok(Tensor::from_parts(out_shape, out))
}

fn batch_offsets(in_batch: &[usize], out_batch: &[usize]) -> Vec<usize> {
    if in_batch == out_batch {
        return (0..numel(out_batch)).collect();
    }
    super::tensor::broadcast_index_map(in_batch, out_batch)
}
