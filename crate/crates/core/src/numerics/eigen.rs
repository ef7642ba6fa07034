//! Lowest eigenpairs of a dense symmetric matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 10_000;

/// The `d` lowest eigenpairs in ascending order; column `i` of
/// `eigenvectors` pairs with `eigenvalues[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenBasis {
    pub eigenvalues: Vec<f64>,
    /// `N × d`
    pub eigenvectors: Tensor,
}

impl EigenBasis {
    pub fn n(&self) -> usize {
        self.eigenvectors.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Eigenpairs for the `d` smallest eigenvalues of symmetric `m`.
///
/// Each eigenvector is normalized and signed so that its first component
/// with magnitude above `1e-10` is positive, which makes the result
/// reproducible across calls and platforms with the same arithmetic.
pub fn symmetric_eigen_lowest(m: &Tensor, d: usize) -> Result<EigenBasis> {
    let s = m.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::Argument(format!("expected a square matrix, got {s:?}")));
    }
    let n = s[0];
    if d == 0 || d > n {
        return Err(Error::Argument(format!("requested {d} eigenpairs of an {n}×{n} matrix")));
    }
    let mut deviation = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            deviation = deviation.max((m.get(&[i, j]) - m.get(&[j, i])).abs());
        }
    }
    if deviation > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { deviation });
    }

    let mat = DMatrix::from_row_slice(n, n, m.data());
    let eig = SymmetricEigen::try_new(mat, f64::EPSILON, MAX_ITERATIONS).ok_or(Error::IterationLimit {
        iterations: MAX_ITERATIONS,
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });

    let mut vectors = Tensor::zeros(&[n, d]);
    let mut values = Vec::with_capacity(d);
    for (col, &src) in order.iter().take(d).enumerate() {
        values.push(eig.eigenvalues[src]);
        let v = eig.eigenvectors.column(src);
        let norm = v.norm();
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-10)
            .map_or(1.0, |&x| if x < 0.0 { -1.0 } else { 1.0 });
        for row in 0..n {
            vectors.set(&[row, col], sign * v[row] / norm);
        }
    }
    Ok(EigenBasis {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_sorted_ascending() {
        let m = Tensor::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
        let b = symmetric_eigen_lowest(&m, 2).unwrap();
        assert_eq!(b.eigenvalues.len(), 2);
        assert!((b.eigenvalues[0] - 1.0).abs() < 1e-14 && (b.eigenvalues[1] - 2.0).abs() < 1e-14);
        assert!((b.eigenvectors.get(&[1, 0]) - 1.0).abs() < 1e-14);
        assert!((b.eigenvectors.get(&[2, 1]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reconstructs_random_symmetric() {
        let n = 7;
        let a = Tensor::from_fn(&[n, n], |ix| ((ix[0] * 7 + ix[1] * 3) as f64).sin());
        let m = a.zip_map(&a.t().unwrap(), |x, y| x + y).unwrap();
        let b = symmetric_eigen_lowest(&m, n).unwrap();
        let phi = &b.eigenvectors;
        let lam = Tensor::from_fn(&[n, n], |ix| if ix[0] == ix[1] { b.eigenvalues[ix[0]] } else { 0.0 });
        let rec = phi.matmul(&lam).unwrap().matmul(&phi.t().unwrap()).unwrap();
        assert!(rec.max_abs_diff(&m) < 1e-12);
        let gram = phi.t().unwrap().matmul(phi).unwrap();
        assert!(gram.max_abs_diff(&Tensor::eye(n)) < 1e-12);
        for w in b.eigenvalues.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn sign_convention_first_component_positive() {
        let m = Tensor::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let b = symmetric_eigen_lowest(&m, 2).unwrap();
        for col in 0..2 {
            assert!(b.eigenvectors.get(&[0, col]) > 0.0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let asym = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(symmetric_eigen_lowest(&asym, 1), Err(Error::NotSymmetric { .. })));
        assert!(symmetric_eigen_lowest(&Tensor::eye(2), 3).is_err());
        assert!(symmetric_eigen_lowest(&Tensor::zeros(&[2, 3]), 1).is_err());
    }
}
