//! Wavelet-based graph positional encoding `ρ = Φ · diag(e^{sλ})^{1/2}`.
//!
//! `ρρᵀ = Φ diag(e^{sλ}) Φᵀ` is the graph heat-kernel wavelet at scale `s`
//! restricted to the retained spectrum. The eigenbasis is a constant; only
//! `s` is learnable.

use serde::{Deserialize, Serialize};

use super::{normalized_laplacian, Graph};
use crate::error::{Error, Result};
use crate::numerics::{symmetric_eigen_lowest, Binding, EigenBasis, ParamId, Tensor, Var};

/// Positional encoding of width `d` for an `N`-node graph.
///
/// When `d > N` only `N` eigenpairs exist; the remaining columns are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphPE {
    pub basis: EigenBasis,
    pub d: usize,
    /// Learnable scale, a one-element parameter.
    pub scale: Option<ParamId>,
    /// `N × d`, zero-padded eigenvectors.
    phi: Tensor,
    /// `d`, zero-padded eigenvalues.
    lambda: Tensor,
}

impl GraphPE {
    pub fn from_basis(basis: EigenBasis, d: usize) -> Result<Self> {
        let n = basis.n();
        let r = basis.d();
        if r > d {
            return Err(Error::Argument(format!("basis has {r} columns, wider than d = {d}")));
        }
        let phi = Tensor::from_fn(&[n, d], |ix| {
            if ix[1] < r {
                basis.eigenvectors.get(&[ix[0], ix[1]])
            } else {
                0.0
            }
        });
        let lambda = Tensor::from_fn(&[d], |ix| basis.eigenvalues.get(ix[0]).copied().unwrap_or(0.0));
        Ok(GraphPE {
            basis,
            d,
            scale: None,
            phi,
            lambda,
        })
    }

    /// Encoding of width `d` using the `min(d, N)` lowest eigenpairs of the
    /// normalized Laplacian.
    pub fn padded(g: &Graph, d: usize) -> Result<Self> {
        let n = g.n_nodes();
        let basis = symmetric_eigen_lowest(&normalized_laplacian(g), d.min(n))?;
        Self::from_basis(basis, d)
    }

    pub fn with_scale(mut self, scale: ParamId) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn n(&self) -> usize {
        self.phi.shape()[0]
    }

    /// `ρ` at a fixed scale.
    pub fn rho_at(&self, s: f64) -> Tensor {
        let lam = self.lambda.data();
        let d = self.d;
        Tensor::from_fn(&[self.n(), d], |ix| {
            self.phi.data()[ix[0] * d + ix[1]] * (0.5 * s * lam[ix[1]]).exp()
        })
    }

    /// `ρ` as a function of the bound scale parameter.
    pub fn rho(&self, params: &Binding) -> Result<Var> {
        let scale = self
            .scale
            .ok_or_else(|| Error::Argument("positional encoding has no scale parameter".into()))?;
        let half_lambda = Var::constant(self.lambda.map(|l| 0.5 * l));
        let gain = params[scale].mul(&half_lambda)?.exp();
        Var::constant(self.phi.clone()).mul(&gain)
    }

    /// `ρρᵀ` at scale `s`.
    pub fn wavelet_at(&self, s: f64) -> Tensor {
        let rho = self.rho_at(s);
        rho.matmul(&rho.t().expect("rank 2")).expect("conformable")
    }
}

/// Positional encoding for `g` with exactly `d ≤ N` eigenpairs, evaluated
/// at scale `s`. Returns the encoding and `ρ`.
pub fn graph_positional_encoding(g: &Graph, d: usize, s: f64) -> Result<(GraphPE, Tensor)> {
    if d > g.n_nodes() || d == 0 {
        return Err(Error::Argument(format!(
            "encoding width {d} must lie in [1, {}]",
            g.n_nodes()
        )));
    }
    let pe = GraphPE::padded(g, d)?;
    let rho = pe.rho_at(s);
    Ok((pe, rho))
}
