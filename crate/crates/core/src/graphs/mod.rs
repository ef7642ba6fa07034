//! Spatial and temporal node graphs, their normalized Laplacians and the
//! wavelet-based positional encodings derived from them.

pub mod dtw;
pub mod io;
pub mod laplacian;
pub mod pe;

use serde::{Deserialize, Serialize};

pub use dtw::{build_temporal_graph, dtw_distance, TemporalGraphOptions};
pub use io::{graph_hash, load_basis, read_edge_list, save_basis, spatial_graph_from_costs, write_edge_list};
pub use laplacian::normalized_laplacian;
pub use pe::{graph_positional_encoding, GraphPE};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Spatial,
    Temporal,
}

/// Undirected weighted graph over `n_nodes` sensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n_nodes: usize,
    adjacency: Tensor,
    kind: GraphKind,
    /// Set when construction fell back to uniform weights.
    pub degenerate: bool,
}

impl Graph {
    /// Validates symmetry (1e-12), zero diagonal and non-negativity.
    pub fn new(adjacency: Tensor, kind: GraphKind) -> Result<Self> {
        let s = adjacency.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::Argument(format!("adjacency must be square, got {s:?}")));
        }
        let n = s[0];
        for i in 0..n {
            if adjacency.get(&[i, i]) != 0.0 {
                return Err(Error::Argument(format!("nonzero diagonal at node {i}")));
            }
            for j in 0..n {
                let w = adjacency.get(&[i, j]);
                if w < 0.0 || !w.is_finite() {
                    return Err(Error::Argument(format!("invalid weight {w} at ({i},{j})")));
                }
                if (w - adjacency.get(&[j, i])).abs() > 1e-12 {
                    return Err(Error::Argument(format!("asymmetric weight at ({i},{j})")));
                }
            }
        }
        Ok(Graph {
            n_nodes: n,
            adjacency,
            kind,
            degenerate: false,
        })
    }

    pub fn empty(n: usize, kind: GraphKind) -> Self {
        Graph {
            n_nodes: n,
            adjacency: Tensor::zeros(&[n, n]),
            kind,
            degenerate: false,
        }
    }

    /// Undirected graph from `(from, to, weight)` triples; duplicate edges
    /// keep the larger weight and self-loops are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], kind: GraphKind) -> Result<Self> {
        let mut adj = Tensor::zeros(&[n, n]);
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::Consistency(format!("edge ({a},{b}) references a node ≥ {n}")));
            }
            if a == b {
                continue;
            }
            let w = w.max(adj.get(&[a, b]));
            adj.set(&[a, b], w);
            adj.set(&[b, a], w);
        }
        Graph::new(adj, kind)
    }

    /// Cycle `0-1-…-(n-1)-0` with unit weights.
    pub fn ring(n: usize) -> Self {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        Graph::from_edges(n, &edges, GraphKind::Spatial).expect("ring edges are valid")
    }

    /// 4-neighbour lattice, row-major node ids.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1, 1.0));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols, 1.0));
                }
            }
        }
        Graph::from_edges(rows * cols, &edges, GraphKind::Spatial).expect("grid edges are valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency.data()[i * self.n_nodes + j]
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.data().iter().filter(|&&w| w > 0.0).count() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n_nodes == 0 {
            return 0.0;
        }
        2.0 * self.n_edges() as f64 / self.n_nodes as f64
    }

    /// Neighbour lists in ascending id order; an isolated node lists itself.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes;
        (0..n)
            .map(|i| {
                let row = &self.adjacency.data()[i * n..(i + 1) * n];
                let nb: Vec<usize> = (0..n).filter(|&j| row[j] > 0.0).collect();
                if nb.is_empty() {
                    vec![i]
                } else {
                    nb
                }
            })
            .collect()
    }

    /// Relabel nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.n_nodes;
        if perm.len() != n {
            return Err(Error::Argument("permutation length mismatch".into()));
        }
        let adj = Tensor::from_fn(&[n, n], |ix| self.weight(perm[ix[0]], perm[ix[1]]));
        Graph::new(adj, self.kind)
    }
}
