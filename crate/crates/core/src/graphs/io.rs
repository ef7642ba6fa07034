//! Edge-list ingestion and the on-disk eigenbasis cache.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Graph, GraphKind};
use crate::error::{Error, Result};
use crate::numerics::EigenBasis;

/// Parse a `from,to,cost` CSV with a header row. Node ids are 0-based.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "from,to,cost" => {}
        Some((i, h)) => return Err(parse_err(i, format!("expected header `from,to,cost`, got `{h}`"))),
        None => return Err(parse_err(0, "empty edge list".into())),
    }
    let mut edges = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(i, format!("expected 3 fields, got {}", fields.len())));
        }
        let from = fields[0].parse().map_err(|e| parse_err(i, format!("bad `from`: {e}")))?;
        let to = fields[1].parse().map_err(|e| parse_err(i, format!("bad `to`: {e}")))?;
        let cost: f64 = fields[2].parse().map_err(|e| parse_err(i, format!("bad `cost`: {e}")))?;
        if !cost.is_finite() || cost < 0.0 {
            return Err(parse_err(i, format!("cost {cost} must be finite and non-negative")));
        }
        edges.push((from, to, cost));
    }
    Ok(edges)
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize, f64)]) -> Result<()> {
    let mut out = String::from("from,to,cost\n");
    for (a, b, c) in edges {
        out.push_str(&format!("{a},{b},{c}\n"));
    }
    crate::data::write_atomic(path, out.as_bytes())
}

/// Spatial graph from road distances: weight `exp(-(cost/σ)²)` with σ the
/// standard deviation of all costs, or unit weights when σ is zero.
pub fn spatial_graph_from_costs(n: usize, edges: &[(usize, usize, f64)]) -> Result<Graph> {
    if edges.is_empty() {
        return Ok(Graph::empty(n, GraphKind::Spatial));
    }
    let mean = edges.iter().map(|e| e.2).sum::<f64>() / edges.len() as f64;
    let sigma = (edges.iter().map(|e| (e.2 - mean).powi(2)).sum::<f64>() / edges.len() as f64).sqrt();
    let weighted: Vec<_> = edges
        .iter()
        .map(|&(a, b, c)| {
            let w = if sigma > 1e-12 { (-(c / sigma).powi(2)).exp() } else { 1.0 };
            // Keep extremely distant pairs connected rather than underflowing to 0.
            (a, b, w.max(f64::MIN_POSITIVE))
        })
        .collect();
    Graph::from_edges(n, &weighted, GraphKind::Spatial)
}

pub const EIGEN_CACHE_VERSION: u32 = 1;
pub const LAPLACIAN_VARIANT: &str = "sym_normalized";

/// Stable content hash of a graph's adjacency.
pub fn graph_hash(g: &Graph) -> String {
    let mut h = Sha256::new();
    h.update((g.n_nodes() as u64).to_le_bytes());
    for w in g.adjacency().data() {
        h.update(w.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedBasis {
    pub version: u32,
    pub dataset_hash: String,
    pub laplacian: String,
    pub d: usize,
    pub basis: EigenBasis,
}

pub fn save_basis(path: &Path, dataset_hash: &str, basis: &EigenBasis) -> Result<()> {
    let blob = CachedBasis {
        version: EIGEN_CACHE_VERSION,
        dataset_hash: dataset_hash.to_string(),
        laplacian: LAPLACIAN_VARIANT.to_string(),
        d: basis.d(),
        basis: basis.clone(),
    };
    crate::data::write_atomic(path, serde_json::to_string(&blob)?.as_bytes())
}

/// Load a cached basis if it exists and matches the key; `None` on a miss.
pub fn load_basis(path: &Path, dataset_hash: &str, d: usize) -> Result<Option<EigenBasis>> {
    if !path.exists() {
        return Ok(None);
    }
    let blob: CachedBasis = serde_json::from_str(&fs::read_to_string(path)?)?;
    let hit = blob.version == EIGEN_CACHE_VERSION
        && blob.dataset_hash == dataset_hash
        && blob.laplacian == LAPLACIAN_VARIANT
        && blob.d == d;
    Ok(hit.then_some(blob.basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::symmetric_eigen_lowest;

    #[test]
    fn edge_list_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edges.csv");
        write_edge_list(&p, &[(0, 1, 2.5), (1, 2, 4.0)]).unwrap();
        assert_eq!(read_edge_list(&p).unwrap(), vec![(0, 1, 2.5), (1, 2, 4.0)]);

        fs::write(&p, "from,to,cost\n0,1,2\n1,x,3\n").unwrap();
        match read_edge_list(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn basis_cache_keyed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("basis.json");
        let g = Graph::ring(5);
        let key = graph_hash(&g);
        let basis = symmetric_eigen_lowest(&crate::graphs::normalized_laplacian(&g), 3).unwrap();
        save_basis(&p, &key, &basis).unwrap();
        assert_eq!(load_basis(&p, &key, 3).unwrap(), Some(basis));
        assert_eq!(load_basis(&p, &key, 4).unwrap(), None);
        assert_eq!(load_basis(&p, "other", 3).unwrap(), None);
    }

    #[test]
    fn distance_kernel_weights() {
        let g = spatial_graph_from_costs(3, &[(0, 1, 1.0), (1, 2, 3.0)]).unwrap();
        // σ = 1
        assert!((g.weight(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g.weight(2, 1) - (-9.0f64).exp()).abs() < 1e-15);
    }
}
