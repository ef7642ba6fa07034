use super::Graph;
use crate::numerics::Tensor;

/// `L = I - D^{-1/2} A D^{-1/2}`; isolated nodes get an identity row.
pub fn normalized_laplacian(g: &Graph) -> Tensor {
    let n = g.n_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = (0..n).map(|j| g.weight(i, j)).sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_fn(&[n, n], |ix| {
        let (i, j) = (ix[0], ix[1]);
        let off = g.weight(i, j) * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::GraphKind;

    #[test]
    fn two_node_unit_edge() {
        let g = Graph::from_edges(2, &[(0, 1, 1.0)], GraphKind::Spatial).unwrap();
        let l = normalized_laplacian(&g);
        assert_eq!(l.data(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn empty_graph_is_identity() {
        let l = normalized_laplacian(&Graph::empty(4, GraphKind::Spatial));
        assert_eq!(l, Tensor::eye(4));
    }

    proptest::proptest! {
        #[test]
        fn spectrum_in_unit_interval_times_two(ws in proptest::collection::vec(0.0f64..3.0, 21)) {
            let n = 7;
            let mut edges = Vec::new();
            let mut it = ws.iter();
            for i in 0..n {
                for j in i + 1..n {
                    let w = *it.next().unwrap();
                    if w > 1.0 {
                        edges.push((i, j, w));
                    }
                }
            }
            let g = Graph::from_edges(n, &edges, GraphKind::Spatial).unwrap();
            let l = normalized_laplacian(&g);
            let b = crate::numerics::symmetric_eigen_lowest(&l, n).unwrap();
            proptest::prop_assert!(b.eigenvalues[0] > -1e-10);
            proptest::prop_assert!(b.eigenvalues[n - 1] < 2.0 + 1e-10);
        }
    }
}
