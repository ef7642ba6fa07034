//! Datasets: flow ingestion, on-disk formats and the synthetic generator.

mod ingest;
mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{read_edge_list, spatial_graph_from_costs, write_edge_list, Graph};
use crate::numerics::Tensor;

pub use ingest::{ingest_flow, read_binary, write_binary, FlowFormat, IngestStats, BINARY_MAGIC, BINARY_VERSION};
pub use synth::{synth_traffic, SynthConfig, SynthGraph};

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("`{}` is not a file path", path.display())))?
        .to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub sample_minutes: u32,
    /// Half-open step range `[start, end)` covered by the flow tensor.
    pub time_range: (usize, usize),
    pub ingest: Option<IngestStats>,
}

/// Flow series `T × N × 1`, validity mask `T × N` and spatial graph.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub flow: Tensor,
    pub mask: Vec<bool>,
    pub graph: Graph,
    pub metadata: Metadata,
}

pub const FLOW_FILE: &str = "flow.bin";
pub const EDGES_FILE: &str = "edges.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    flow: String,
    edges: String,
    n_steps: usize,
    n_nodes: usize,
    metadata: Metadata,
}

impl Dataset {
    pub fn n_steps(&self) -> usize {
        self.flow.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.flow.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.flow.shape();
        if s.len() != 3 || s[2] != 1 {
            return Err(Error::Consistency(format!("flow must be T×N×1, got {s:?}")));
        }
        if self.mask.len() != s[0] * s[1] {
            return Err(Error::Consistency("mask size differs from flow".into()));
        }
        if self.graph.n_nodes() != s[1] {
            return Err(Error::Consistency(format!(
                "flow has {} nodes, graph has {}",
                s[1],
                self.graph.n_nodes()
            )));
        }
        Ok(())
    }

    /// Validity mask as a `T × N × 1` tensor of zeros and ones.
    pub fn mask_tensor(&self) -> Tensor {
        let s = self.flow.shape();
        Tensor::new(
            s.to_vec(),
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask matches flow")
    }

    /// Save as `flow.bin` (missing cells written as NaN), `edges.csv` and a
    /// JSON manifest.
    pub fn save_dir(&self, dir: &Path, edges: &[(usize, usize, f64)]) -> Result<()> {
        self.validate()?;
        let mut raw = self.flow.clone();
        for (v, &ok) in raw.data_mut().iter_mut().zip(&self.mask) {
            if !ok {
                *v = f64::NAN;
            }
        }
        write_binary(&dir.join(FLOW_FILE), &raw)?;
        write_edge_list(&dir.join(EDGES_FILE), edges)?;
        let manifest = Manifest {
            flow: FLOW_FILE.into(),
            edges: EDGES_FILE.into(),
            n_steps: self.n_steps(),
            n_nodes: self.n_nodes(),
            metadata: self.metadata.clone(),
        };
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)
    }

    /// Load a directory written by [`Dataset::save_dir`], or any directory
    /// holding `flow.bin`/`flow.csv` and optionally `edges.csv`.
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let manifest: Option<Manifest> = match fs::read(dir.join(MANIFEST_FILE)) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let flow_path = match &manifest {
            Some(m) => dir.join(&m.flow),
            None if dir.join(FLOW_FILE).exists() => dir.join(FLOW_FILE),
            None => dir.join("flow.csv"),
        };
        let edges_path = dir.join(manifest.as_ref().map_or(EDGES_FILE, |m| m.edges.as_str()));
        let graph = if edges_path.exists() {
            let edges = read_edge_list(&edges_path)?;
            let n = match &manifest {
                Some(m) => m.n_nodes,
                None => edges.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0),
            };
            Some(spatial_graph_from_costs(n, &edges)?)
        } else {
            None
        };
        let mut ds = ingest_flow(&flow_path, FlowFormat::from_path(&flow_path), graph)?;
        if let Some(m) = manifest {
            let stats = ds.metadata.ingest.take();
            ds.metadata = m.metadata;
            ds.metadata.ingest = stats;
        }
        Ok(ds)
    }
}
