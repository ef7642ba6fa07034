use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, Dataset, Metadata};
use crate::error::{Error, Result};
use crate::graphs::{Graph, GraphKind};
use crate::numerics::Tensor;

/// Little-endian layout: magic, `u32` version, `u64` T, `u64` N, then
/// `T·N` `f64` values in time-major order.
pub const BINARY_MAGIC: &[u8; 4] = b"STWF";
pub const BINARY_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowFormat {
    Csv,
    Binary,
}

impl FlowFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("txt") => FlowFormat::Csv,
            _ => FlowFormat::Binary,
        }
    }
}

/// Row and cell accounting for one ingestion. `cells_valid +
/// cells_nonfinite + cells_absent` always equals `T·N`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: usize,
    pub cells_valid: usize,
    pub cells_nonfinite: usize,
    /// Cells never mentioned by a long-format file.
    pub cells_absent: usize,
}

impl IngestStats {
    pub fn reconciles(&self, t: usize, n: usize) -> bool {
        self.cells_valid + self.cells_nonfinite + self.cells_absent == t * n
    }
}

/// Read a flow matrix. `graph`, when given, fixes the node count; without
/// it the dataset gets an edgeless graph.
pub fn ingest_flow(path: &Path, format: FlowFormat, graph: Option<Graph>) -> Result<Dataset> {
    let (raw, mut stats) = match format {
        FlowFormat::Binary => {
            let raw = read_binary(path)?;
            let stats = IngestStats {
                rows_read: raw.shape()[0],
                ..Default::default()
            };
            (raw, stats)
        }
        FlowFormat::Csv => read_csv(path, graph.as_ref().map(Graph::n_nodes))?,
    };
    let (t, n) = (raw.shape()[0], raw.shape()[1]);
    let graph = match graph {
        Some(g) if g.n_nodes() != n => {
            return Err(Error::Consistency(format!(
                "flow file has {n} nodes but the edge list has {}",
                g.n_nodes()
            )))
        }
        Some(g) => g,
        None => Graph::empty(n, GraphKind::Spatial),
    };
    let mut mask = Vec::with_capacity(t * n);
    let mut flow = Vec::with_capacity(t * n);
    let mut nonfinite = 0;
    for &v in raw.data() {
        if v.is_finite() {
            mask.push(true);
            flow.push(v);
        } else {
            mask.push(false);
            flow.push(0.0);
            nonfinite += 1;
        }
    }
    // Absent long-format cells were stored as NaN; split them out.
    stats.cells_nonfinite = nonfinite - stats.cells_absent;
    stats.cells_valid = t * n - nonfinite;
    debug_assert!(stats.reconciles(t, n));
    let ds = Dataset {
        flow: Tensor::new(vec![t, n, 1], flow)?,
        mask,
        graph,
        metadata: Metadata {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sample_minutes: 5,
            time_range: (0, t),
            ingest: Some(stats),
        },
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Some(f64::NAN);
    }
    s.parse().ok()
}

/// Long (`t,node,flow`) or wide (one row per step) CSV into `T × N`.
fn read_csv(path: &Path, n_hint: Option<usize>) -> Result<(Tensor, IngestStats)> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let Some(&(_, first)) = lines.peek() else {
        return Err(err(0, "empty flow file".into()));
    };
    let mut stats = IngestStats::default();

    if first.replace(' ', "") == "t,node,flow" {
        lines.next();
        let mut cells: Vec<(usize, usize, f64, usize)> = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(err(i, format!("expected 3 fields, got {}", f.len())));
            }
            let t: usize = f[0].parse().map_err(|e| err(i, format!("bad `t`: {e}")))?;
            let node: usize = f[1].parse().map_err(|e| err(i, format!("bad `node`: {e}")))?;
            let v = parse_cell(f[2]).ok_or_else(|| err(i, format!("bad flow `{}`", f[2])))?;
            cells.push((t, node, v, i));
            stats.rows_read += 1;
        }
        let t_len = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let n = n_hint.unwrap_or_else(|| cells.iter().map(|c| c.1 + 1).max().unwrap_or(0));
        let mut data = vec![f64::NAN; t_len * n];
        let mut seen = vec![false; t_len * n];
        for (t, node, v, line) in cells {
            if node >= n {
                return Err(Error::Consistency(format!(
                    "line {}: node {node} outside the {n} declared nodes",
                    line + 1
                )));
            }
            let k = t * n + node;
            if seen[k] {
                return Err(err(line, format!("duplicate cell (t={t}, node={node})")));
            }
            seen[k] = true;
            data[k] = v;
        }
        stats.cells_absent = seen.iter().filter(|s| !**s).count();
        return Ok((Tensor::new(vec![t_len, n], data)?, stats));
    }

    // Wide: an optional non-numeric header row, then one row per step.
    if first.split(',').any(|c| parse_cell(c).is_none()) {
        lines.next();
    }
    let mut data = Vec::new();
    let mut width = None;
    for (i, line) in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| parse_cell(c).ok_or_else(|| err(i, format!("bad value `{}`", c.trim()))))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(err(i, format!("expected {w} columns, got {}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
        stats.rows_read += 1;
    }
    let n = width.unwrap_or(0);
    Ok((Tensor::new(vec![stats.rows_read, n], data)?, stats))
}

/// Write a `T × N` (or `T × N × 1`) matrix in the binary flow layout.
pub fn write_binary(path: &Path, flow: &Tensor) -> Result<()> {
    let s = flow.shape();
    if !(s.len() == 2 || (s.len() == 3 && s[2] == 1)) {
        return Err(Error::Argument(format!("binary flow must be T×N, got {s:?}")));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + 8 * flow.len());
    bytes.extend_from_slice(BINARY_MAGIC);
    bytes.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(s[0] as u64).to_le_bytes());
    bytes.extend_from_slice(&(s[1] as u64).to_le_bytes());
    for v in flow.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Read the binary flow layout into a `T × N` tensor (non-finite values kept).
pub fn read_binary(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("not a binary flow file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BINARY_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let t = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let n = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != t * n * 8 {
        return Err(bad(format!("expected {} values, found {} bytes", t * n, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(vec![t, n], data)
}
