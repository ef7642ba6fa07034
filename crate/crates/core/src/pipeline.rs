//! End-to-end runs: load data, train, evaluate, write artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::config::{DatasetSpec, RunConfig};
use crate::data::{ingest_flow, synth_traffic, write_atomic, Dataset, FlowFormat};
use crate::error::{Error, Result};
use crate::graphs::{graph_hash, load_basis, read_edge_list, save_basis, spatial_graph_from_costs, Graph, GraphPE};
use crate::model::{Ablations, Checkpoint, StWave};
use crate::training::{evaluate, evaluate_ha, train, EpochLog, ForecastReport, Prepared, Segment, ZScore};

pub const CONFIG_FILE: &str = "config.json";
pub const CONFIG_HASH_FILE: &str = "config.sha256";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Synthetic(s) => Ok(synth_traffic(s)?.0),
        DatasetSpec::Dir { path } => Dataset::load_dir(path),
        DatasetSpec::Files { flow, edges } => {
            let mut ds = ingest_flow(flow, FlowFormat::from_path(flow), None)?;
            if let Some(p) = edges {
                let e = read_edge_list(p)?;
                let n = ds.n_nodes();
                if let Some(bad) = e.iter().find(|x| x.0 >= n || x.1 >= n) {
                    return Err(Error::Consistency(format!(
                        "edge ({}, {}) references a node outside the {n} flow columns",
                        bad.0, bad.1
                    )));
                }
                ds.graph = spatial_graph_from_costs(n, &e)?;
            }
            Ok(ds)
        }
    }
}

/// Positional encoding of width `d`, reusing a cached eigenbasis in
/// `cache_dir` when its key matches.
pub fn encoding_for(graph: &Graph, d: usize, cache_dir: Option<&Path>, tag: &str) -> Result<GraphPE> {
    let r = d.min(graph.n_nodes());
    let key = graph_hash(graph);
    let path = cache_dir.map(|dir| dir.join(format!("basis_{tag}.json")));
    if let Some(p) = &path {
        if let Some(basis) = load_basis(p, &key, r)? {
            return GraphPE::from_basis(basis, d);
        }
    }
    let pe = GraphPE::padded(graph, d)?;
    if let Some(p) = &path {
        save_basis(p, &key, &pe.basis)?;
    }
    Ok(pe)
}

pub fn build_model(cfg: &RunConfig, prep: &Prepared, cache_dir: Option<&Path>) -> Result<StWave> {
    let d = cfg.model.d_model();
    let pe_s = encoding_for(&prep.spatial, d, cache_dir, "spatial")?;
    let pe_t = encoding_for(&prep.temporal, d, cache_dir, "temporal")?;
    StWave::from_encodings(&cfg.model, prep.spatial.neighbors(), pe_s, pe_t, cfg.seed)
}

pub struct RunResult {
    pub config_hash: String,
    pub history: Vec<EpochLog>,
    pub test: Option<ForecastReport>,
    pub baseline: Option<ForecastReport>,
    pub checkpoint: Checkpoint,
    pub out_dir: PathBuf,
}

fn history_csv(h: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_mae,lr\n");
    for e in h {
        let val = e.val_mae.map_or(String::new(), |v| v.to_string());
        s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, val, e.lr));
    }
    s
}

/// Train on the configured dataset and write config, checkpoint, reports
/// and the loss history into `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    let cfg = cfg.clone().resolved()?;
    let hash = cfg.hash()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    write_atomic(&out.join(CONFIG_FILE), &cfg.to_json()?)?;
    write_atomic(&out.join(CONFIG_HASH_FILE), format!("{hash}\n").as_bytes())?;

    let ds = load_dataset(&cfg.dataset)?;
    info!("dataset {}: {} steps × {} nodes", ds.metadata.name, ds.n_steps(), ds.n_nodes());
    let prep = Prepared::new(&ds, cfg.model.t1, cfg.model.t2, &cfg.train, &cfg.graphs)?;
    let mut model = build_model(&cfg, &prep, Some(&out))?;
    info!("model {} with {} parameters", cfg.model.ablations.label(), model.n_params());

    let outcome = match train(&mut model, &prep, &cfg.train, &hash) {
        Ok(o) => o,
        Err(Error::Diverged { epoch, mut checkpoint }) => {
            checkpoint.config_echo = serde_json::to_value(&cfg)?;
            checkpoint.save(&out.join(CHECKPOINT_FILE))?;
            return Err(Error::Diverged { epoch, checkpoint });
        }
        Err(e) => return Err(e),
    };
    let mut checkpoint = outcome.checkpoint;
    checkpoint.config_echo = serde_json::to_value(&cfg)?;
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_atomic(&out.join("history.csv"), history_csv(&outcome.history).as_bytes())?;

    let baseline = if prep.windows(Segment::Test, 1).is_empty() {
        None
    } else {
        Some(evaluate_ha(&prep, Segment::Test, &hash)?)
    };
    if let Some(r) = &outcome.test {
        r.save(&out, "report_test")?;
        info!("test MAE {:.4} RMSE {:.4} MAPE {:.4}", r.overall.mae, r.overall.rmse, r.overall.mape);
    }
    if let Some(r) = &baseline {
        r.save(&out, "report_ha")?;
        info!("HA test MAE {:.4}", r.overall.mae);
    }
    Ok(RunResult {
        config_hash: hash,
        history: outcome.history,
        test: outcome.test,
        baseline,
        checkpoint,
        out_dir: out,
    })
}

/// Re-evaluate a saved checkpoint on its test split using the config it
/// echoes (or `cfg`, when given).
pub fn evaluate_checkpoint(path: &Path, cfg: Option<&RunConfig>) -> Result<ForecastReport> {
    let ck = Checkpoint::load(path)?;
    let cfg = match cfg {
        Some(c) => c.clone().resolved()?,
        None => serde_json::from_value::<RunConfig>(ck.config_echo.clone())
            .map_err(|e| Error::Config(format!("checkpoint config echo: {e}")))?,
    };
    if cfg.model != ck.model {
        return Err(Error::Consistency("checkpoint model config differs from the run config".into()));
    }
    let hash = cfg.hash()?;
    let ds = load_dataset(&cfg.dataset)?;
    let prep = Prepared::new(&ds, cfg.model.t1, cfg.model.t2, &cfg.train, &cfg.graphs)?;
    if let Some(stats) = &ck.norm {
        if ZScore::from_stats(stats) != prep.norm {
            return Err(Error::Consistency("normalization statistics differ from the checkpoint".into()));
        }
    }
    let cache = path.parent();
    let mut model = build_model(&cfg, &prep, cache)?;
    ck.restore_into(model.store_mut())?;
    evaluate(&model, &prep, Segment::Test, cfg.train.batch_size, &hash)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub report: ForecastReport,
}

/// Train the full model and each single-component variant with the same
/// seed; each run goes to `<out_dir>/<variant>`.
pub fn ablate(cfg: &RunConfig, variants: &[&str]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for label in std::iter::once("full").chain(variants.iter().copied()) {
        let mut c = cfg.clone();
        c.model.ablations = Ablations::from_label(label)?;
        c.out_dir = cfg.out_dir.join(label.trim_start_matches('-').to_ascii_lowercase());
        info!("ablation {label}");
        let r = run(&c)?;
        let report = r
            .test
            .ok_or(Error::EmptySplit("test"))?;
        rows.push(AblationRow {
            variant: label.to_string(),
            report,
        });
    }
    let mut table = String::from("variant,mae,rmse,mape\n");
    for r in &rows {
        let m = &r.report.overall;
        table.push_str(&format!("{},{},{},{}\n", r.variant, m.mae, m.rmse, m.mape));
    }
    write_atomic(&cfg.out_dir.join("ablation.csv"), table.as_bytes())?;
    Ok(rows)
}
