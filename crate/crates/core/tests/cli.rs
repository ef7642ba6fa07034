use std::path::Path;
use std::process::{Command, Output};

use stwave::training::ForecastReport;

fn stwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stwave"))
        .args(args)
        .env("STWAVE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_report(path: &Path) -> ForecastReport {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const TINY: &str = r#"
seed = 3

[model]
t1 = 4
t2 = 4
heads = 2
head_dim = 2
layers = 1

[train]
epochs = 2
batch_size = 16
"#;

#[test]
fn synth_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = stwave(&["synth", "--nodes", "20", "--steps", "4000", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["flow.bin", "edges.csv", "manifest.json", "synth.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let ds = stwave::data::Dataset::load_dir(&out).unwrap();
    assert_eq!(ds.flow.shape(), &[4000, 20, 1]);
    assert_eq!(ds.graph.n_edges(), 20);
}

#[test]
fn run_then_evaluate_reproduces_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = stwave(&["synth", "--nodes", "4", "--steps", "240", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0);

    let cfg = dir.path().join("run.toml");
    let text = format!("{TINY}\n[dataset]\nkind = \"dir\"\npath = {:?}\n", data);
    std::fs::write(&cfg, text).unwrap();
    let run_dir = dir.path().join("run");
    let o = stwave(&["run", "--config", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.json", "config.json", "history.csv", "report_test.json", "report_test.csv", "report_ha.json"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }

    let o = stwave(&["evaluate", "--out", run_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trained = read_report(&run_dir.join("report_test.json"));
    let again = read_report(&run_dir.join("report_eval.json"));
    assert_eq!(trained.overall, again.overall);
    assert_eq!(trained.per_horizon, again.per_horizon);
    assert_eq!(trained.config_hash, again.config_hash);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&stwave(&["frobnicate"])), 1);
    assert_eq!(code(&stwave(&["run", "--no-such-flag"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&stwave(&["run", "--out", out, "--override", "model.nonsense=1"])), 1);
    assert_eq!(code(&stwave(&["run", "--out", out, "--override", "no-equals-sign"])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let missing = dir.path().join("absent");
    std::fs::write(&cfg, format!("{TINY}\n[dataset]\nkind = \"dir\"\npath = {missing:?}\n")).unwrap();
    let o = stwave(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let flow = dir.path().join("flow.csv");
    std::fs::write(&flow, "1,2\n3,oops\n").unwrap();
    std::fs::write(&cfg, format!("{TINY}\n[dataset]\nkind = \"files\"\nflow = {flow:?}\n")).unwrap();
    let o = stwave(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("flow.csv:2:"));
}

#[test]
fn bench_writes_scaling_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = stwave(&["bench", "--sizes", "16,32", "--repeats", "1", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,mode,queries,median_ms,min_ms,max_ms"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r[1] == "full" || r[1] == "sampled");
        assert!(r[3].parse::<f64>().unwrap() >= 0.0);
    }
}
