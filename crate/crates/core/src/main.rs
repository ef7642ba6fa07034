use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use stwave::bench::{growth_factors, rows_to_csv, run_bench, BenchConfig};
use stwave::config::{DatasetSpec, RunConfig};
use stwave::data::{synth_traffic, write_atomic, SynthConfig, SynthGraph};
use stwave::model::Ablations;
use stwave::pipeline;
use stwave::Error;

#[derive(Parser)]
#[command(name = "stwave", version, about = "Wavelet-disentangled spatio-temporal traffic forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` with a dotted key, e.g. `train.epochs=5`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint and reports.
    Run(Common),
    /// Re-evaluate a checkpoint on its test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        nodes: usize,
        #[arg(long, default_value_t = 4000)]
        steps: usize,
        #[arg(long, value_enum, default_value = "ring")]
        graph: GraphArg,
    },
    /// Train the full model and each single-component ablation.
    Ablate(Common),
    /// Time full against query-sampled spatial attention.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = vec![256, 512, 1024, 2048])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum GraphArg {
    Ring,
    Grid,
}

fn resolve(common: &Common) -> stwave::Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite(_)
        | Error::Diverged { .. }
        | Error::IterationLimit { .. }
        | Error::NotSymmetric { .. }
        | Error::DegenerateMask { .. }
        | Error::ZeroProjector => 3,
        _ => 2,
    }
}

fn execute(cmd: Command) -> stwave::Result<()> {
    match cmd {
        Command::Run(common) => {
            let r = pipeline::run(&resolve(&common)?)?;
            if let (Some(t), Some(b)) = (&r.test, &r.baseline) {
                println!("test  MAE {:.4}  RMSE {:.4}  MAPE {:.4}", t.overall.mae, t.overall.rmse, t.overall.mape);
                println!("HA    MAE {:.4}  RMSE {:.4}  MAPE {:.4}", b.overall.mae, b.overall.rmse, b.overall.mape);
            }
            println!("artifacts in {}", r.out_dir.display());
        }
        Command::Evaluate { common, checkpoint } => {
            let explicit = common.config.is_some() || !common.overrides.is_empty() || common.seed.is_some();
            let cfg = resolve(&common)?;
            let path = checkpoint.unwrap_or_else(|| cfg.out_dir.join(pipeline::CHECKPOINT_FILE));
            let report = pipeline::evaluate_checkpoint(&path, explicit.then_some(&cfg))?;
            let dir = common.out.unwrap_or_else(|| path.parent().map(PathBuf::from).unwrap_or_default());
            report.save(&dir, "report_eval")?;
            println!(
                "test  MAE {:.4}  RMSE {:.4}  MAPE {:.4}",
                report.overall.mae, report.overall.rmse, report.overall.mape
            );
        }
        Command::Synth {
            common,
            nodes,
            steps,
            graph,
        } => {
            let cfg = resolve(&common)?;
            let mut s = match &cfg.dataset {
                DatasetSpec::Synthetic(s) => s.clone(),
                _ => SynthConfig::default(),
            };
            s.n_nodes = nodes;
            s.steps = steps;
            s.seed = common.seed.unwrap_or(s.seed);
            s.graph = match graph {
                GraphArg::Ring => SynthGraph::Ring,
                GraphArg::Grid => SynthGraph::Grid,
            };
            let (ds, edges) = synth_traffic(&s)?;
            ds.save_dir(&cfg.out_dir, &edges)?;
            write_atomic(&cfg.out_dir.join("synth.json"), &serde_json::to_vec_pretty(&s)?)?;
            println!("wrote {} ({} steps × {} nodes)", cfg.out_dir.display(), steps, nodes);
        }
        Command::Ablate(common) => {
            let rows = pipeline::ablate(&resolve(&common)?, &Ablations::variants())?;
            println!("{:<6} {:>10} {:>10} {:>8}", "variant", "MAE", "RMSE", "MAPE");
            for r in rows {
                let m = &r.report.overall;
                println!("{:<6} {:>10.4} {:>10.4} {:>8.4}", r.variant, m.mae, m.rmse, m.mape);
            }
        }
        Command::Bench {
            common,
            sizes,
            repeats,
        } => {
            let cfg = resolve(&common)?;
            let bc = BenchConfig {
                sizes,
                repeats,
                seed: cfg.seed,
                ..BenchConfig::default()
            };
            let rows = run_bench(&bc)?;
            let path = cfg.out_dir.join("bench.csv");
            write_atomic(&path, rows_to_csv(&rows).as_bytes())?;
            print!("{}", rows_to_csv(&rows));
            for mode in ["full", "sampled"] {
                for (n, g) in growth_factors(&rows, mode) {
                    info!("{mode}: ×{g:.2} at N={n}");
                }
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STWAVE_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
