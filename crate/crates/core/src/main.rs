//! Thin CLI over the library commands.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use keepgain::cli::{self, ProbeKind};
use keepgain::config::{ExperimentConfig, Method};
use keepgain::error::Error;

#[derive(Parser)]
#[command(name = "keepgain", version, about = "Continual-learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drift stream as CSV files plus a manifest.
    Generate {
        /// Experiment config JSON (stream spec inside).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one method over the configured stream and write the report.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's method id.
        #[arg(long)]
        method: Option<String>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a checkpoint (model + run log) after every task slot.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Continue from the latest checkpoint in --checkpoint-dir.
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Aggregate serialized expert models and evaluate the result.
    Merge {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated expert model paths.
        #[arg(long, value_delimiter = ',')]
        models: Vec<PathBuf>,
        /// Aggregation method id (vote|soft_avg|weight_avg|task_arith|ties|adamerging).
        #[arg(long)]
        method: String,
        /// Base model for task-vector methods.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a serialized model on a CSV dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Positive class for F1.
        #[arg(long, default_value_t = 1)]
        positive: usize,
    },
    /// Run a verification probe (prop1|prop2|bound|plasticity).
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        probe: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate report JSONs under a directory into one CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> keepgain::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

fn run() -> keepgain::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { spec, out } => {
            let cfg = load_config(&spec)?;
            let out = out.unwrap_or_else(cli::default_out_dir);
            let manifest = cli::cmd_generate(&cfg, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train {
            config,
            method,
            seed,
            out,
            checkpoint_dir,
            resume,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(cli::default_out_dir);
            let artifacts =
                cli::cmd_train_checkpointed(&cfg, &out, checkpoint_dir.as_deref(), resume)?;
            let r = &artifacts.report;
            println!(
                "method={} seed={} slots={} aut={} ptr={} xrep={}",
                r.method,
                r.seed,
                r.slots,
                fmt_opt(r.aut),
                fmt_opt(r.ptr),
                fmt_opt(r.xrep),
            );
            println!("report: {}", artifacts.report_path.display());
            println!("model:  {}", artifacts.model_path.display());
        }
        Command::Merge {
            config,
            models,
            method,
            base,
            out,
        } => {
            let cfg = load_config(&config)?;
            let method = method.parse::<Method>()?;
            let out = out.unwrap_or_else(cli::default_out_dir);
            let artifacts = cli::cmd_merge(&cfg, method, base.as_deref(), &models, &out)?;
            let r = &artifacts.report;
            println!(
                "method={} scores={:?} ptr={} xrep={}",
                r.method,
                r.f_current,
                fmt_opt(r.ptr),
                fmt_opt(r.xrep),
            );
            println!("merged model: {}", artifacts.model_path.display());
        }
        Command::Eval {
            model,
            data,
            positive,
        } => {
            let scores = cli::cmd_eval(&model, &data, positive)?;
            println!("{}", serde_json::to_string_pretty(&scores)?);
        }
        Command::Diagnose { config, probe, out } => {
            let cfg = load_config(&config)?;
            let probe = probe.parse::<ProbeKind>()?;
            let out = out.unwrap_or_else(cli::default_out_dir);
            let path = cli::cmd_diagnose(&cfg, probe, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Report { input, out } => {
            let rows = cli::cmd_report(&input, &out)?;
            println!("aggregated {rows} reports into {}", out.display());
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config { .. } | Error::Parse { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
