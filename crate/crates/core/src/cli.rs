//! Experiment runner commands. The binary in `main.rs` is a thin argument
//! parser over these functions; everything here is also callable as a
//! library.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::continual::{evaluate_pool as evaluate_pool_impl, run_stream_checkpointed, Snapshot};
use crate::datastream::{export_stream, load_csv, CsvSchema, TaskStream};
use crate::error::{Error, Result};
use crate::merging::ExpertPool;
use crate::metrics::{f1, MetricsReport};
use crate::model_io::{load_model, save_model};

/// Environment variable naming the default output root when `--out` is
/// omitted.
pub const OUT_ENV: &str = "KEEPGAIN_OUT";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Reports are append-only: reruns get versioned filenames instead of
/// overwriting.
fn versioned_path(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    let first = dir.join(format!("{stem}.{ext}"));
    if !first.exists() {
        return first;
    }
    for v in 2.. {
        let candidate = dir.join(format!("{stem}_v{v}.{ext}"));
        if !candidate.exists() {
            return candidate;
        }
    }
    unreachable!()
}

/// Full run artifact: the config snapshot plus the metrics report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDocument {
    pub config: ExperimentConfig,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub report_path: PathBuf,
    pub model_path: PathBuf,
    pub scores_csv_path: PathBuf,
    pub report: MetricsReport,
}

/// `generate`: writes every domain CSV plus the manifest.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let spec = cfg
        .stream
        .spec
        .as_ref()
        .ok_or_else(|| Error::config("stream.spec", "generate needs an inline spec"))?;
    let stream = crate::datastream::generate_stream(spec)?;
    export_stream(&stream, spec, out)?;
    Ok(out.join("manifest.json"))
}

/// `train`: runs the configured method over the stream and writes the
/// report document, the per-slot scores CSV, and the final model.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainArtifacts> {
    cmd_train_checkpointed(cfg, out, None, false)
}

/// [`cmd_train`] with per-slot checkpoints and resume.
pub fn cmd_train_checkpointed(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint_dir: Option<&Path>,
    resume: bool,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let stream = cfg.load_stream()?;
    let outcome =
        run_stream_checkpointed(cfg.method, &stream, cfg, cfg.seed, checkpoint_dir, resume)?;

    let stem = format!("report_{}_seed{}", cfg.method, cfg.seed);
    let report_path = versioned_path(out, &stem, "json");
    let doc = RunDocument {
        config: cfg.clone(),
        report: outcome.report.clone(),
    };
    std::fs::write(&report_path, serde_json::to_string_pretty(&doc)?)?;

    let scores_path = versioned_path(out, &format!("scores_{}_seed{}", cfg.method, cfg.seed), "csv");
    std::fs::write(&scores_path, outcome.report.scores_csv())?;

    let model_path = versioned_path(out, &format!("model_{}_seed{}", cfg.method, cfg.seed), "json");
    save_model(
        &model_path,
        &outcome.final_model,
        None,
        outcome.resadapt.as_ref(),
    )?;

    Ok(TrainArtifacts {
        report_path,
        model_path,
        scores_csv_path: scores_path,
        report: outcome.report,
    })
}

#[derive(Debug, Clone)]
pub struct MergeArtifacts {
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub report: MetricsReport,
}

/// `merge`: aggregates serialized expert models and evaluates the result
/// on the configured stream. Methods built on task vectors need `--base`.
pub fn cmd_merge(
    cfg: &ExperimentConfig,
    method: Method,
    base: Option<&Path>,
    model_paths: &[PathBuf],
    out: &Path,
) -> Result<MergeArtifacts> {
    cfg.validate()?;
    if !method.is_model_preserving() {
        return Err(Error::config(
            "method",
            format!("`{method}` is not an aggregation method"),
        ));
    }
    if model_paths.is_empty() {
        return Err(Error::config("models", "need at least one expert model"));
    }
    let mut experts = Vec::with_capacity(model_paths.len());
    for p in model_paths {
        experts.push(load_model(p)?.0);
    }
    let base_model = match base {
        Some(p) => load_model(p)?.0,
        None => {
            let needs_base = matches!(
                method,
                Method::TaskArith | Method::Ties | Method::Adamerging
            );
            if needs_base {
                return Err(Error::config(
                    "base",
                    format!("method `{method}` needs --base (task vectors are relative to it)"),
                ));
            }
            experts[0].clone()
        }
    };
    let pool = ExpertPool {
        base: base_model,
        labels: (1..=experts.len()).collect(),
        experts,
    };
    let stream = cfg.load_stream()?;
    let outcome = evaluate_pool(method, &pool, &stream, cfg)?;

    std::fs::create_dir_all(out)?;
    let model_path = versioned_path(out, &format!("merged_{method}"), "json");
    save_model(&model_path, &outcome.final_model, None, None)?;
    let report_path = versioned_path(out, &format!("report_merge_{method}"), "json");
    let doc = RunDocument {
        config: cfg.clone(),
        report: outcome.report.clone(),
    };
    std::fs::write(&report_path, serde_json::to_string_pretty(&doc)?)?;
    Ok(MergeArtifacts {
        model_path,
        report_path,
        report: outcome.report,
    })
}

/// Aggregate a ready pool and evaluate it on every test set of the stream.
pub fn evaluate_pool(
    method: Method,
    pool: &ExpertPool,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
) -> Result<crate::continual::StreamOutcome> {
    evaluate_pool_impl(method, pool, stream, cfg, cfg.seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalScores {
    pub samples: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub positive_class: usize,
}

/// `eval`: scores a serialized model on every row of a CSV file.
pub fn cmd_eval(model_path: &Path, data_path: &Path, positive: usize) -> Result<EvalScores> {
    let (model, _, residual) = load_model(model_path)?;
    let schema = CsvSchema {
        feature_dim: model.input_dim(),
        num_classes: model.output_dim(),
        fractions: [0.34, 0.33, 0.33],
        seed: 0,
        domain_id: 0,
    };
    let data = load_csv(data_path, &schema)?;
    let snap = match residual {
        Some(stack) => Snapshot::WithStack(model, stack),
        None => Snapshot::Plain(model),
    };
    let mut preds = Vec::with_capacity(data.features.len());
    for x in &data.features {
        preds.push(snap.predict(x)?);
    }
    let correct = preds
        .iter()
        .zip(data.labels.iter())
        .filter(|(p, y)| p == y)
        .count();
    Ok(EvalScores {
        samples: preds.len(),
        accuracy: correct as f64 / preds.len() as f64,
        f1: f1(&preds, &data.labels, positive)?,
        positive_class: positive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Prop1,
    Prop2,
    Bound,
    Plasticity,
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prop1" => Ok(ProbeKind::Prop1),
            "prop2" => Ok(ProbeKind::Prop2),
            "bound" => Ok(ProbeKind::Bound),
            "plasticity" => Ok(ProbeKind::Plasticity),
            other => Err(Error::config(
                "probe",
                format!("unknown probe `{other}` (prop1|prop2|bound|plasticity)"),
            )),
        }
    }
}

/// `diagnose`: runs one verification probe and writes its JSON output.
pub fn cmd_diagnose(cfg: &ExperimentConfig, probe: ProbeKind, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let (stem, json) = match probe {
        ProbeKind::Prop1 => {
            let report = crate::diagnostics::interference_scaling_probe(
                &[4],
                &[64, 256, 1024],
                16,
                2000,
                cfg.seed,
            )?;
            ("probe_prop1", serde_json::to_string_pretty(&report)?)
        }
        ProbeKind::Prop2 => {
            let report =
                crate::diagnostics::isometry_probe(1024, 8, 16, 1000, 0.15, cfg.seed)?;
            ("probe_prop2", serde_json::to_string_pretty(&report)?)
        }
        ProbeKind::Bound | ProbeKind::Plasticity => {
            let stream = cfg.load_stream()?;
            let mut run_cfg = cfg.clone();
            run_cfg.method = Method::Retrofit;
            let outcome =
                run_stream_checkpointed(Method::Retrofit, &stream, &run_cfg, cfg.seed, None, false)?;
            let run = outcome.run.expect("sequential run");
            let diag = crate::diagnostics::bound_report(&run, &stream)?;
            let stem = if probe == ProbeKind::Bound {
                "probe_bound"
            } else {
                "probe_plasticity"
            };
            (stem, serde_json::to_string_pretty(&diag)?)
        }
    };
    let path = versioned_path(out, stem, "json");
    std::fs::write(&path, json)?;
    Ok(path)
}

/// `report`: aggregates run documents under a directory into one flat CSV.
pub fn cmd_report(input_dir: &Path, out_csv: &Path) -> Result<usize> {
    let mut rows = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(input_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("report_"))
        })
        .collect();
    entries.sort();
    for path in &entries {
        let doc: RunDocument = match serde_json::from_str(&std::fs::read_to_string(path)?) {
            Ok(doc) => doc,
            Err(_) => continue, // not a run document
        };
        let r = &doc.report;
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            r.method,
            r.seed,
            r.slots,
            r.aut.map_or(String::from(""), |v| v.to_string()),
            r.ptr.map_or(String::from(""), |v| v.to_string()),
            r.xrep.map_or(String::from(""), |v| v.to_string()),
            r.f_current
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        ));
    }
    let mut csv = String::from("method,seed,slots,aut,ptr,xrep,f_per_slot\n");
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    std::fs::write(out_csv, csv)?;
    Ok(rows.len())
}
