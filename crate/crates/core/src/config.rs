//! Experiment configuration: one JSON document, validated before any run,
//! with unknown keys rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::MaskInit;
use crate::arbitration::{ArbitrationConfig, Divergence};
use crate::backbone::OptimizerKind;
use crate::datastream::DriftSpec;
use crate::error::{Error, Result};

/// Method ids accepted by `train` and `merge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Retrofit,
    Cft,
    Lwf,
    Podnet,
    Co2l,
    Resadapt,
    Base,
    Oracle,
    Vote,
    SoftAvg,
    WeightAvg,
    TaskArith,
    Ties,
    Adamerging,
}

impl Method {
    pub const ALL: [Method; 14] = [
        Method::Retrofit,
        Method::Cft,
        Method::Lwf,
        Method::Podnet,
        Method::Co2l,
        Method::Resadapt,
        Method::Base,
        Method::Oracle,
        Method::Vote,
        Method::SoftAvg,
        Method::WeightAvg,
        Method::TaskArith,
        Method::Ties,
        Method::Adamerging,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Method::Retrofit => "retrofit",
            Method::Cft => "cft",
            Method::Lwf => "lwf",
            Method::Podnet => "podnet",
            Method::Co2l => "co2l",
            Method::Resadapt => "resadapt",
            Method::Base => "base",
            Method::Oracle => "oracle",
            Method::Vote => "vote",
            Method::SoftAvg => "soft_avg",
            Method::WeightAvg => "weight_avg",
            Method::TaskArith => "task_arith",
            Method::Ties => "ties",
            Method::Adamerging => "adamerging",
        }
    }

    /// True for methods that aggregate independently trained experts
    /// instead of updating one running model.
    pub fn is_model_preserving(&self) -> bool {
        matches!(
            self,
            Method::Vote
                | Method::SoftAvg
                | Method::WeightAvg
                | Method::TaskArith
                | Method::Ties
                | Method::Adamerging
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method id `{s}`")))
    }
}

/// Classifier architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Class reported as positive by F1.
    pub positive_class: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            hidden: vec![64, 32],
            classes: 2,
            positive_class: 1,
        }
    }
}

impl BackboneConfig {
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.classes);
        dims
    }
}

/// Optimization schedule shared by every training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Learning rate of the mask phase.
    pub mask_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub mask_epochs: usize,
    /// Early-stopping patience (epochs without validation improvement).
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            mask_lr: 1e-2,
            batch_size: 64,
            max_epochs: 60,
            mask_epochs: 40,
            patience: 5,
        }
    }
}

/// Masked low-rank adapter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub rank: usize,
    pub mask_ratio: f64,
    pub mask_init: MaskInit,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            rank: 8,
            mask_ratio: 0.01,
            mask_init: MaskInit::TopRatio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LwfConfig {
    pub temperature: f64,
    pub lambda_ce: f64,
    pub lambda_kd: f64,
}

impl Default for LwfConfig {
    fn default() -> Self {
        LwfConfig {
            temperature: 2.0,
            lambda_ce: 1.0,
            lambda_kd: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PodnetConfig {
    pub lambda_ce: f64,
    pub lambda_kd: f64,
    /// Activations per pooling chunk.
    pub chunk: usize,
}

impl Default for PodnetConfig {
    fn default() -> Self {
        PodnetConfig {
            lambda_ce: 1.0,
            lambda_kd: 1.0,
            chunk: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Co2lConfig {
    pub lambda_ce: f64,
    pub lambda_con: f64,
    pub lambda_ird: f64,
    pub temp_con: f64,
    pub temp_ird: f64,
}

impl Default for Co2lConfig {
    fn default() -> Self {
        Co2lConfig {
            lambda_ce: 1.0,
            lambda_con: 1.0,
            lambda_ird: 0.5,
            temp_con: 0.1,
            temp_ird: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResadaptConfig {
    pub bottleneck: usize,
}

impl Default for ResadaptConfig {
    fn default() -> Self {
        ResadaptConfig { bottleneck: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesConfig {
    pub lwf: LwfConfig,
    pub podnet: PodnetConfig,
    pub co2l: Co2lConfig,
    pub resadapt: ResadaptConfig,
}

/// Expert aggregation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergingConfig {
    /// Scaling of summed task vectors (task arithmetic, TIES).
    pub alpha: f64,
    /// TIES trim percentage K ∈ (0, 100].
    pub ties_top_percent: f64,
    pub adamerging_steps: usize,
    pub adamerging_lr: f64,
    /// TIES-trim task vectors before coefficient learning (the "++" mode).
    pub adamerging_ties_preprocess: bool,
}

impl Default for MergingConfig {
    fn default() -> Self {
        MergingConfig {
            alpha: 0.3,
            ties_top_percent: 5.0,
            adamerging_steps: 500,
            adamerging_lr: 1e-2,
            adamerging_ties_preprocess: false,
        }
    }
}

/// Where the task stream comes from: an inline generator spec or a manifest
/// of CSV files. Exactly one must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSource {
    pub spec: Option<DriftSpec>,
    pub manifest: Option<PathBuf>,
}

/// The whole experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub training: TrainingConfig,
    pub adapter: AdapterConfig,
    pub arbitration: ArbitrationConfig,
    pub baselines: BaselinesConfig,
    pub merging: MergingConfig,
    pub stream: StreamSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Retrofit,
            seed: 7,
            backbone: BackboneConfig::default(),
            training: TrainingConfig::default(),
            adapter: AdapterConfig::default(),
            arbitration: ArbitrationConfig::classification_profile(),
            baselines: BaselinesConfig::default(),
            merging: MergingConfig::default(),
            stream: StreamSource {
                spec: Some(DriftSpec::temporal_benchmark()),
                manifest: None,
            },
        }
    }
}

impl ExperimentConfig {
    /// The committed temporal benchmark profile: the 5-domain drift stream
    /// with hard/KL arbitration. The quantile level sits above the package
    /// default so that "confident" means the upper mode of the bimodal
    /// old-teacher confidence distribution on drifted domains.
    pub fn temporal_benchmark() -> Self {
        let mut cfg = ExperimentConfig {
            method: Method::Retrofit,
            seed: 3,
            ..ExperimentConfig::default()
        };
        cfg.arbitration.quantile_alpha = 0.25;
        cfg.stream.spec = Some(DriftSpec::temporal_benchmark());
        cfg
    }

    /// The committed representation-shift benchmark profile: 3 degradation
    /// levels with soft arbitration over penultimate features and a full
    /// mask start.
    pub fn representation_benchmark() -> Self {
        let mut cfg = ExperimentConfig {
            method: Method::Retrofit,
            seed: 7,
            ..ExperimentConfig::default()
        };
        cfg.arbitration = crate::arbitration::ArbitrationConfig::soft_profile();
        cfg.arbitration.quantile_alpha = 0.25;
        // Confidences and thresholds both live in [0,1], which compresses
        // the raw gate range; a steeper slope restores a usable gate.
        cfg.arbitration.gate_slope = 4.0;
        cfg.adapter.mask_ratio = 1.0;
        cfg.stream.spec = Some(DriftSpec::representation_benchmark());
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.classes < 2 {
            return Err(Error::config("backbone.classes", "need at least 2 classes"));
        }
        if self.backbone.positive_class >= self.backbone.classes {
            return Err(Error::config(
                "backbone.positive_class",
                "must name an existing class",
            ));
        }
        if self.training.lr <= 0.0 || self.training.mask_lr <= 0.0 {
            return Err(Error::config("training.lr", "learning rates must be positive"));
        }
        if self.training.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        if self.training.max_epochs == 0 {
            return Err(Error::config("training.max_epochs", "must be positive"));
        }
        if self.adapter.rank == 0 {
            return Err(Error::config("adapter.rank", "must be at least 1"));
        }
        if !(self.adapter.mask_ratio > 0.0 && self.adapter.mask_ratio <= 1.0) {
            return Err(Error::config("adapter.mask_ratio", "must lie in (0, 1]"));
        }
        self.arbitration.validate()?;
        if matches!(self.arbitration.divergence, Divergence::LatentMse)
            && self.backbone.hidden.is_empty()
        {
            return Err(Error::config(
                "arbitration.divergence",
                "latent_mse needs at least one hidden layer",
            ));
        }
        if !(self.merging.ties_top_percent > 0.0 && self.merging.ties_top_percent <= 100.0) {
            return Err(Error::config(
                "merging.ties_top_percent",
                "must lie in (0, 100]",
            ));
        }
        match (&self.stream.spec, &self.stream.manifest) {
            (Some(spec), None) => spec.validate()?,
            (None, Some(_)) => {}
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "stream",
                    "set either `spec` or `manifest`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config("stream", "one of `spec` or `manifest` required"))
            }
        }
        Ok(())
    }

    /// Resolves the configured stream (generating or loading it).
    pub fn load_stream(&self) -> Result<crate::datastream::TaskStream> {
        match (&self.stream.spec, &self.stream.manifest) {
            (Some(spec), None) => crate::datastream::generate_stream(spec),
            (None, Some(path)) => crate::datastream::load_stream(path),
            _ => Err(Error::config("stream", "exactly one source required")),
        }
    }
}
