//! Domain-incremental continual learning with bounded forgetting.
//!
//! The running classifier is adapted to each new domain through a masked
//! low-rank update ΔW = A(M⊙B) — a frozen random down-projection A, a
//! task-trained expansion B, and a learnable mask M — merged into the model
//! under confidence-driven keep-and-gain arbitration: the old model teaches
//! wherever it is confident, the newly adapted model teaches elsewhere, and
//! a sparse group lasso keeps per-task updates on small, mostly disjoint
//! supports. The crate also ships the sequential baselines (CFT, LwF,
//! PODNet-1D, Co²L, residual adapters), model-preserving baselines
//! (ensembles, weight averaging, task arithmetic, TIES, entropy-minimizing
//! coefficient merging), evaluation metrics (F1, AUT, PTR, XRep), seeded
//! drift generators, and probes that verify the interference and
//! forgetting bounds empirically.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example generate_streams
//! cargo run --release --example train_retrofit
//! cargo run --release --example compare_methods
//! cargo run --release --example merge_experts
//! cargo run --release --example verify_bounds
//! ```
//!
//! or the `keepgain` binary (`generate`, `train`, `merge`, `eval`,
//! `diagnose`, `report` subcommands).

pub mod adapters;
pub mod arbitration;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod continual;
pub mod datastream;
pub mod diagnostics;
pub mod error;
pub mod merging;
pub mod metrics;
pub mod model_io;
pub mod numerics;

pub use adapters::{init_mask, merge, new_adapter_set, AdapterSet, MaskInit, MaskedLowRankAdapter};
pub use arbitration::{ArbitrationConfig, ArbitrationMode, ConfidencePair, Divergence};
pub use backbone::{ForwardTrace, Materialized, ModelParams, Optimizer, OptimizerKind};
pub use config::{ExperimentConfig, Method};
pub use continual::{
    run_stream, run_stream_checkpointed, train_supervised, AuxLoss, ContinualRun, Snapshot,
    StreamOutcome,
};
pub use datastream::{
    generate_representation_stream, generate_temporal_stream, DomainDataset, DriftSpec,
    StreamKind, TaskStream,
};
pub use error::{Error, Result};
pub use merging::{
    adamerging, ensemble_average, ensemble_vote, task_arithmetic, ties_merge, weight_average,
    ExpertPool, MergeCoefficients,
};
pub use metrics::{aut, f1, model_preserving_ptr, ptr, xrep, DriftDiagnostics, MetricsReport};
pub use numerics::{Matrix, SeededRng};
