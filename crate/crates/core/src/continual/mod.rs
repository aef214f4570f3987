//! Task-sequence orchestration: the masked low-rank merge method plus the
//! sequential baselines and the base/oracle anchors.
//!
//! The protocol matches the year-over-year deployment: slot 1 trains the
//! base model with plain supervision; every later slot adapts the running
//! model with the selected method and is followed by evaluation on all past
//! and current test sets. Per-task randomness comes from substreams derived
//! from (seed, slot), so a resumed run replays a fresh one exactly.

mod baselines;
mod resadapt;

pub use baselines::{Co2lLoss, LwfLoss, PodnetLoss};
pub use resadapt::{resadapt_backward, resadapt_forward, ResadaptTrace, ResidualAdapterStack};

use serde::{Deserialize, Serialize};

use crate::adapters::{init_mask, merge, new_adapter_set, AdapterSet};
use crate::arbitration::{
    calibrate_threshold, evaluate_teachers, mask_loss_and_grad, mask_training_step,
    ArbitrationConfig, Divergence, LossComponents, TauMode, TeacherEval, Thresholds,
};
use crate::backbone::{
    argmax, backward_into, cross_entropy, model_param_sizes, model_param_slices, GradTarget,
    Gradients, Materialized, ModelParams, Optimizer, Upstream,
};
use crate::config::{ExperimentConfig, Method, TrainingConfig};
use crate::datastream::{SplitView, StreamKind, TaskStream};
use crate::error::{Error, Result};
use crate::metrics::{f1, MetricsReport, TaskLogSummary};
use crate::numerics::{frobenius_norm, kl_div_clamped, softmax, squared_distance, Matrix, SeededRng};

// Substream layout: slot-scoped phases so resuming replays byte-identically.
const STREAM_INIT: u64 = 10;
const PHASE_ADAPTER: u64 = 0;
const PHASE_B_SHUFFLE: u64 = 1;
const PHASE_MASK_SHUFFLE: u64 = 2;
const PHASE_FIT_SHUFFLE: u64 = 3;
const PHASE_RESADAPT: u64 = 4;
const PHASE_EXPERT: u64 = 5;

pub(crate) fn task_stream_id(slot: usize, phase: u64) -> u64 {
    1000 + slot as u64 * 16 + phase
}

/// Prediction snapshot after one slot; resadapt snapshots carry the stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Snapshot {
    Plain(ModelParams),
    WithStack(ModelParams, ResidualAdapterStack),
}

impl Snapshot {
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Snapshot::Plain(m) => m.probabilities(x),
            Snapshot::WithStack(m, stack) => {
                Ok(softmax(resadapt_forward(m, stack, x)?.logits()))
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.probabilities(x)?))
    }
}

/// Per-task record kept by a run; method phases fill what applies to them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskLog {
    pub domain_id: usize,
    pub epochs_adapt: usize,
    pub epochs_mask: usize,
    /// ‖(M⊙B)^(ℓ)‖_F per layer (merge method only).
    pub energy_per_layer: Vec<f64>,
    /// ‖ΔW^(ℓ)‖_F per layer.
    pub delta_norm_per_layer: Vec<f64>,
    /// Merged coefficients M⊙B per layer, kept for overlap diagnostics.
    pub masked_coeffs: Vec<Matrix>,
    /// Per-layer (d_in, rank) of the adapters.
    pub layer_ranks: Vec<(usize, usize)>,
    pub arbitration_tightness: Option<f64>,
    pub mask_density: Option<f64>,
    pub final_losses: Option<LossComponents>,
    /// Max |logit difference| between the merged model and the
    /// adapter-attached model over 100 seeded random inputs, recorded at
    /// merge time.
    pub merge_consistency: Option<f64>,
}

impl TaskLog {
    pub fn energy(&self) -> f64 {
        self.energy_per_layer.iter().sum()
    }

    pub fn summary(&self) -> TaskLogSummary {
        TaskLogSummary {
            domain_id: self.domain_id,
            energy: if self.energy_per_layer.is_empty() {
                None
            } else {
                Some(self.energy())
            },
            energy_per_layer: if self.energy_per_layer.is_empty() {
                None
            } else {
                Some(self.energy_per_layer.clone())
            },
            delta_norm_per_layer: if self.delta_norm_per_layer.is_empty() {
                None
            } else {
                Some(self.delta_norm_per_layer.clone())
            },
            arbitration_tightness: self.arbitration_tightness,
            mask_density: self.mask_density,
            final_losses: self.final_losses,
            merge_consistency: self.merge_consistency,
            epochs_adapt: self.epochs_adapt,
            epochs_mask: self.epochs_mask,
        }
    }
}

/// One sequential run: the running model, per-task logs, and per-slot
/// prediction snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinualRun {
    pub method: Method,
    pub seed: u64,
    /// The running model θ_prev.
    pub model: ModelParams,
    /// The slot-1 model θ_base.
    pub base_model: ModelParams,
    pub resadapt: Option<ResidualAdapterStack>,
    pub task_logs: Vec<TaskLog>,
    pub snapshots: Vec<Snapshot>,
}

impl ContinualRun {
    pub fn current_snapshot(&self) -> Snapshot {
        match &self.resadapt {
            Some(stack) => Snapshot::WithStack(self.model.clone(), stack.clone()),
            None => Snapshot::Plain(self.model.clone()),
        }
    }
}

/// Early stopping on a validation objective with best-state restoration.
struct EarlyStop<S> {
    best_loss: f64,
    best_state: S,
    patience: usize,
    strikes: usize,
}

impl<S: Clone> EarlyStop<S> {
    fn new(patience: usize, initial_loss: f64, initial: &S) -> Self {
        EarlyStop {
            best_loss: initial_loss,
            best_state: initial.clone(),
            patience,
            strikes: 0,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, loss: f64, state: &S) -> bool {
        if loss < self.best_loss - 1e-9 {
            self.best_loss = loss;
            self.best_state = state.clone();
            self.strikes = 0;
            false
        } else {
            self.strikes += 1;
            self.strikes >= self.patience
        }
    }

    fn into_best(self) -> S {
        self.best_state
    }
}

/// A loss term added to cross-entropy during full fine-tuning (distillation
/// baselines). Returns the batch's aux value and per-sample upstream
/// additions, fully scaled (weights and 1/batch included).
pub trait AuxLoss {
    fn batch_terms(
        &self,
        traces: &[crate::backbone::ForwardTrace],
        ys: &[usize],
    ) -> Result<(f64, Vec<Upstream>)>;
}

fn merge_upstream(into: &mut Upstream, add: Upstream) {
    for (a, b) in into.logits.iter_mut().zip(add.logits.iter()) {
        *a += b;
    }
    for (layer, inj) in add.hidden.into_iter().enumerate() {
        if let Some(g) = inj {
            *into = std::mem::replace(
                into,
                Upstream {
                    logits: Vec::new(),
                    hidden: Vec::new(),
                },
            )
            .with_hidden(layer, g);
        }
    }
}

/// Mean objective (ce_weight·CE + aux) of a model on a split.
fn full_objective(
    model: &ModelParams,
    split: &SplitView,
    ce_weight: f64,
    aux: Option<&dyn AuxLoss>,
) -> Result<f64> {
    let mat = Materialized::plain(model);
    let mut traces = Vec::with_capacity(split.len());
    let mut ce = 0.0;
    for (x, &y) in split.xs.iter().zip(split.ys.iter()) {
        let trace = mat.forward(x)?;
        ce += cross_entropy(trace.logits(), y)?.0;
        traces.push(trace);
    }
    let mut total = ce_weight * ce / split.len() as f64;
    if let Some(aux) = aux {
        total += aux.batch_terms(&traces, &split.ys)?.0;
    }
    if !total.is_finite() {
        return Err(Error::training(None, "validation objective is not finite"));
    }
    Ok(total)
}

/// Full-parameter fine-tuning with early stopping; the workhorse behind
/// base training, the anchors, and every distillation baseline.
pub(crate) fn fit_full(
    start: &ModelParams,
    train: &SplitView,
    valid: &SplitView,
    tp: &TrainingConfig,
    ce_weight: f64,
    aux: Option<&dyn AuxLoss>,
    rng: &mut SeededRng,
    task: Option<usize>,
) -> Result<(ModelParams, usize)> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::training(task, "empty train or valid split"));
    }
    let mut model = start.clone();
    let mut opt = Optimizer::new(tp.optimizer, tp.lr, &model_param_sizes(&model));
    let initial = full_objective(&model, valid, ce_weight, aux)
        .map_err(|e| with_task(e, task))?;
    let mut stop = EarlyStop::new(tp.patience, initial, &model);
    let mut epochs = 0;

    for _ in 0..tp.max_epochs {
        epochs += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(tp.batch_size) {
            let mat = Materialized::plain(&model);
            let n = chunk.len() as f64;
            let mut traces = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                traces.push(mat.forward(&train.xs[i])?);
                ys.push(train.ys[i]);
            }
            let mut upstreams: Vec<Upstream> = Vec::with_capacity(chunk.len());
            for (trace, &y) in traces.iter().zip(ys.iter()) {
                let (_, grad) = cross_entropy(trace.logits(), y)?;
                upstreams.push(Upstream::from_logits(
                    grad.iter().map(|g| ce_weight * g / n).collect(),
                ));
            }
            if let Some(aux) = aux {
                let (_, adds) = aux.batch_terms(&traces, &ys)?;
                for (u, add) in upstreams.iter_mut().zip(adds.into_iter()) {
                    merge_upstream(u, add);
                }
            }
            let mut grads = Gradients::zeros(&mat, GradTarget::Full);
            for (trace, up) in traces.iter().zip(upstreams.iter()) {
                backward_into(&mat, trace, up, GradTarget::Full, &mut grads)?;
            }
            let grad_slices = grads.flat_slices();
            let mut params = model_param_slices(&mut model);
            opt.step(&mut params, &grad_slices)
                .map_err(|e| with_task(e, task))?;
        }
        let vloss =
            full_objective(&model, valid, ce_weight, aux).map_err(|e| with_task(e, task))?;
        if stop.observe(vloss, &model) {
            break;
        }
    }
    Ok((stop.into_best(), epochs))
}

fn with_task(e: Error, task: Option<usize>) -> Error {
    match (e, task) {
        (Error::Training { message, .. }, Some(t)) => Error::training(Some(t), message),
        (e, _) => e,
    }
}

fn adapter_param_sizes(set: &AdapterSet) -> Vec<usize> {
    set.adapters
        .iter()
        .flat_map(|a| [a.b.data.len(), a.bias_delta.len()])
        .collect()
}

fn adapter_objective(model: &ModelParams, set: &AdapterSet, valid: &SplitView) -> Result<f64> {
    let mat = Materialized::with_adapters(model, set);
    let mut ce = 0.0;
    for (x, &y) in valid.xs.iter().zip(valid.ys.iter()) {
        ce += cross_entropy(mat.forward(x)?.logits(), y)?.0;
    }
    Ok(ce / valid.len() as f64)
}

/// Trains B and the bias offsets of a fresh adapter set on the current
/// task, with θ_prev and A frozen. Restores the best-validation state.
pub(crate) fn fit_adapter_b(
    model: &ModelParams,
    set: &mut AdapterSet,
    train: &SplitView,
    valid: &SplitView,
    tp: &TrainingConfig,
    rng: &mut SeededRng,
    task: Option<usize>,
) -> Result<usize> {
    let mut opt = Optimizer::new(tp.optimizer, tp.lr, &adapter_param_sizes(set));
    let initial = adapter_objective(model, set, valid)?;
    let mut stop = EarlyStop::new(tp.patience, initial, set);
    let mut epochs = 0;

    for _ in 0..tp.max_epochs {
        epochs += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(tp.batch_size) {
            let mat = Materialized::with_adapters(model, set);
            let n = chunk.len() as f64;
            let mut grads = Gradients::zeros(&mat, GradTarget::AdapterB(set));
            for &i in chunk {
                let trace = mat.forward(&train.xs[i])?;
                let (_, grad) = cross_entropy(trace.logits(), train.ys[i])?;
                let up = Upstream::from_logits(grad.iter().map(|g| g / n).collect());
                backward_into(&mat, &trace, &up, GradTarget::AdapterB(set), &mut grads)?;
            }
            let grad_slices = grads.flat_slices();
            let mut params: Vec<&mut [f64]> = set
                .adapters
                .iter_mut()
                .flat_map(|a| [a.b.data.as_mut_slice(), a.bias_delta.as_mut_slice()])
                .collect();
            opt.step(&mut params, &grad_slices)
                .map_err(|e| with_task(e, task))?;
        }
        let vloss = adapter_objective(model, set, valid).map_err(|e| with_task(e, task))?;
        if stop.observe(vloss, set) {
            break;
        }
    }
    *set = stop.into_best();
    Ok(epochs)
}

fn gather(
    teachers: &[TeacherEval],
    pool: &SplitView,
    idx: &[usize],
) -> (Vec<TeacherEval>, Vec<Vec<f64>>, Vec<usize>) {
    let t = idx.iter().map(|&i| teachers[i].clone()).collect();
    let xs = idx.iter().map(|&i| pool.xs[i].clone()).collect();
    let ys = idx.iter().map(|&i| pool.ys[i]).collect();
    (t, xs, ys)
}

/// Mask training to convergence of the composite objective, early-stopped
/// on the validation part of the pool.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_mask(
    model: &ModelParams,
    set: &mut AdapterSet,
    teachers: &[TeacherEval],
    pool: &SplitView,
    valid_start: usize,
    acfg: &ArbitrationConfig,
    tp: &TrainingConfig,
    rng: &mut SeededRng,
    task: Option<usize>,
) -> Result<(usize, LossComponents)> {
    let mask_sizes: Vec<usize> = set.adapters.iter().map(|a| a.b.data.len()).collect();
    let mut opt = Optimizer::new(tp.optimizer, tp.mask_lr, &mask_sizes);
    let valid_idx: Vec<usize> = (valid_start..pool.len()).collect();
    let (vt, vx, vy) = gather(teachers, pool, &valid_idx);
    let objective = |s: &AdapterSet| -> Result<f64> {
        Ok(mask_loss_and_grad(model, s, &vt, &vx, &vy, acfg)?.0.total(acfg))
    };
    let initial = objective(set).map_err(|e| with_task(e, task))?;
    let mut stop = EarlyStop::new(tp.patience, initial, set);
    let mut epochs = 0;
    let mut last = LossComponents::default();

    for _ in 0..tp.mask_epochs {
        epochs += 1;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(tp.batch_size) {
            let (bt, bx, by) = gather(teachers, pool, chunk);
            last = mask_training_step(model, set, &bt, &bx, &by, acfg, &mut opt)
                .map_err(|e| with_task(e, task))?;
        }
        let vloss = objective(set).map_err(|e| with_task(e, task))?;
        if stop.observe(vloss, set) {
            break;
        }
    }
    *set = stop.into_best();
    Ok((epochs, last))
}

/// Max arbitration divergence between the trained student and the old
/// teacher on samples where the old teacher is confident: the measured
/// tightness δ̂ of this task.
fn measure_tightness(
    model: &ModelParams,
    set: &AdapterSet,
    teachers: &[TeacherEval],
    pool: &SplitView,
    acfg: &ArbitrationConfig,
) -> Result<Option<f64>> {
    let student = Materialized::with_adapters(model, set);
    let mut worst: Option<f64> = None;
    for (t, x) in teachers.iter().zip(pool.xs.iter()) {
        if !t.conf_old.confident() {
            continue;
        }
        let trace = student.forward(x)?;
        let d = match acfg.divergence {
            Divergence::Kl => kl_div_clamped(&softmax(trace.logits()), &t.prob_old),
            Divergence::LatentMse => squared_distance(trace.penultimate(), &t.latent_old),
        };
        worst = Some(worst.map_or(d, |w: f64| w.max(d)));
    }
    Ok(worst)
}

fn mask_density(set: &AdapterSet) -> f64 {
    let mut nonzero = 0usize;
    let mut total = 0usize;
    for a in &set.adapters {
        if let Some(m) = &a.mask {
            nonzero += m.data.iter().filter(|v| v.abs() > 1e-8).count();
            total += m.data.len();
        }
    }
    if total == 0 {
        0.0
    } else {
        nonzero as f64 / total as f64
    }
}

/// One full task of the merge method: adapt B, arbitrate, learn the mask,
/// merge into the running model.
pub fn retrofit_task(
    run: &mut ContinualRun,
    data: &crate::datastream::DomainDataset,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    let train = data.train();
    let valid = data.valid();
    if train.is_empty() || valid.is_empty() {
        return Err(Error::training(Some(slot), "task data is empty"));
    }

    // (1) Fresh adapters; B trained on the current task, θ_prev and A frozen.
    let mut rng_a = SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_ADAPTER));
    let mut set = new_adapter_set(&run.model, cfg.adapter.rank, &mut rng_a)?;
    set.task_index = slot;
    let mut rng_b = SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_B_SHUFFLE));
    let epochs_adapt =
        fit_adapter_b(&run.model, &mut set, &train, &valid, &cfg.training, &mut rng_b, Some(slot))?;

    // (2) Teachers and calibrated thresholds on the validation split.
    let f_old = Materialized::plain(&run.model);
    let f_new = Materialized::with_adapters(&run.model, &set);
    let alpha = cfg.arbitration.quantile_alpha;
    let classes = cfg.backbone.classes;
    let tau_old: Thresholds =
        calibrate_threshold(&f_old, &valid.xs, &valid.ys, alpha, classes, TauMode::Auto)?;
    let tau_new: Thresholds =
        calibrate_threshold(&f_new, &valid.xs, &valid.ys, alpha, classes, TauMode::Auto)?;

    // (3) Mask init then training on train ∪ valid.
    init_mask(&mut set, cfg.adapter.mask_ratio, cfg.adapter.mask_init)?;
    let pool = data.train_valid();
    let teachers = evaluate_teachers(&f_old, &f_new, &tau_old, &tau_new, &pool.xs, &pool.ys)?;
    let mut rng_m = SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_MASK_SHUFFLE));
    let (epochs_mask, final_losses) = fit_mask(
        &run.model,
        &mut set,
        &teachers,
        &pool,
        train.len(),
        &cfg.arbitration,
        &cfg.training,
        &mut rng_m,
        Some(slot),
    )?;

    let tightness = measure_tightness(&run.model, &set, &teachers, &pool, &cfg.arbitration)?;

    // (4) Merge and log; the adapter set is dropped, the model stays O(1).
    let mut log = TaskLog {
        domain_id: data.domain_id,
        epochs_adapt,
        epochs_mask,
        arbitration_tightness: tightness,
        mask_density: Some(mask_density(&set)),
        final_losses: Some(final_losses),
        ..TaskLog::default()
    };
    for adapter in &set.adapters {
        let coeff = adapter.effective_coeff();
        log.energy_per_layer.push(frobenius_norm(&coeff));
        log.delta_norm_per_layer.push(frobenius_norm(&adapter.delta()));
        log.layer_ranks.push((adapter.a.rows, adapter.rank));
        log.masked_coeffs.push(coeff);
    }
    let merged = merge(&run.model, &set);
    log.merge_consistency = Some(merge_consistency_check(&run.model, &set, &merged, slot)?);
    run.model = merged;
    run.task_logs.push(log);
    Ok(())
}

/// Max absolute logit difference between the merged model and the
/// adapter-attached model over 100 seeded random inputs.
fn merge_consistency_check(
    prev: &ModelParams,
    set: &AdapterSet,
    merged: &ModelParams,
    slot: usize,
) -> Result<f64> {
    let attached = Materialized::with_adapters(prev, set);
    let mut rng = SeededRng::with_stream(set.task_index as u64, task_stream_id(slot, 7));
    let d = prev.input_dim();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        let a = merged.forward(&x)?;
        let b = attached.forward(&x)?;
        for (u, v) in a.logits().iter().zip(b.logits().iter()) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

/// Naive sequential fine-tuning on the current task.
pub fn cft_task(
    run: &mut ContinualRun,
    data: &crate::datastream::DomainDataset,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    let mut rng = SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_FIT_SHUFFLE));
    let (model, epochs) = fit_full(
        &run.model,
        &data.train(),
        &data.valid(),
        &cfg.training,
        1.0,
        None,
        &mut rng,
        Some(slot),
    )?;
    run.model = model;
    run.task_logs.push(TaskLog {
        domain_id: data.domain_id,
        epochs_adapt: epochs,
        ..TaskLog::default()
    });
    Ok(())
}

fn distill_task(
    run: &mut ContinualRun,
    data: &crate::datastream::DomainDataset,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    let teacher = Materialized::plain(&run.model);
    let (aux, ce_weight): (Box<dyn AuxLoss>, f64) = match run.method {
        Method::Lwf => (
            Box::new(LwfLoss::new(teacher, &cfg.baselines.lwf)),
            cfg.baselines.lwf.lambda_ce,
        ),
        Method::Podnet => (
            Box::new(PodnetLoss::new(teacher, &cfg.baselines.podnet)),
            cfg.baselines.podnet.lambda_ce,
        ),
        Method::Co2l => (
            Box::new(Co2lLoss::new(teacher, &cfg.baselines.co2l)),
            cfg.baselines.co2l.lambda_ce,
        ),
        m => return Err(Error::training(Some(slot), format!("not a distillation method: {m}"))),
    };
    let mut rng = SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_FIT_SHUFFLE));
    let (model, epochs) = fit_full(
        &run.model,
        &data.train(),
        &data.valid(),
        &cfg.training,
        ce_weight,
        Some(aux.as_ref()),
        &mut rng,
        Some(slot),
    )?;
    run.model = model;
    run.task_logs.push(TaskLog {
        domain_id: data.domain_id,
        epochs_adapt: epochs,
        ..TaskLog::default()
    });
    Ok(())
}

/// Logit distillation against the frozen previous model.
pub fn lwf_task(
    run: &mut ContinualRun,
    data: &crate::datastream::DomainDataset,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    debug_assert_eq!(run.method, Method::Lwf);
    distill_task(run, data, cfg, slot)
}

/// Chunk-pooled hidden-feature alignment against the frozen previous model.
pub fn podnet1d_task(
    run: &mut ContinualRun,
    data: &crate::datastream::DomainDataset,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    debug_assert_eq!(run.method, Method::Podnet);
    distill_task(run, data, cfg, slot)
}

/// Supervised-contrastive learning plus instance-relation distillation.
pub fn co2l_task(
    run: &mut ContinualRun,
    data: &crate::datastream::DomainDataset,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    debug_assert_eq!(run.method, Method::Co2l);
    distill_task(run, data, cfg, slot)
}

/// Residual-adapter baseline: the base stays frozen after slot 1; a single
/// adapter stack is continually fine-tuned across tasks.
pub fn resadapt_task(
    run: &mut ContinualRun,
    data: &crate::datastream::DomainDataset,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    let mut stack = match run.resadapt.take() {
        Some(stack) => stack,
        None => {
            let mut rng =
                SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_RESADAPT));
            ResidualAdapterStack::new(&run.model, cfg.baselines.resadapt.bottleneck, &mut rng)?
        }
    };
    let mut rng = SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_FIT_SHUFFLE));
    let epochs = resadapt::fit_stack(
        &run.model,
        &mut stack,
        &data.train(),
        &data.valid(),
        &cfg.training,
        &mut rng,
        Some(slot),
    )?;
    run.resadapt = Some(stack);
    run.task_logs.push(TaskLog {
        domain_id: data.domain_id,
        epochs_adapt: epochs,
        ..TaskLog::default()
    });
    Ok(())
}

fn concat_views(views: &[SplitView]) -> SplitView {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for v in views {
        xs.extend(v.xs.iter().cloned());
        ys.extend(v.ys.iter().cloned());
    }
    SplitView { xs, ys }
}

/// Joint-training anchor: re-fit from θ_base on all data seen so far.
fn oracle_task(
    run: &mut ContinualRun,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
    slot: usize,
) -> Result<()> {
    let train: Vec<SplitView> = stream.domains[..slot].iter().map(|d| d.train()).collect();
    let valid: Vec<SplitView> = stream.domains[..slot].iter().map(|d| d.valid()).collect();
    let mut rng = SeededRng::with_stream(run.seed, task_stream_id(slot, PHASE_FIT_SHUFFLE));
    let (model, epochs) = fit_full(
        &run.base_model,
        &concat_views(&train),
        &concat_views(&valid),
        &cfg.training,
        1.0,
        None,
        &mut rng,
        Some(slot),
    )?;
    run.model = model;
    run.task_logs.push(TaskLog {
        domain_id: stream.domains[slot - 1].domain_id,
        epochs_adapt: epochs,
        ..TaskLog::default()
    });
    Ok(())
}

pub(crate) fn evaluate_f1(snapshot: &Snapshot, split: &SplitView, positive: usize) -> Result<f64> {
    let mut preds = Vec::with_capacity(split.len());
    for x in &split.xs {
        preds.push(snapshot.predict(x)?);
    }
    f1(&preds, &split.ys, positive)
}

/// Outcome of [`run_stream`]: the final model (plus residual stack when the
/// method uses one), the metrics report, and the run record for sequential
/// methods.
#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub final_model: ModelParams,
    pub resadapt: Option<ResidualAdapterStack>,
    pub report: MetricsReport,
    pub run: Option<ContinualRun>,
}

/// Plain supervised training (cross-entropy with early stopping) from an
/// arbitrary starting point; the single-domain building block behind the
/// anchors and expert training.
pub fn train_supervised(
    start: &ModelParams,
    train: &SplitView,
    valid: &SplitView,
    tp: &TrainingConfig,
    rng: &mut SeededRng,
) -> Result<ModelParams> {
    Ok(fit_full(start, train, valid, tp, 1.0, None, rng, None)?.0)
}

/// Trains the slot-1 base model from a seeded initialization.
pub fn train_base_model(
    stream: &TaskStream,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ModelParams> {
    let first = &stream.domains[0];
    let dims = cfg.backbone.dims(first.feature_dim());
    let mut rng_init = SeededRng::with_stream(seed, STREAM_INIT);
    let init = ModelParams::init(&dims, &mut rng_init)?;
    let mut rng = SeededRng::with_stream(seed, task_stream_id(1, PHASE_FIT_SHUFFLE));
    let (base, _) = fit_full(
        &init,
        &first.train(),
        &first.valid(),
        &cfg.training,
        1.0,
        None,
        &mut rng,
        Some(1),
    )?;
    Ok(base)
}

/// Per-slot checkpoint: the full run state plus scores so far. Because
/// every task derives its randomness from (seed, slot), resuming replays a
/// fresh run byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub slot: usize,
    pub run: ContinualRun,
    pub a_matrix: Vec<Vec<f64>>,
}

fn checkpoint_path(dir: &std::path::Path, slot: usize) -> std::path::PathBuf {
    dir.join(format!("checkpoint_slot_{slot:02}.json"))
}

fn write_checkpoint(
    dir: &std::path::Path,
    slot: usize,
    run: &ContinualRun,
    a_matrix: &[Vec<f64>],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let doc = Checkpoint {
        slot,
        run: run.clone(),
        a_matrix: a_matrix.to_vec(),
    };
    std::fs::write(checkpoint_path(dir, slot), serde_json::to_string(&doc)?)?;
    Ok(())
}

/// Latest checkpoint under `dir`, if any.
pub fn load_latest_checkpoint(dir: &std::path::Path) -> Result<Option<Checkpoint>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<Checkpoint> = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("checkpoint_slot_") && name.ends_with(".json") {
            let doc: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            if best.as_ref().map_or(true, |b| doc.slot > b.slot) {
                best = Some(doc);
            }
        }
    }
    Ok(best)
}

/// Runs one method over the whole stream, evaluating on all past and
/// current test sets after each slot.
pub fn run_stream(
    method: Method,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<StreamOutcome> {
    run_stream_checkpointed(method, stream, cfg, seed, None, false)
}

/// [`run_stream`] with optional per-slot checkpoints. With `resume`, the
/// latest checkpoint under `checkpoint_dir` is loaded and the remaining
/// slots are trained; the result is identical to a fresh run.
pub fn run_stream_checkpointed(
    method: Method,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint_dir: Option<&std::path::Path>,
    resume: bool,
) -> Result<StreamOutcome> {
    if stream.is_empty() {
        return Err(Error::domain("empty task stream"));
    }
    if method.is_model_preserving() {
        return run_model_preserving(method, stream, cfg, seed);
    }

    let positive = cfg.backbone.positive_class;
    let restored = if resume {
        match checkpoint_dir {
            Some(dir) => load_latest_checkpoint(dir)?,
            None => None,
        }
    } else {
        None
    };
    let (mut run, mut a_matrix, first_slot) = match restored {
        Some(cp) => {
            if cp.run.method != method || cp.run.seed != seed {
                return Err(Error::domain(format!(
                    "checkpoint was written by method `{}` seed {}, cannot resume `{method}` seed {seed}",
                    cp.run.method, cp.run.seed
                )));
            }
            (cp.run, cp.a_matrix, cp.slot + 1)
        }
        None => {
            let base = train_base_model(stream, cfg, seed)?;
            let mut run = ContinualRun {
                method,
                seed,
                model: base.clone(),
                base_model: base,
                resadapt: None,
                task_logs: Vec::new(),
                snapshots: Vec::new(),
            };
            run.snapshots.push(run.current_snapshot());
            let a_matrix = vec![vec![evaluate_f1(
                &run.snapshots[0],
                &stream.domains[0].test(),
                positive,
            )?]];
            if let Some(dir) = checkpoint_dir {
                write_checkpoint(dir, 1, &run, &a_matrix)?;
            }
            (run, a_matrix, 2)
        }
    };

    for slot in first_slot..=stream.len() {
        let data = &stream.domains[slot - 1];
        match method {
            Method::Retrofit => retrofit_task(&mut run, data, cfg, slot)?,
            Method::Cft => cft_task(&mut run, data, cfg, slot)?,
            Method::Lwf => lwf_task(&mut run, data, cfg, slot)?,
            Method::Podnet => podnet1d_task(&mut run, data, cfg, slot)?,
            Method::Co2l => co2l_task(&mut run, data, cfg, slot)?,
            Method::Resadapt => resadapt_task(&mut run, data, cfg, slot)?,
            Method::Base => {
                run.task_logs.push(TaskLog {
                    domain_id: data.domain_id,
                    ..TaskLog::default()
                });
            }
            Method::Oracle => oracle_task(&mut run, stream, cfg, slot)?,
            m => unreachable!("model-preserving method {m} handled above"),
        }
        let snapshot = run.current_snapshot();
        let mut row = Vec::with_capacity(slot);
        for s in 0..slot {
            row.push(evaluate_f1(&snapshot, &stream.domains[s].test(), positive)?);
        }
        run.snapshots.push(snapshot);
        a_matrix.push(row);
        if let Some(dir) = checkpoint_dir {
            write_checkpoint(dir, slot, &run, &a_matrix)?;
        }
    }

    let is_representation = stream.kind == StreamKind::Representation;
    let mut report = MetricsReport::from_scores(method.id(), seed, a_matrix, is_representation)?;
    report.task_logs = run.task_logs.iter().map(|l| l.summary()).collect();
    if method == Method::Base {
        // The static anchor is a fixed reference; retention is not defined
        // for it.
        report.ptr = None;
        report.flags.push("ptr_not_applicable_static_base".to_string());
    }
    if method == Method::Retrofit {
        report.diagnostics = Some(crate::diagnostics::bound_report(&run, stream)?);
    }

    Ok(StreamOutcome {
        final_model: run.model.clone(),
        resadapt: run.resadapt.clone(),
        report,
        run: Some(run),
    })
}

/// Model-preserving protocol: fine-tune one expert per domain from the
/// common base, aggregate once, evaluate the aggregate on every test set.
fn run_model_preserving(
    method: Method,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<StreamOutcome> {
    let base = train_base_model(stream, cfg, seed)?;
    let mut experts = Vec::with_capacity(stream.len());
    for (i, domain) in stream.domains.iter().enumerate() {
        let mut rng = SeededRng::with_stream(seed, task_stream_id(i + 1, PHASE_EXPERT));
        let (expert, _) = fit_full(
            &base,
            &domain.train(),
            &domain.valid(),
            &cfg.training,
            1.0,
            None,
            &mut rng,
            Some(i + 1),
        )?;
        experts.push(expert);
    }
    let pool = crate::merging::ExpertPool {
        base,
        labels: stream.domains.iter().map(|d| d.domain_id).collect(),
        experts,
    };
    evaluate_pool(method, &pool, stream, cfg, seed)
}

/// Aggregates a ready expert pool with the chosen method and evaluates the
/// aggregate on every test set; retention normalizes each past slot by the
/// best single-domain expert.
pub fn evaluate_pool(
    method: Method,
    pool: &crate::merging::ExpertPool,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<StreamOutcome> {
    use crate::merging;

    let positive = cfg.backbone.positive_class;
    let mut best_single = vec![0.0f64; stream.len()];
    for expert in &pool.experts {
        let snap = Snapshot::Plain(expert.clone());
        for (s, domain) in stream.domains.iter().enumerate() {
            let score = evaluate_f1(&snap, &domain.test(), positive)?;
            best_single[s] = best_single[s].max(score);
        }
    }

    let mc = &cfg.merging;
    let (merged_model, scores): (Option<ModelParams>, Vec<f64>) = match method {
        Method::Vote | Method::SoftAvg => {
            let mut scores = Vec::with_capacity(stream.len());
            for domain in &stream.domains {
                let split = domain.test();
                let mut preds = Vec::with_capacity(split.len());
                for x in &split.xs {
                    preds.push(match method {
                        Method::Vote => merging::ensemble_vote(pool, x)?,
                        _ => argmax(&merging::ensemble_average(pool, x)?),
                    });
                }
                scores.push(f1(&preds, &split.ys, positive)?);
            }
            (None, scores)
        }
        Method::WeightAvg | Method::TaskArith | Method::Ties | Method::Adamerging => {
            let model = match method {
                Method::WeightAvg => merging::weight_average(pool)?,
                Method::TaskArith => merging::task_arithmetic(pool, mc.alpha)?,
                Method::Ties => merging::ties_merge(pool, mc.ties_top_percent, mc.alpha)?,
                Method::Adamerging => {
                    // Unlabeled pool: feature vectors of the final slot's
                    // test split, labels withheld.
                    let unlabeled = stream.domains.last().unwrap().test().xs;
                    merging::adamerging(
                        pool,
                        &unlabeled,
                        mc.adamerging_steps,
                        mc.adamerging_lr,
                        mc.adamerging_ties_preprocess.then_some(mc.ties_top_percent),
                    )?
                    .0
                }
                _ => unreachable!(),
            };
            let snap = Snapshot::Plain(model.clone());
            let mut scores = Vec::with_capacity(stream.len());
            for domain in &stream.domains {
                scores.push(evaluate_f1(&snap, &domain.test(), positive)?);
            }
            (Some(model), scores)
        }
        m => {
            return Err(Error::domain(format!(
                "`{m}` is not an aggregation method"
            )))
        }
    };

    let is_representation = stream.kind == StreamKind::Representation;
    let report = MetricsReport::from_merged_scores(
        method.id(),
        seed,
        scores,
        &best_single,
        is_representation,
    )?;
    Ok(StreamOutcome {
        final_model: merged_model.unwrap_or_else(|| pool.base.clone()),
        resadapt: None,
        report,
        run: None,
    })
}
