//! Confidence-driven keep-and-gain arbitration.
//!
//! During mask training the student (θ_prev with the masked adapter
//! attached) is pulled toward a per-sample teacher target T* built from the
//! old model and the newly adapted model. Teacher choice is gated by
//! calibrated true-class confidence: the old model has priority wherever it
//! is confident, so established knowledge is kept; elsewhere the new model
//! supplies the gain. The mask itself is regularized by a sparse group
//! lasso so task updates occupy small, mostly disjoint supports.

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterSet;
use crate::backbone::{
    backward_into, cross_entropy, GradTarget, Gradients, Materialized, ModelParams, Optimizer,
    Upstream,
};
use crate::error::{Error, Result};
use crate::numerics::{
    kl_div_clamped, l1_distance, sigmoid, softmax, squared_distance, Matrix,
};

/// True-class confidence `c` with its calibration threshold `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePair {
    pub c: f64,
    pub tau: f64,
}

impl ConfidencePair {
    pub fn confident(&self) -> bool {
        self.c >= self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArbitrationMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    /// KL(p_s ‖ T*) on output probabilities; the classification deployment.
    #[default]
    Kl,
    /// Squared distance of penultimate features; the generative deployment.
    LatentMse,
}

/// Knobs of the arbitration stage. `classification_profile` and
/// `soft_profile` carry the two deployment presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArbitrationConfig {
    pub mode: ArbitrationMode,
    /// Conformal level α for the validation-quantile threshold.
    pub quantile_alpha: f64,
    /// Slope k of the soft gate σ(k·(c_o − τ_o)).
    pub gate_slope: f64,
    /// Reliability exponent β in the soft sample weight.
    pub beta: f64,
    /// Disagreement weight λ in the soft sample weight.
    pub lambda_disagree: f64,
    /// Group-lasso balance λ inside the mask regularizer.
    pub lambda_group: f64,
    /// Supervised-loss weight η.
    pub eta: f64,
    /// Mask-regularizer weight μ.
    pub mu: f64,
    pub divergence: Divergence,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        ArbitrationConfig::classification_profile()
    }
}

impl ArbitrationConfig {
    /// Hard arbitration over output probabilities; the detection preset
    /// (pair with mask ratio 0.01).
    pub fn classification_profile() -> Self {
        ArbitrationConfig {
            mode: ArbitrationMode::Hard,
            quantile_alpha: 0.1,
            gate_slope: 1.0,
            beta: 1.0,
            lambda_disagree: 1.0,
            lambda_group: 1.0,
            eta: 1.0,
            mu: 2e-6,
            divergence: Divergence::Kl,
        }
    }

    /// Soft arbitration over penultimate features; the generative preset
    /// (pair with mask ratio 1.0).
    pub fn soft_profile() -> Self {
        ArbitrationConfig {
            mode: ArbitrationMode::Soft,
            quantile_alpha: 0.1,
            gate_slope: 1.0,
            beta: 1.0,
            lambda_disagree: 1.0,
            lambda_group: 0.1,
            eta: 1.0,
            mu: 1.0,
            divergence: Divergence::LatentMse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quantile_alpha > 0.0 && self.quantile_alpha < 1.0) {
            return Err(Error::config(
                "arbitration.quantile_alpha",
                "must lie in (0, 1)",
            ));
        }
        if self.eta < 0.0 {
            return Err(Error::config("arbitration.eta", "must be nonnegative"));
        }
        if self.mu < 0.0 {
            return Err(Error::config("arbitration.mu", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Calibrated thresholds: the pooled α-quantile plus per-class quantiles
/// when every class had enough validation mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub pooled: f64,
    pub per_class: Option<Vec<f64>>,
}

impl Thresholds {
    pub fn for_class(&self, class: usize) -> f64 {
        match &self.per_class {
            Some(t) => t[class],
            None => self.pooled,
        }
    }

    pub fn constant(tau: f64) -> Self {
        Thresholds {
            pooled: tau,
            per_class: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TauMode {
    /// Per-class when every class has at least [`MIN_CLASS_SAMPLES`]
    /// validation samples, pooled otherwise.
    #[default]
    Auto,
    Pooled,
    /// Per-class unconditionally; errors on an empty class.
    PerClassForced,
}

pub const MIN_CLASS_SAMPLES: usize = 20;

/// Lower empirical quantile: the k-th smallest with k = ⌈α·n⌉.
pub fn lower_quantile(values: &mut Vec<f64>, alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("quantile of an empty set"));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("NaN confidence"));
    let n = values.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    Ok(values[k - 1])
}

/// Softmax probability of the true class for each validation sample.
pub fn true_class_confidences(
    mat: &Materialized,
    xs: &[Vec<f64>],
    ys: &[usize],
) -> Result<Vec<f64>> {
    xs.iter()
        .zip(ys.iter())
        .map(|(x, &y)| Ok(softmax(mat.forward(x)?.logits())[y]))
        .collect()
}

/// Conformal calibration of τ from a validation split: the α-quantile of
/// true-class confidences, per class when supported by enough samples.
pub fn calibrate_threshold(
    mat: &Materialized,
    xs: &[Vec<f64>],
    ys: &[usize],
    alpha: f64,
    num_classes: usize,
    mode: TauMode,
) -> Result<Thresholds> {
    if xs.is_empty() {
        return Err(Error::domain("calibration needs a nonempty validation set"));
    }
    let conf = true_class_confidences(mat, xs, ys)?;
    let pooled = lower_quantile(&mut conf.clone(), alpha)?;

    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    for (&y, &c) in ys.iter().zip(conf.iter()) {
        buckets[y].push(c);
    }
    let per_class = match mode {
        TauMode::Pooled => None,
        TauMode::Auto => {
            if buckets.iter().all(|b| b.len() >= MIN_CLASS_SAMPLES) {
                Some(
                    buckets
                        .iter_mut()
                        .map(|b| lower_quantile(b, alpha))
                        .collect::<Result<Vec<f64>>>()?,
                )
            } else {
                None
            }
        }
        TauMode::PerClassForced => {
            for (class, b) in buckets.iter().enumerate() {
                if b.is_empty() {
                    return Err(Error::domain(format!(
                        "per-class calibration forced but class {class} has no validation samples"
                    )));
                }
            }
            Some(
                buckets
                    .iter_mut()
                    .map(|b| lower_quantile(b, alpha))
                    .collect::<Result<Vec<f64>>>()?,
            )
        }
    };
    Ok(Thresholds { pooled, per_class })
}

/// Hard arbitration: the old teacher wins whenever it is confident, the new
/// teacher is the fallback, and the sample is excluded when neither clears
/// its threshold. Returns (target, gate) with gate 1.0 for the old teacher.
pub fn hard_target<'a>(
    p_old: &'a [f64],
    p_new: &'a [f64],
    conf_old: ConfidencePair,
    conf_new: ConfidencePair,
) -> Option<(&'a [f64], f64)> {
    if conf_old.confident() {
        Some((p_old, 1.0))
    } else if conf_new.confident() {
        Some((p_new, 0.0))
    } else {
        None
    }
}

/// Soft arbitration: sigmoid old-priority gate, convex blend, and the raw
/// (un-normalized) reliability/disagreement weight.
pub fn soft_target(
    p_old: &[f64],
    p_new: &[f64],
    conf_old: ConfidencePair,
    conf_new: ConfidencePair,
    cfg: &ArbitrationConfig,
) -> (Vec<f64>, f64, f64) {
    let g = sigmoid(cfg.gate_slope * (conf_old.c - conf_old.tau));
    let target: Vec<f64> = p_old
        .iter()
        .zip(p_new.iter())
        .map(|(&o, &n)| g * o + (1.0 - g) * n)
        .collect();
    let reliability = conf_old.c.max(conf_new.c).powf(cfg.beta);
    let weight = reliability * (1.0 + cfg.lambda_disagree * l1_distance(p_old, p_new));
    (target, g, weight)
}

/// One arbitrated sample. In KL mode the vectors are output probabilities;
/// in latent mode they are penultimate features. `target: None` marks a
/// sample excluded from the merge loss.
#[derive(Debug, Clone)]
pub struct ArbitrationSample {
    pub p_old: Vec<f64>,
    pub p_new: Vec<f64>,
    pub p_student: Vec<f64>,
    pub target: Option<Vec<f64>>,
    pub gate: f64,
    pub weight: f64,
    pub conf_old: ConfidencePair,
    pub conf_new: ConfidencePair,
}

#[derive(Debug, Clone)]
pub struct ArbitrationBatch {
    pub samples: Vec<ArbitrationSample>,
    pub divergence: Divergence,
}

impl ArbitrationBatch {
    pub fn included(&self) -> impl Iterator<Item = &ArbitrationSample> {
        self.samples.iter().filter(|s| s.target.is_some())
    }

    /// Scales weights of included samples to mean 1 (soft mode only; hard
    /// mode keeps w ≡ 1).
    pub fn normalize_weights(&mut self) {
        let (mut sum, mut count) = (0.0, 0usize);
        for s in self.samples.iter().filter(|s| s.target.is_some()) {
            sum += s.weight;
            count += 1;
        }
        if count == 0 || sum <= 0.0 {
            return;
        }
        let scale = count as f64 / sum;
        for s in &mut self.samples {
            if s.target.is_some() {
                s.weight *= scale;
            }
        }
    }
}

/// Mean over included samples of w·div(p_s ‖ T*); an empty inclusion set
/// contributes zero. KL mode requires normalized distributions.
pub fn merge_loss(batch: &ArbitrationBatch) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for s in batch.included() {
        let target = s.target.as_ref().unwrap();
        let d = match batch.divergence {
            Divergence::Kl => {
                for (name, p) in [("student", &s.p_student), ("target", target)] {
                    let sum: f64 = p.iter().sum();
                    if (sum - 1.0).abs() > 1e-6 {
                        return Err(Error::domain(format!(
                            "merge_loss: {name} distribution sums to {sum}, not 1"
                        )));
                    }
                }
                kl_div_clamped(&s.p_student, target)
            }
            Divergence::LatentMse => squared_distance(&s.p_student, target),
        };
        acc += s.weight * d;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { acc / count as f64 })
}

/// Sparse group lasso over a mask: ‖M‖₁ + λ·Σ over rank components (rows)
/// of the row L2 norm. The subgradient is zero at nondifferentiable points.
pub fn sparse_group_lasso(m: &Matrix, lambda_group: f64) -> (f64, Matrix) {
    let mut value = 0.0;
    let mut grad = Matrix::zeros(m.rows, m.cols);
    for k in 0..m.rows {
        let row = m.row(k);
        let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        value += row.iter().map(|v| v.abs()).sum::<f64>() + lambda_group * row_norm;
        for (j, &v) in row.iter().enumerate() {
            let mut g = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            if row_norm > 0.0 {
                g += lambda_group * v / row_norm;
            }
            grad.set(k, j, g);
        }
    }
    (value, grad)
}

/// Frozen per-sample teacher state, computed once per task: output
/// probabilities, penultimate features, and calibrated confidences of both
/// teachers.
#[derive(Debug, Clone)]
pub struct TeacherEval {
    pub prob_old: Vec<f64>,
    pub prob_new: Vec<f64>,
    pub latent_old: Vec<f64>,
    pub latent_new: Vec<f64>,
    pub conf_old: ConfidencePair,
    pub conf_new: ConfidencePair,
}

pub fn evaluate_teachers(
    f_old: &Materialized,
    f_new: &Materialized,
    tau_old: &Thresholds,
    tau_new: &Thresholds,
    xs: &[Vec<f64>],
    ys: &[usize],
) -> Result<Vec<TeacherEval>> {
    xs.iter()
        .zip(ys.iter())
        .map(|(x, &y)| {
            let to = f_old.forward(x)?;
            let tn = f_new.forward(x)?;
            let prob_old = softmax(to.logits());
            let prob_new = softmax(tn.logits());
            Ok(TeacherEval {
                conf_old: ConfidencePair {
                    c: prob_old[y],
                    tau: tau_old.for_class(y),
                },
                conf_new: ConfidencePair {
                    c: prob_new[y],
                    tau: tau_new.for_class(y),
                },
                latent_old: to.penultimate().to_vec(),
                latent_new: tn.penultimate().to_vec(),
                prob_old,
                prob_new,
            })
        })
        .collect()
}

/// Builds the arbitrated batch for given student outputs. `student` holds
/// output probabilities in KL mode and penultimate features in latent mode.
pub fn build_batch(
    teachers: &[TeacherEval],
    student: &[Vec<f64>],
    cfg: &ArbitrationConfig,
) -> ArbitrationBatch {
    let samples = teachers
        .iter()
        .zip(student.iter())
        .map(|(t, s)| {
            let (p_old, p_new): (&[f64], &[f64]) = match cfg.divergence {
                Divergence::Kl => (&t.prob_old, &t.prob_new),
                Divergence::LatentMse => (&t.latent_old, &t.latent_new),
            };
            let (target, gate, weight) = match cfg.mode {
                ArbitrationMode::Hard => match hard_target(p_old, p_new, t.conf_old, t.conf_new)
                {
                    Some((tgt, g)) => (Some(tgt.to_vec()), g, 1.0),
                    None => (None, 0.0, 1.0),
                },
                ArbitrationMode::Soft => {
                    let (tgt, g, w) = soft_target(p_old, p_new, t.conf_old, t.conf_new, cfg);
                    (Some(tgt), g, w)
                }
            };
            ArbitrationSample {
                p_old: p_old.to_vec(),
                p_new: p_new.to_vec(),
                p_student: s.clone(),
                target,
                gate,
                weight,
                conf_old: t.conf_old,
                conf_new: t.conf_new,
            }
        })
        .collect();
    let mut batch = ArbitrationBatch {
        samples,
        divergence: cfg.divergence,
    };
    if matches!(cfg.mode, ArbitrationMode::Soft) {
        batch.normalize_weights();
    }
    batch
}

/// Loss components of one mask-training step, returned for logging.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub merge: f64,
    pub sup: f64,
    pub reg: f64,
}

impl LossComponents {
    pub fn total(&self, cfg: &ArbitrationConfig) -> f64 {
        self.merge + cfg.eta * self.sup + cfg.mu * self.reg
    }
}

/// Composite mask objective L = L_merge + η·L_sup + μ·R(M) over a batch,
/// together with its gradient w.r.t. the masks only.
///
/// θ_prev and B stay frozen: the only trainable tensors are the adapter
/// masks. Teacher outputs are precomputed (they do not move during mask
/// training).
pub fn mask_loss_and_grad(
    model: &ModelParams,
    set: &AdapterSet,
    teachers: &[TeacherEval],
    xs: &[Vec<f64>],
    ys: &[usize],
    cfg: &ArbitrationConfig,
) -> Result<(LossComponents, Gradients)> {
    let student = Materialized::with_adapters(model, set);
    let n = xs.len();
    let mut grads = Gradients::zeros(&student, GradTarget::AdapterMask(set));

    // Student forward passes, batch construction.
    let mut traces = Vec::with_capacity(n);
    let mut student_out = Vec::with_capacity(n);
    for x in xs {
        let trace = student.forward(x)?;
        student_out.push(match cfg.divergence {
            Divergence::Kl => softmax(trace.logits()),
            Divergence::LatentMse => trace.penultimate().to_vec(),
        });
        traces.push(trace);
    }
    let batch = build_batch(teachers, &student_out, cfg);
    let merge = merge_loss(&batch)?;
    let n_included = batch.included().count();

    // Per-sample upstream gradients: merge term + supervised term.
    let mut sup = 0.0;
    let penult_layer = model.num_layers().checked_sub(2);
    for ((sample, trace), &y) in batch.samples.iter().zip(traces.iter()).zip(ys.iter()) {
        let (ce, ce_grad) = cross_entropy(trace.logits(), y)?;
        sup += ce / n as f64;

        let mut d_logits: Vec<f64> = ce_grad
            .iter()
            .map(|g| cfg.eta * g / n as f64)
            .collect();
        let mut upstream = Upstream::from_logits(vec![0.0; d_logits.len()]);

        if let Some(target) = &sample.target {
            let w = sample.weight / n_included as f64;
            match cfg.divergence {
                Divergence::Kl => {
                    // d/dz Σ p ln(p/T) = p ⊙ (ln(p/T) − KL).
                    let p = &sample.p_student;
                    let kl = kl_div_clamped(p, target);
                    for (j, d) in d_logits.iter_mut().enumerate() {
                        let ratio = (p[j].max(1e-300) / target[j].max(1e-12)).ln();
                        *d += w * p[j] * (ratio - kl);
                    }
                }
                Divergence::LatentMse => {
                    if let Some(layer) = penult_layer {
                        let inj: Vec<f64> = sample
                            .p_student
                            .iter()
                            .zip(target.iter())
                            .map(|(s, t)| w * 2.0 * (s - t))
                            .collect();
                        upstream = upstream.with_hidden(layer, inj);
                    }
                }
            }
        }
        upstream.logits = d_logits;
        backward_into(&student, trace, &upstream, GradTarget::AdapterMask(set), &mut grads)?;
    }

    // Mask regularizer value and subgradient.
    let mut reg = 0.0;
    let Gradients::AdapterMask { mask } = &mut grads else {
        unreachable!()
    };
    for (idx, adapter) in set.adapters.iter().enumerate() {
        let m = adapter
            .mask
            .as_ref()
            .ok_or_else(|| Error::training(None, "mask not initialized".to_string()))?;
        let (value, subgrad) = sparse_group_lasso(m, cfg.lambda_group);
        reg += value;
        for (g, s) in mask[idx].data.iter_mut().zip(subgrad.data.iter()) {
            *g += cfg.mu * s;
        }
    }

    let components = LossComponents { merge, sup, reg };
    if !components.total(cfg).is_finite() {
        return Err(Error::training(None, "mask objective is not finite".to_string()));
    }
    Ok((components, grads))
}

/// One optimizer step on the masks; returns the pre-step loss components.
pub fn mask_training_step(
    model: &ModelParams,
    set: &mut AdapterSet,
    teachers: &[TeacherEval],
    xs: &[Vec<f64>],
    ys: &[usize],
    cfg: &ArbitrationConfig,
    opt: &mut Optimizer,
) -> Result<LossComponents> {
    let (components, grads) = mask_loss_and_grad(model, set, teachers, xs, ys, cfg)?;
    let Gradients::AdapterMask { mask } = grads else {
        unreachable!()
    };
    let grad_slices: Vec<&[f64]> = mask.iter().map(|m| m.data.as_slice()).collect();
    let mut param_slices: Vec<&mut [f64]> = set
        .adapters
        .iter_mut()
        .map(|a| a.mask.as_mut().expect("mask initialized").data.as_mut_slice())
        .collect();
    opt.step(&mut param_slices, &grad_slices)?;
    Ok(components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kl_div;

    fn pair(c: f64, tau: f64) -> ConfidencePair {
        ConfidencePair { c, tau }
    }

    #[test]
    fn quantile_examples() {
        let mut v = vec![0.2, 0.4, 0.6, 0.8];
        assert_eq!(lower_quantile(&mut v, 0.25).unwrap(), 0.2);
        let mut v = vec![0.7, 0.7, 0.7];
        assert_eq!(lower_quantile(&mut v, 0.5).unwrap(), 0.7);
        let mut v = vec![0.2, 0.4, 0.6, 0.8];
        assert_eq!(lower_quantile(&mut v, 0.999).unwrap(), 0.8);
    }

    #[test]
    fn forced_per_class_calibration_errors_on_empty_class() {
        use crate::backbone::ModelParams;
        let mut rng = crate::numerics::SeededRng::new(2);
        let model = ModelParams::init(&[3, 2], &mut rng).unwrap();
        let mat = Materialized::plain(&model);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| vec![0.1, 0.2, 0.3]).collect();
        let ys = vec![0; 8]; // class 1 never appears
        let err = calibrate_threshold(&mat, &xs, &ys, 0.1, 2, TauMode::PerClassForced);
        assert!(err.is_err());
        // Auto mode falls back to the pooled threshold instead.
        let t = calibrate_threshold(&mat, &xs, &ys, 0.1, 2, TauMode::Auto).unwrap();
        assert!(t.per_class.is_none());
    }

    #[test]
    fn hard_target_cases() {
        let p_old = [0.9, 0.1];
        let p_new = [0.2, 0.8];
        // Old confident: old wins even when new is also confident.
        let (t, g) = hard_target(&p_old, &p_new, pair(0.9, 0.7), pair(0.8, 0.6)).unwrap();
        assert_eq!(t, &p_old);
        assert_eq!(g, 1.0);
        // Old below, new above: second case.
        let (t, g) = hard_target(&p_old, &p_new, pair(0.3, 0.7), pair(0.8, 0.6)).unwrap();
        assert_eq!(t, &p_new);
        assert_eq!(g, 0.0);
        // Both below: excluded.
        assert!(hard_target(&p_old, &p_new, pair(0.3, 0.7), pair(0.5, 0.6)).is_none());
    }

    #[test]
    fn hard_rule_exhaustive_grid() {
        let grid: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let p_old = [1.0, 0.0];
        let p_new = [0.0, 1.0];
        for &co in &grid {
            for &to in &grid {
                for &cn in &grid {
                    for &tn in &grid {
                        let got = hard_target(&p_old, &p_new, pair(co, to), pair(cn, tn));
                        let expect = if co >= to {
                            Some(0)
                        } else if cn >= tn {
                            Some(1)
                        } else {
                            None
                        };
                        match (got, expect) {
                            (Some((t, _)), Some(0)) => assert_eq!(t, &p_old),
                            (Some((t, _)), Some(1)) => assert_eq!(t, &p_new),
                            (None, None) => {}
                            other => panic!("rule mismatch at ({co},{to},{cn},{tn}): {other:?}"),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hard_rule_invariant_under_order_preserving_shift() {
        // Any transform that preserves the sign of (c − τ) per teacher keeps
        // the choice. Check with an affine map c ↦ 0.5c + 0.2.
        let p_old = [1.0, 0.0];
        let p_new = [0.0, 1.0];
        let f = |v: f64| 0.5 * v + 0.2;
        let grid: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        for &co in &grid {
            for &to in &grid {
                for &cn in &grid {
                    for &tn in &grid {
                        let a = hard_target(&p_old, &p_new, pair(co, to), pair(cn, tn))
                            .map(|(_, g)| g);
                        let b = hard_target(
                            &p_old,
                            &p_new,
                            pair(f(co), f(to)),
                            pair(f(cn), f(tn)),
                        )
                        .map(|(_, g)| g);
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn soft_gate_examples() {
        let cfg = ArbitrationConfig {
            mode: ArbitrationMode::Soft,
            ..ArbitrationConfig::classification_profile()
        };
        let p_old = [0.8, 0.2];
        let p_new = [0.4, 0.6];
        // c_o = τ_o: even blend.
        let (t, g, _) = soft_target(&p_old, &p_new, pair(0.5, 0.5), pair(0.9, 0.1), &cfg);
        assert_eq!(g, 0.5);
        assert!((t[0] - 0.6).abs() < 1e-12);
        // c_o − τ_o = 1 at slope 1: σ(1) ≈ 0.731.
        let (_, g, _) = soft_target(&p_old, &p_new, pair(1.0, 0.0), pair(0.9, 0.1), &cfg);
        assert!((g - 0.7310585786300049).abs() < 1e-12);
        // Agreeing teachers: weight is the pure reliability term.
        let (_, _, w) = soft_target(&p_old, &p_old, pair(0.6, 0.5), pair(0.4, 0.5), &cfg);
        assert!((w - 0.6f64.powf(cfg.beta)).abs() < 1e-12);
    }

    #[test]
    fn soft_gate_monotone_and_convex() {
        let cfg = ArbitrationConfig {
            mode: ArbitrationMode::Soft,
            ..ArbitrationConfig::classification_profile()
        };
        let p_old = [0.9, 0.1];
        let p_new = [0.3, 0.7];
        let mut last_g = -1.0;
        for i in 0..20 {
            let c = i as f64 / 19.0;
            let (t, g, _) = soft_target(&p_old, &p_new, pair(c, 0.5), pair(0.5, 0.5), &cfg);
            assert!(g >= last_g, "gate must be monotone in c_o");
            last_g = g;
            for (j, &v) in t.iter().enumerate() {
                let lo = p_old[j].min(p_new[j]);
                let hi = p_old[j].max(p_new[j]);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    fn kl_batch(samples: Vec<ArbitrationSample>) -> ArbitrationBatch {
        ArbitrationBatch {
            samples,
            divergence: Divergence::Kl,
        }
    }

    fn sample(p_s: Vec<f64>, target: Option<Vec<f64>>, weight: f64) -> ArbitrationSample {
        ArbitrationSample {
            p_old: vec![0.5, 0.5],
            p_new: vec![0.5, 0.5],
            p_student: p_s,
            target,
            gate: 1.0,
            weight,
            conf_old: pair(0.5, 0.5),
            conf_new: pair(0.5, 0.5),
        }
    }

    #[test]
    fn merge_loss_examples() {
        // Student equals target: zero.
        let b = kl_batch(vec![sample(vec![0.3, 0.7], Some(vec![0.3, 0.7]), 1.0)]);
        assert!(merge_loss(&b).unwrap().abs() < 1e-12);
        // Hand KL value.
        let b = kl_batch(vec![sample(vec![0.5, 0.5], Some(vec![0.9, 0.1]), 1.0)]);
        assert!((merge_loss(&b).unwrap() - 0.5108).abs() < 1e-3);
        // All excluded: zero.
        let b = kl_batch(vec![sample(vec![0.5, 0.5], None, 1.0)]);
        assert_eq!(merge_loss(&b).unwrap(), 0.0);
        // Matches the strict KL implementation on valid inputs.
        let strict = kl_div(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let b = kl_batch(vec![sample(vec![0.5, 0.5], Some(vec![0.9, 0.1]), 1.0)]);
        assert!((merge_loss(&b).unwrap() - strict).abs() < 1e-12);
        // Non-normalized distributions are a domain error in KL mode.
        let b = kl_batch(vec![sample(vec![0.5, 0.9], Some(vec![0.9, 0.1]), 1.0)]);
        assert!(merge_loss(&b).is_err());
    }

    #[test]
    fn merge_loss_nonnegative_in_kl_mode() {
        let mut rng = crate::numerics::SeededRng::new(77);
        for _ in 0..200 {
            let draw = |r: &mut crate::numerics::SeededRng| {
                let a = r.uniform() + 1e-3;
                let b = r.uniform() + 1e-3;
                vec![a / (a + b), b / (a + b)]
            };
            let p = draw(&mut rng);
            let t = draw(&mut rng);
            let b = kl_batch(vec![sample(p, Some(t), 1.0)]);
            assert!(merge_loss(&b).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn sparse_group_lasso_examples() {
        let (v, _) = sparse_group_lasso(&Matrix::zeros(2, 2), 1.0);
        assert_eq!(v, 0.0);
        let m = Matrix::new(2, 2, vec![3.0, 4.0, 0.0, 0.0]);
        let (v, g) = sparse_group_lasso(&m, 1.0);
        assert_eq!(v, 12.0); // L1 = 7, row norms 5 + 0.
        assert_eq!(g.get(0, 0), 1.0 + 3.0 / 5.0);
        assert_eq!(g.get(1, 0), 0.0);
        let (v, _) = sparse_group_lasso(&m, 0.0);
        assert_eq!(v, 7.0);
    }

    #[test]
    fn lasso_value_dominates_l1() {
        let mut rng = crate::numerics::SeededRng::new(5);
        for _ in 0..50 {
            let m = Matrix::from_fn(3, 4, |_, _| rng.gaussian());
            let l1: f64 = m.data.iter().map(|v| v.abs()).sum();
            let (v, _) = sparse_group_lasso(&m, 0.7);
            assert!(v >= l1 - 1e-12);
        }
    }

    #[test]
    fn weight_normalization_hits_mean_one() {
        let mut b = kl_batch(vec![
            sample(vec![0.5, 0.5], Some(vec![0.6, 0.4]), 0.3),
            sample(vec![0.5, 0.5], Some(vec![0.6, 0.4]), 0.9),
            sample(vec![0.5, 0.5], None, 5.0),
        ]);
        b.normalize_weights();
        let mean: f64 =
            b.included().map(|s| s.weight).sum::<f64>() / b.included().count() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }
}
