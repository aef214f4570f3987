//! Evaluation metrics: F1, AUT over time slots, past-task retention, and
//! the cross-representation average.

use serde::{Deserialize, Serialize};

use crate::arbitration::LossComponents;
use crate::error::{Error, Result};

/// F1 against a designated positive class.
///
/// Degenerate convention: no predicted and no actual positives count as a
/// perfect slot (1.0) so empty-positive test sets do not poison AUT; such
/// slots are flagged in the report. TP = 0 with any FP/FN present is 0.
pub fn f1(predictions: &[usize], labels: &[usize], positive: usize) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::shape("f1: length mismatch or empty"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &y) in predictions.iter().zip(labels.iter()) {
        match (p == positive, y == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(if fp + fn_ == 0 { 1.0 } else { 0.0 });
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Trapezoidal mean of a score sequence over N slots:
/// AUT(N, f) = 1/(N−1) · Σ (f(k+1)+f(k))/2. Undefined for N < 2.
pub fn aut(f: &[f64]) -> Option<f64> {
    if f.len() < 2 {
        return None;
    }
    let n = f.len();
    let sum: f64 = f.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum();
    Some(sum / (n - 1) as f64)
}

/// Past-task retention at time t (1-based): mean over past sets s < t of
/// a_{t,s} / max_{t' ≤ t} a_{t',s}. `a` is the ragged score matrix with
/// row t holding scores of the model after slot t on test sets 1..=t.
/// Slots whose running maximum is zero are excluded (and reported).
pub fn ptr(a: &[Vec<f64>], t: usize) -> Result<(f64, Vec<usize>)> {
    if t < 2 || t > a.len() {
        return Err(Error::domain(format!("ptr needs 2 ≤ t ≤ {}, got {t}", a.len())));
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut excluded = Vec::new();
    for s in 0..t - 1 {
        let a_ts = a[t - 1][s];
        let a_max = (s..t).map(|row| a[row][s]).fold(f64::NEG_INFINITY, f64::max);
        if a_max <= 0.0 {
            excluded.push(s + 1);
            continue;
        }
        acc += a_ts / a_max;
        used += 1;
    }
    if used == 0 {
        return Err(Error::domain("ptr: every past slot was excluded"));
    }
    Ok((acc / used as f64, excluded))
}

/// Cross-representation mean: XRep(R, f) = (1/R) Σ f(r).
pub fn xrep(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::domain("xrep of an empty score list"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Retention for model-preserving baselines: each past slot's score is
/// normalized by the best score of the individually trained single-domain
/// experts on that slot.
pub fn model_preserving_ptr(merged_scores: &[f64], best_single: &[f64]) -> Result<f64> {
    if merged_scores.len() != best_single.len() || merged_scores.is_empty() {
        return Err(Error::shape("model_preserving_ptr: length mismatch"));
    }
    let mut acc = 0.0;
    for (&m, &b) in merged_scores.iter().zip(best_single.iter()) {
        if b <= 0.0 {
            return Err(Error::domain("model_preserving_ptr: zero best score"));
        }
        acc += m / b;
    }
    Ok(acc / merged_scores.len() as f64)
}

/// Per-task diagnostics of one continual run, serialized inside the report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskLogSummary {
    pub domain_id: usize,
    /// Model-level update energy E_t = Σ_ℓ ‖M⊙B‖_F (method runs only).
    pub energy: Option<f64>,
    pub energy_per_layer: Option<Vec<f64>>,
    /// ‖ΔW^(ℓ)‖_F per layer.
    pub delta_norm_per_layer: Option<Vec<f64>>,
    /// Max arbitration divergence on samples where the old teacher was
    /// confident.
    pub arbitration_tightness: Option<f64>,
    /// Fraction of mask entries with |m| > 1e-8 after training.
    pub mask_density: Option<f64>,
    pub final_losses: Option<LossComponents>,
    /// Max |logit difference| between merged and adapter-attached models.
    pub merge_consistency: Option<f64>,
    pub epochs_adapt: usize,
    pub epochs_mask: usize,
}

/// Bound-related diagnostics (probe outputs live in their own structs).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DriftDiagnostics {
    /// E_t per task.
    pub energy_per_task: Vec<f64>,
    /// Mean absolute pairwise cosine of masked coefficients across tasks.
    pub mask_overlap_rho: Option<f64>,
    /// Secondary overlap view: mean pairwise Jaccard of coefficient supports.
    pub support_jaccard: Option<f64>,
    /// Max observed arbitration divergence in high-confidence regions.
    pub arbitration_tightness: Option<f64>,
    /// Max relative norm distortion of the frozen projections on the merged
    /// coefficients.
    pub isometry_error: Option<f64>,
    /// Effective rank ratio κ (energy-weighted mean of r/d_in).
    pub effective_rank_ratio: Option<f64>,
    /// Normalized layer energy weights α_ℓ (sum to 1).
    pub layer_energy_weights: Vec<f64>,
    /// Mean ‖p_t − p_{t−1}‖₂ on held-out old-domain data, per task.
    pub old_domain_drift: Vec<f64>,
    /// Mean ‖p_t − p_{t−1}‖₂ on current-domain data, per task.
    pub new_domain_drift: Vec<f64>,
    /// Fitted constant c₀ with drift_t ≤ c₀·((κ+ρ)ΣE + √δ + ε) per task.
    pub fitted_bound_constant: Option<f64>,
    /// Per-task ratio drift_new / ((1−ρ)·E_t); None where E_t = 0.
    pub plasticity_ratios: Vec<Option<f64>>,
    /// Min finite plasticity ratio (the empirical lower-bound constant).
    pub plasticity_constant: Option<f64>,
}

/// Evaluation artifact of one run: the ragged score matrix, derived
/// metrics, per-slot old/new pairs, and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub slots: usize,
    /// Row t: scores of the model after slot t on test sets 1..=t.
    pub a_matrix: Vec<Vec<f64>>,
    /// f(k) = a_{k,k}: score on the current test set after slot k.
    pub f_current: Vec<f64>,
    pub aut: Option<f64>,
    pub ptr: Option<f64>,
    pub ptr_excluded_slots: Vec<usize>,
    /// Mean final-model score across all domains (representation streams).
    pub xrep: Option<f64>,
    /// Per-slot (mean score on past sets, score on the current set).
    pub old_new: Vec<(Option<f64>, f64)>,
    pub task_logs: Vec<TaskLogSummary>,
    pub diagnostics: Option<DriftDiagnostics>,
    pub flags: Vec<String>,
}

impl MetricsReport {
    /// Derives the report from a ragged score matrix.
    pub fn from_scores(
        method: &str,
        seed: u64,
        a_matrix: Vec<Vec<f64>>,
        is_representation: bool,
    ) -> Result<Self> {
        let slots = a_matrix.len();
        if slots == 0 {
            return Err(Error::domain("empty score matrix"));
        }
        for (t, row) in a_matrix.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::shape(format!(
                    "score matrix row {t} must have {} entries, found {}",
                    t + 1,
                    row.len()
                )));
            }
        }
        let f_current: Vec<f64> = (0..slots).map(|t| a_matrix[t][t]).collect();
        let mut flags = Vec::new();
        let aut_value = aut(&f_current);
        if aut_value.is_none() {
            flags.push("aut_undefined_single_slot".to_string());
        }
        let (ptr_value, excluded) = if slots >= 2 {
            let (v, ex) = ptr(&a_matrix, slots)?;
            (Some(v), ex)
        } else {
            (None, Vec::new())
        };
        let xrep_value = if is_representation {
            Some(xrep(a_matrix.last().unwrap())?)
        } else {
            None
        };
        let old_new = (0..slots)
            .map(|t| {
                let current = a_matrix[t][t];
                let old = if t == 0 {
                    None
                } else {
                    Some(a_matrix[t][..t].iter().sum::<f64>() / t as f64)
                };
                (old, current)
            })
            .collect();
        Ok(MetricsReport {
            method: method.to_string(),
            seed,
            slots,
            a_matrix,
            f_current,
            aut: aut_value,
            ptr: ptr_value,
            ptr_excluded_slots: excluded,
            xrep: xrep_value,
            old_new,
            task_logs: Vec::new(),
            diagnostics: None,
            flags,
        })
    }

    /// Report for a model-preserving aggregate: one model evaluated on all
    /// test sets after a single aggregation step. AUT is not applicable;
    /// retention normalizes past slots by the best single-domain expert.
    pub fn from_merged_scores(
        method: &str,
        seed: u64,
        scores: Vec<f64>,
        best_single: &[f64],
        is_representation: bool,
    ) -> Result<Self> {
        let slots = scores.len();
        if slots == 0 {
            return Err(Error::domain("empty score list"));
        }
        let mut flags = vec![
            "model_preserving".to_string(),
            "aut_not_applicable".to_string(),
        ];
        let ptr_value = if slots >= 2 {
            match model_preserving_ptr(&scores[..slots - 1], &best_single[..slots - 1]) {
                Ok(v) => Some(v),
                Err(_) => {
                    flags.push("ptr_excluded_zero_best".to_string());
                    None
                }
            }
        } else {
            None
        };
        let xrep_value = if is_representation {
            Some(xrep(&scores)?)
        } else {
            None
        };
        let old_new = vec![(
            if slots >= 2 {
                Some(scores[..slots - 1].iter().sum::<f64>() / (slots - 1) as f64)
            } else {
                None
            },
            scores[slots - 1],
        )];
        Ok(MetricsReport {
            method: method.to_string(),
            seed,
            slots,
            f_current: scores.clone(),
            a_matrix: vec![scores],
            aut: None,
            ptr: ptr_value,
            ptr_excluded_slots: Vec::new(),
            xrep: xrep_value,
            old_new,
            task_logs: Vec::new(),
            diagnostics: None,
            flags,
        })
    }

    /// Flat CSV of the per-slot scores for external plotting.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("method,seed,model_after_slot,test_slot,score\n");
        for (t, row) in self.a_matrix.iter().enumerate() {
            for (s, v) in row.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.method,
                    self.seed,
                    t + 1,
                    s + 1,
                    v
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1], 1).unwrap(), 1.0);
        // TP=1, FP=1, FN=1 → 0.5.
        assert_eq!(f1(&[1, 1, 0], &[1, 0, 1], 1).unwrap(), 0.5);
        // No predicted and no actual positives → degenerate 1.
        assert_eq!(f1(&[0, 0], &[0, 0], 1).unwrap(), 1.0);
        // TP=0 with errors present → 0.
        assert_eq!(f1(&[1, 0], &[0, 1], 1).unwrap(), 0.0);
    }

    #[test]
    fn aut_examples() {
        assert_eq!(aut(&[1.0, 1.0, 1.0]), Some(1.0));
        assert_eq!(aut(&[0.8, 0.6, 1.0]), Some(0.75));
        assert_eq!(aut(&[0.3, 0.9]), Some(0.6));
        assert_eq!(aut(&[0.5]), None);
    }

    #[test]
    fn aut_equals_mean_for_constant_and_symmetric_reversal() {
        let c = vec![0.7; 6];
        assert!((aut(&c).unwrap() - 0.7).abs() < 1e-15);
        let sym = vec![0.2, 0.9, 0.4, 0.9, 0.2];
        let mut rev = sym.clone();
        rev.reverse();
        assert!((aut(&sym).unwrap() - aut(&rev).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ptr_examples() {
        // a_{t,s} equals the running max everywhere → 1.
        let a = vec![vec![0.9], vec![0.9, 0.8], vec![0.9, 0.8, 0.7]];
        assert_eq!(ptr(&a, 3).unwrap().0, 1.0);
        // Hand case: a_{3,1}=0.8 (max 1.0), a_{3,2}=0.9 (max 0.9) → 0.9.
        let a = vec![vec![1.0], vec![0.9, 0.9], vec![0.8, 0.9, 0.95]];
        assert!((ptr(&a, 3).unwrap().0 - 0.9).abs() < 1e-15);
        // Monotone improvement → every ratio is current/current = 1.
        let a = vec![vec![0.5], vec![0.6, 0.5], vec![0.7, 0.6, 0.5]];
        assert_eq!(ptr(&a, 3).unwrap().0, 1.0);
        assert!(ptr(&a, 1).is_err());
    }

    #[test]
    fn ptr_excludes_zero_max_slots() {
        let a = vec![vec![0.0], vec![0.0, 0.9], vec![0.0, 0.45, 0.8]];
        let (v, excluded) = ptr(&a, 3).unwrap();
        assert_eq!(excluded, vec![1]);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ptr_stays_in_unit_interval_in_sequential_mode() {
        // Scores never exceed their running max by construction.
        let a = vec![
            vec![0.82],
            vec![0.70, 0.88],
            vec![0.65, 0.80, 0.91],
            vec![0.60, 0.74, 0.85, 0.93],
        ];
        let (v, _) = ptr(&a, 4).unwrap();
        assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn xrep_examples() {
        assert!((xrep(&[0.4, 0.4, 0.4]).unwrap() - 0.4).abs() < 1e-15);
        let v = xrep(&[36.97, 25.42, 15.05]).unwrap();
        assert!((v - 77.44 / 3.0).abs() < 1e-12);
        assert_eq!(xrep(&[0.77]).unwrap(), 0.77);
    }

    #[test]
    fn model_preserving_ptr_examples() {
        assert_eq!(model_preserving_ptr(&[0.9, 0.8], &[0.9, 0.8]).unwrap(), 1.0);
        assert!((model_preserving_ptr(&[0.8, 0.9], &[1.0, 0.9]).unwrap() - 0.9).abs() < 1e-15);
        // Ratios above 1 are allowed.
        assert!(model_preserving_ptr(&[1.0], &[0.5]).unwrap() > 1.0);
    }

    #[test]
    fn report_from_single_slot_flags_aut() {
        let r = MetricsReport::from_scores("cft", 1, vec![vec![0.9]], false).unwrap();
        assert_eq!(r.f_current, vec![0.9]);
        assert!(r.aut.is_none());
        assert!(r.flags.iter().any(|f| f.contains("aut_undefined")));
        assert!(r.ptr.is_none());
    }

    #[test]
    fn report_rejects_ragged_mismatch() {
        assert!(MetricsReport::from_scores("cft", 1, vec![vec![0.9, 0.8]], false).is_err());
    }
}
