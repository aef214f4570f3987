//! Empirical verification of the interference/forgetting analysis: the
//! low-rank interference scaling law, the near-isometry of frozen random
//! projections, the forgetting-bound terms measured on real runs, and the
//! plasticity lower bound.

use serde::{Deserialize, Serialize};

use crate::continual::ContinualRun;
use crate::datastream::TaskStream;
use crate::error::{Error, Result};
use crate::metrics::DriftDiagnostics;
use crate::numerics::{
    frobenius_inner, frobenius_norm, gaussian_matrix, l2_distance, Matrix, SeededRng,
};

/// One cell of the interference table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterferenceCell {
    pub rank: usize,
    pub dim: usize,
    /// mean |cos(g_old, A·B)| with B drawn independently of g_old.
    pub mean_abs_cos_random: f64,
    /// mean |cos(g_old, A·B)| with B = Aᵀ·g_old, the update direction
    /// gradient descent on the old loss would take — the worst case the
    /// scaling law bounds.
    pub mean_abs_cos_aligned: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterferenceReport {
    pub cells: Vec<InterferenceCell>,
    pub d_out: usize,
    pub trials: usize,
    /// Least-squares slope of ln(mean|cos|) against ln(D), per column.
    pub fitted_exponent_random: f64,
    pub fitted_exponent_aligned: f64,
}

impl InterferenceReport {
    pub fn cell(&self, rank: usize, dim: usize) -> Option<&InterferenceCell> {
        self.cells.iter().find(|c| c.rank == rank && c.dim == dim)
    }
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

/// Monte-Carlo table of |cos(g_old, ΔW)| across (rank, dim) cells, with the
/// fitted exponent of D.
pub fn interference_scaling_probe(
    ranks: &[usize],
    dims: &[usize],
    d_out: usize,
    trials: usize,
    seed: u64,
) -> Result<InterferenceReport> {
    if ranks.is_empty() || dims.is_empty() || trials == 0 {
        return Err(Error::domain("probe needs ranks, dims, and trials"));
    }
    let mut cells = Vec::new();
    for (ri, &r) in ranks.iter().enumerate() {
        for (di, &d) in dims.iter().enumerate() {
            let mut rng = SeededRng::with_stream(seed, (ri * dims.len() + di) as u64);
            let mut acc_random = 0.0;
            let mut acc_aligned = 0.0;
            for _ in 0..trials {
                let a = gaussian_matrix(&mut rng, d, r, 1.0 / d as f64)?;
                let g = gaussian_matrix(&mut rng, d, d_out, 1.0)?;
                let g_norm = frobenius_norm(&g);

                let b = gaussian_matrix(&mut rng, r, d_out, 1.0)?;
                let delta = a.matmul(&b);
                let denom = g_norm * frobenius_norm(&delta);
                if denom > 0.0 {
                    acc_random += (frobenius_inner(&g, &delta)? / denom).abs();
                }

                let b_aligned = a.transpose_matmul(&g);
                let delta = a.matmul(&b_aligned);
                let denom = g_norm * frobenius_norm(&delta);
                if denom > 0.0 {
                    acc_aligned += (frobenius_inner(&g, &delta)? / denom).abs();
                }
            }
            cells.push(InterferenceCell {
                rank: r,
                dim: d,
                mean_abs_cos_random: acc_random / trials as f64,
                mean_abs_cos_aligned: acc_aligned / trials as f64,
            });
        }
    }
    let ln_d: Vec<f64> = cells.iter().map(|c| (c.dim as f64).ln()).collect();
    let ln_rand: Vec<f64> = cells.iter().map(|c| c.mean_abs_cos_random.ln()).collect();
    let ln_ali: Vec<f64> = cells.iter().map(|c| c.mean_abs_cos_aligned.ln()).collect();
    Ok(InterferenceReport {
        fitted_exponent_random: ls_slope(&ln_d, &ln_rand),
        fitted_exponent_aligned: ls_slope(&ln_d, &ln_ali),
        cells,
        d_out,
        trials,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsometryReport {
    pub d_in: usize,
    pub rank: usize,
    pub d_out: usize,
    pub trials: usize,
    pub threshold: f64,
    /// Max relative inner-product error over trials.
    pub eps_hat: f64,
    /// Fraction of trials with error above the threshold.
    pub violation_rate: f64,
    /// Mean of ⟨AU,AU⟩/‖U‖² over trials (expectation 1).
    pub mean_norm_ratio: f64,
}

/// Samples A ~ N(0, 1/D) with random coefficient pairs (U, V) and measures
/// |⟨AU,AV⟩ − ⟨U,V⟩| / (‖U‖·‖V‖).
pub fn isometry_probe(
    d_in: usize,
    rank: usize,
    d_out: usize,
    trials: usize,
    threshold: f64,
    seed: u64,
) -> Result<IsometryReport> {
    if trials == 0 {
        return Err(Error::domain("probe needs trials"));
    }
    let mut rng = SeededRng::with_stream(seed, 0);
    let mut eps_hat = 0.0f64;
    let mut violations = 0usize;
    let mut ratio_acc = 0.0;
    for _ in 0..trials {
        let a = gaussian_matrix(&mut rng, d_in, rank, 1.0 / d_in as f64)?;
        let u = gaussian_matrix(&mut rng, rank, d_out, 1.0)?;
        let v = gaussian_matrix(&mut rng, rank, d_out, 1.0)?;
        let au = a.matmul(&u);
        let av = a.matmul(&v);
        let eps = (frobenius_inner(&au, &av)? - frobenius_inner(&u, &v)?).abs()
            / (frobenius_norm(&u) * frobenius_norm(&v));
        eps_hat = eps_hat.max(eps);
        if eps > threshold {
            violations += 1;
        }
        ratio_acc += frobenius_inner(&au, &au)? / frobenius_norm(&u).powi(2);
    }
    Ok(IsometryReport {
        d_in,
        rank,
        d_out,
        trials,
        threshold,
        eps_hat,
        violation_rate: violations as f64 / trials as f64,
        mean_norm_ratio: ratio_acc / trials as f64,
    })
}

fn flatten_coeffs(coeffs: &[Matrix]) -> Vec<f64> {
    coeffs.iter().flat_map(|m| m.data.iter().copied()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    Some(dot / (na * nb))
}

const SUPPORT_EPS: f64 = 1e-12;

fn support_jaccard(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let sx = x.abs() > SUPPORT_EPS;
        let sy = y.abs() > SUPPORT_EPS;
        if sx || sy {
            union += 1;
            if sx && sy {
                inter += 1;
            }
        }
    }
    if union == 0 {
        None
    } else {
        Some(inter as f64 / union as f64)
    }
}

/// Mean ‖p_t(x) − p_{t−1}(x)‖₂ between consecutive snapshots over a set of
/// inputs.
fn mean_prediction_drift(
    run: &ContinualRun,
    task: usize, // 0-based index into task_logs; snapshots are offset by 1
    xs: &[Vec<f64>],
) -> Result<f64> {
    let before = &run.snapshots[task];
    let after = &run.snapshots[task + 1];
    let mut acc = 0.0;
    for x in xs {
        acc += l2_distance(&after.probabilities(x)?, &before.probabilities(x)?);
    }
    Ok(acc / xs.len() as f64)
}

/// Measures every term of the forgetting bound on a finished run: update
/// energies, mask overlap, arbitration tightness, projection distortion,
/// the effective rank ratio, layer energy weights, and the realized
/// prediction drift on held-out old-domain data. The bound constant c₀ is
/// fitted (max ratio of measured drift to the bound expression), not
/// assumed. Old-domain data is only ever touched here, after training.
pub fn bound_report(run: &ContinualRun, stream: &TaskStream) -> Result<DriftDiagnostics> {
    let logs = &run.task_logs;
    let mut diag = DriftDiagnostics::default();
    if logs.is_empty() {
        return Ok(diag);
    }

    diag.energy_per_task = logs.iter().map(|l| l.energy()).collect();

    // Pairwise coefficient overlap across tasks.
    let flats: Vec<Vec<f64>> = logs
        .iter()
        .filter(|l| !l.masked_coeffs.is_empty())
        .map(|l| flatten_coeffs(&l.masked_coeffs))
        .collect();
    if flats.len() >= 2 {
        let mut cos_acc = Vec::new();
        let mut jac_acc = Vec::new();
        for s in 0..flats.len() {
            for t in s + 1..flats.len() {
                if let Some(c) = cosine(&flats[s], &flats[t]) {
                    cos_acc.push(c.abs());
                }
                if let Some(j) = support_jaccard(&flats[s], &flats[t]) {
                    jac_acc.push(j);
                }
            }
        }
        diag.mask_overlap_rho = if cos_acc.is_empty() {
            None
        } else {
            Some(cos_acc.iter().sum::<f64>() / cos_acc.len() as f64)
        };
        diag.support_jaccard = if jac_acc.is_empty() {
            None
        } else {
            Some(jac_acc.iter().sum::<f64>() / jac_acc.len() as f64)
        };
    }

    diag.arbitration_tightness = logs
        .iter()
        .filter_map(|l| l.arbitration_tightness)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));

    // Projection distortion measured on the merged coefficients.
    let mut eps: Option<f64> = None;
    for log in logs {
        for (dn, en) in log
            .delta_norm_per_layer
            .iter()
            .zip(log.energy_per_layer.iter())
        {
            if *en > 0.0 {
                let e = (dn - en).abs() / en;
                eps = Some(eps.map_or(e, |a: f64| a.max(e)));
            }
        }
    }
    diag.isometry_error = eps;

    // κ: energy-weighted mean of the per-layer rank ratios.
    let mut num = 0.0;
    let mut den = 0.0;
    for log in logs {
        for ((d_in, rank), e) in log.layer_ranks.iter().zip(log.energy_per_layer.iter()) {
            num += (*rank as f64 / *d_in as f64) * e;
            den += e;
        }
    }
    diag.effective_rank_ratio = if den > 0.0 { Some(num / den) } else { None };

    // α_ℓ: per-layer share of the total merged energy, summed over tasks.
    if let Some(first) = logs.iter().find(|l| !l.delta_norm_per_layer.is_empty()) {
        let layers = first.delta_norm_per_layer.len();
        let mut per_layer = vec![0.0; layers];
        for log in logs {
            for (l, dn) in log.delta_norm_per_layer.iter().enumerate() {
                per_layer[l] += dn * dn;
            }
        }
        let total: f64 = per_layer.iter().sum();
        if total > 0.0 {
            diag.layer_energy_weights = per_layer.iter().map(|v| v / total).collect();
        }
    }

    // Measured drift. Task i (0-based) adapted domain i+2 in the stream:
    // old data are the test splits of domains 1..=i+1.
    for (i, _) in logs.iter().enumerate() {
        let mut old_xs = Vec::new();
        for d in &stream.domains[..i + 1] {
            old_xs.extend(d.test().xs);
        }
        diag.old_domain_drift.push(mean_prediction_drift(run, i, &old_xs)?);
        let new_xs = stream.domains[i + 1].test().xs;
        diag.new_domain_drift.push(mean_prediction_drift(run, i, &new_xs)?);
    }

    // Fitted c₀ for drift ≤ c₀·((κ+ρ)·ΣE + √δ + ε).
    let kappa = diag.effective_rank_ratio.unwrap_or(0.0);
    let rho = diag.mask_overlap_rho.unwrap_or(0.0);
    let total_energy: f64 = diag.energy_per_task.iter().sum();
    let expr = (kappa + rho) * total_energy
        + diag.arbitration_tightness.unwrap_or(0.0).max(0.0).sqrt()
        + diag.isometry_error.unwrap_or(0.0);
    if expr > 0.0 {
        diag.fitted_bound_constant = diag
            .old_domain_drift
            .iter()
            .map(|d| d / expr)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    }

    // Plasticity: drift on the current domain against (1−ρ)·E_t.
    for (i, log) in logs.iter().enumerate() {
        let e_t = log.energy();
        if e_t > 0.0 {
            let denom = (1.0 - rho) * e_t;
            diag.plasticity_ratios
                .push(Some(diag.new_domain_drift[i] / denom));
        } else {
            diag.plasticity_ratios.push(None);
        }
    }
    diag.plasticity_constant = diag
        .plasticity_ratios
        .iter()
        .flatten()
        .fold(None, |acc: Option<f64>, &r| Some(acc.map_or(r, |a| a.min(r))));

    Ok(diag)
}

/// The plasticity view of [`bound_report`]: per-task current-domain drift,
/// the ratios against (1−ρ)·E_t, and the fitted constant (their minimum).
pub fn plasticity_probe(
    run: &ContinualRun,
    stream: &TaskStream,
) -> Result<(Vec<f64>, Vec<Option<f64>>, Option<f64>)> {
    let diag = bound_report(run, stream)?;
    Ok((
        diag.new_domain_drift,
        diag.plasticity_ratios,
        diag.plasticity_constant,
    ))
}
