//! Model-preserving baselines: output ensembles and parameter merging over
//! a pool of independently trained experts with a shared architecture.

use serde::{Deserialize, Serialize};

use crate::backbone::{
    argmax, backward_into, GradTarget, Gradients, Materialized, ModelParams, Upstream,
};
use crate::error::{Error, Result};
use crate::numerics::softmax;

/// Base model plus per-domain experts sharing its architecture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertPool {
    pub base: ModelParams,
    pub experts: Vec<ModelParams>,
    /// Domain ids of the experts.
    pub labels: Vec<usize>,
}

impl ExpertPool {
    fn check(&self) -> Result<()> {
        if self.experts.is_empty() {
            return Err(Error::domain("expert pool is empty"));
        }
        let dims = self.base.layer_dims();
        for (i, e) in self.experts.iter().enumerate() {
            if e.layer_dims() != dims {
                return Err(Error::shape(format!(
                    "expert {i} does not match the base architecture"
                )));
            }
        }
        Ok(())
    }
}

/// Majority class among expert predictions; ties resolve to the lowest
/// class id.
pub fn ensemble_vote(pool: &ExpertPool, x: &[f64]) -> Result<usize> {
    pool.check()?;
    let classes = pool.base.output_dim();
    let mut counts = vec![0usize; classes];
    for expert in &pool.experts {
        counts[expert.predict(x)?] += 1;
    }
    Ok(argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>()))
}

/// Softmax of the mean expert logits.
pub fn ensemble_average(pool: &ExpertPool, x: &[f64]) -> Result<Vec<f64>> {
    pool.check()?;
    let classes = pool.base.output_dim();
    let mut mean = vec![0.0; classes];
    for expert in &pool.experts {
        let trace = expert.forward(x)?;
        for (m, z) in mean.iter_mut().zip(trace.logits().iter()) {
            *m += z / pool.experts.len() as f64;
        }
    }
    Ok(softmax(&mean))
}

fn map_layers(
    template: &ModelParams,
    mut f: impl FnMut(usize, bool, usize) -> f64,
) -> ModelParams {
    // f(layer, is_bias, flat_index) -> value
    let mut out = template.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (i, v) in layer.weights.data.iter_mut().enumerate() {
            *v = f(l, false, i);
        }
        for (i, v) in layer.bias.iter_mut().enumerate() {
            *v = f(l, true, i);
        }
    }
    out
}

/// Element-wise mean of the expert parameters.
pub fn weight_average(pool: &ExpertPool) -> Result<ModelParams> {
    pool.check()?;
    let n = pool.experts.len() as f64;
    Ok(map_layers(&pool.base, |l, is_bias, i| {
        pool.experts
            .iter()
            .map(|e| {
                if is_bias {
                    e.layers[l].bias[i]
                } else {
                    e.layers[l].weights.data[i]
                }
            })
            .sum::<f64>()
            / n
    }))
}

/// θ_base + α·Σ task vectors, evaluated as (1 − α·n)·θ_base + α·Σ θ_t so
/// that α = 1 with a single expert reproduces the expert bit for bit.
pub fn task_arithmetic(pool: &ExpertPool, alpha: f64) -> Result<ModelParams> {
    pool.check()?;
    let n = pool.experts.len() as f64;
    Ok(map_layers(&pool.base, |l, is_bias, i| {
        let base = if is_bias {
            pool.base.layers[l].bias[i]
        } else {
            pool.base.layers[l].weights.data[i]
        };
        let sum: f64 = pool
            .experts
            .iter()
            .map(|e| {
                if is_bias {
                    e.layers[l].bias[i]
                } else {
                    e.layers[l].weights.data[i]
                }
            })
            .sum();
        (1.0 - alpha * n) * base + alpha * sum
    }))
}

fn flatten(model: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in &model.layers {
        out.extend_from_slice(&layer.weights.data);
        out.extend_from_slice(&layer.bias);
    }
    out
}

fn unflatten(template: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut out = template.clone();
    let mut pos = 0;
    for layer in out.layers.iter_mut() {
        let w = layer.weights.data.len();
        layer.weights.data.copy_from_slice(&flat[pos..pos + w]);
        pos += w;
        let b = layer.bias.len();
        layer.bias.copy_from_slice(&flat[pos..pos + b]);
        pos += b;
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Keeps the top K% of entries by magnitude (ties toward the lower flat
/// index), zeroing the rest.
fn trim_top_k(vec: &[f64], k_percent: f64) -> Vec<f64> {
    let n = vec.len();
    let keep = ((k_percent / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        vec[j]
            .abs()
            .partial_cmp(&vec[i].abs())
            .expect("NaN in task vector")
    });
    let mut out = vec![0.0; n];
    for &idx in order.iter().take(keep) {
        out[idx] = vec[idx];
    }
    out
}

fn ties_task_vectors(pool: &ExpertPool, k_percent: f64) -> Result<Vec<Vec<f64>>> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::domain(format!(
            "TIES top percentage must lie in (0, 100], got {k_percent}"
        )));
    }
    let base = flatten(&pool.base);
    Ok(pool
        .experts
        .iter()
        .map(|e| {
            let flat = flatten(e);
            let tau: Vec<f64> = flat.iter().zip(base.iter()).map(|(a, b)| a - b).collect();
            trim_top_k(&tau, k_percent)
        })
        .collect())
}

fn elect_signs(trimmed: &[Vec<f64>]) -> Vec<f64> {
    let n = trimmed[0].len();
    (0..n)
        .map(|i| sign(trimmed.iter().map(|t| t[i]).sum()))
        .collect()
}

/// Keeps only the entries whose sign matches the elected one; used both by
/// TIES itself and by the coefficient-learning preprocessing.
fn sign_consistent(trimmed: &[Vec<f64>], elected: &[f64]) -> Vec<Vec<f64>> {
    trimmed
        .iter()
        .map(|t| {
            t.iter()
                .zip(elected.iter())
                .map(|(&v, &g)| if g != 0.0 && sign(v) == g { v } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Trim / elect sign / disjoint mean, then θ_base + α·merged.
pub fn ties_merge(pool: &ExpertPool, k_percent: f64, alpha: f64) -> Result<ModelParams> {
    pool.check()?;
    let trimmed = ties_task_vectors(pool, k_percent)?;
    let elected = elect_signs(&trimmed);
    let consistent = sign_consistent(&trimmed, &elected);
    let n = trimmed[0].len();
    let mut merged = vec![0.0; n];
    for (i, m) in merged.iter_mut().enumerate() {
        let values: Vec<f64> = consistent
            .iter()
            .map(|t| t[i])
            .filter(|&v| v != 0.0)
            .collect();
        if !values.is_empty() {
            *m = values.iter().sum::<f64>() / values.len() as f64;
        }
    }
    let base = flatten(&pool.base);
    let flat: Vec<f64> = base
        .iter()
        .zip(merged.iter())
        .map(|(b, m)| b + alpha * m)
        .collect();
    Ok(unflatten(&pool.base, &flat))
}

/// Learned layer-wise merge coefficients λ_k^l.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeCoefficients {
    /// `coefficients[k][l]`: weight of task k at layer l.
    pub coefficients: Vec<Vec<f64>>,
}

/// Per-layer task vectors as (weight delta, bias delta).
type LayerDeltas = Vec<Vec<(Vec<f64>, Vec<f64>)>>; // [task][layer]

fn layer_task_vectors(pool: &ExpertPool) -> LayerDeltas {
    pool.experts
        .iter()
        .map(|e| {
            e.layers
                .iter()
                .zip(pool.base.layers.iter())
                .map(|(el, bl)| {
                    let dw: Vec<f64> = el
                        .weights
                        .data
                        .iter()
                        .zip(bl.weights.data.iter())
                        .map(|(a, b)| a - b)
                        .collect();
                    let db: Vec<f64> = el
                        .bias
                        .iter()
                        .zip(bl.bias.iter())
                        .map(|(a, b)| a - b)
                        .collect();
                    (dw, db)
                })
                .collect()
        })
        .collect()
}

fn merged_from_coefficients(
    pool: &ExpertPool,
    deltas: &LayerDeltas,
    lambda: &[Vec<f64>],
) -> ModelParams {
    let mut out = pool.base.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (k, task) in deltas.iter().enumerate() {
            let coeff = lambda[k][l];
            if coeff == 0.0 {
                continue;
            }
            let (dw, db) = &task[l];
            for (v, d) in layer.weights.data.iter_mut().zip(dw.iter()) {
                *v += coeff * d;
            }
            for (v, d) in layer.bias.iter_mut().zip(db.iter()) {
                *v += coeff * d;
            }
        }
    }
    out
}

/// Mean prediction entropy of a model over unlabeled inputs, plus its
/// gradient w.r.t. every model parameter.
fn entropy_and_grads(model: &ModelParams, unlabeled: &[Vec<f64>]) -> Result<(f64, Gradients)> {
    let mat = Materialized::plain(model);
    let mut grads = Gradients::zeros(&mat, GradTarget::Full);
    let n = unlabeled.len() as f64;
    let mut mean_h = 0.0;
    for x in unlabeled {
        let trace = mat.forward(x)?;
        let p = softmax(trace.logits());
        let h: f64 = -p
            .iter()
            .filter(|&&pi| pi > 0.0)
            .map(|&pi| pi * pi.ln())
            .sum::<f64>();
        mean_h += h / n;
        // dH/dz_j = −p_j (ln p_j + H).
        let up: Vec<f64> = p
            .iter()
            .map(|&pj| {
                if pj > 0.0 {
                    -pj * (pj.ln() + h) / n
                } else {
                    0.0
                }
            })
            .collect();
        backward_into(
            &mat,
            &trace,
            &Upstream::from_logits(up),
            GradTarget::Full,
            &mut grads,
        )?;
    }
    Ok((mean_h, grads))
}

const LAMBDA_INIT: f64 = 0.3;
const LAMBDA_ABORT: f64 = 10.0;

/// Mean prediction entropy of the λ-merged model over an unlabeled pool,
/// with its gradient w.r.t. the layer-wise coefficients `λ[k][l]`.
pub fn adamerging_objective(
    pool: &ExpertPool,
    unlabeled: &[Vec<f64>],
    lambda: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    pool.check()?;
    let deltas = layer_task_vectors(pool);
    entropy_with_coefficient_grads(pool, &deltas, unlabeled, lambda)
}

fn entropy_with_coefficient_grads(
    pool: &ExpertPool,
    deltas: &LayerDeltas,
    unlabeled: &[Vec<f64>],
    lambda: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let num_layers = pool.base.num_layers();
    let merged = merged_from_coefficients(pool, deltas, lambda);
    let (entropy, grads) = entropy_and_grads(&merged, unlabeled)?;
    let Gradients::Full { weights, biases } = &grads else {
        unreachable!()
    };
    let mut d_lambda = vec![vec![0.0; num_layers]; deltas.len()];
    for (k, task) in deltas.iter().enumerate() {
        for l in 0..num_layers {
            let (dw, db) = &task[l];
            let mut g = 0.0;
            for (gw, d) in weights[l].data.iter().zip(dw.iter()) {
                g += gw * d;
            }
            for (gb, d) in biases[l].iter().zip(db.iter()) {
                g += gb * d;
            }
            d_lambda[k][l] = g;
        }
    }
    Ok((entropy, d_lambda))
}

/// Entropy-minimization merging: layer-wise coefficients λ_k^l initialized
/// at 0.3 and fitted by gradient descent on the mean prediction entropy of
/// the merged model over an unlabeled pool. `ties_preprocess` (the "++"
/// variant) first trims and sign-elects the task vectors at the given top-K
/// percentage. Expert and base parameters are never altered.
pub fn adamerging(
    pool: &ExpertPool,
    unlabeled: &[Vec<f64>],
    steps: usize,
    lr: f64,
    ties_preprocess: Option<f64>,
) -> Result<(ModelParams, MergeCoefficients)> {
    pool.check()?;
    if unlabeled.is_empty() {
        return Err(Error::domain("adamerging needs a nonempty unlabeled pool"));
    }
    let mut deltas = layer_task_vectors(pool);
    if let Some(k_percent) = ties_preprocess {
        let trimmed = ties_task_vectors(pool, k_percent)?;
        let elected = elect_signs(&trimmed);
        let consistent = sign_consistent(&trimmed, &elected);
        // Rebuild layer-wise deltas from the flat preprocessed vectors.
        for (k, flat) in consistent.iter().enumerate() {
            let model = unflatten(&pool.base, flat);
            for (l, layer) in model.layers.iter().enumerate() {
                deltas[k][l] = (layer.weights.data.clone(), layer.bias.clone());
            }
        }
    }

    let num_tasks = pool.experts.len();
    let num_layers = pool.base.num_layers();
    let mut lambda = vec![vec![LAMBDA_INIT; num_layers]; num_tasks];

    for _ in 0..steps {
        let (_, d_lambda) = entropy_with_coefficient_grads(pool, &deltas, unlabeled, &lambda)?;
        for (k, row) in d_lambda.iter().enumerate() {
            for (l, g) in row.iter().enumerate() {
                lambda[k][l] -= lr * g;
                if lambda[k][l].abs() > LAMBDA_ABORT {
                    return Err(Error::training(
                        None,
                        format!(
                            "adamerging diverged: |λ[task {k}][layer {l}]| = {:.3} exceeds {LAMBDA_ABORT}",
                            lambda[k][l].abs()
                        ),
                    ));
                }
            }
        }
    }
    let merged = merged_from_coefficients(pool, &deltas, &lambda);
    Ok((
        merged,
        MergeCoefficients {
            coefficients: lambda,
        },
    ))
}
