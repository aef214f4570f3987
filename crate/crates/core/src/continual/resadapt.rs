//! Residual-adapter baseline: the base network stays frozen while a single
//! stack of bottleneck adapters, one after each hidden layer, is continually
//! fine-tuned. Each adapter computes x + U(relu(D(LN(x)))) with a
//! zero-initialized up-projection, so the stack starts as the identity.

use serde::{Deserialize, Serialize};

use super::EarlyStop;
use crate::backbone::{cross_entropy, ModelParams, Optimizer};
use crate::config::TrainingConfig;
use crate::datastream::SplitView;
use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, Matrix, SeededRng};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualAdapter {
    /// Down-projection, dim×b.
    pub down: Matrix,
    /// Up-projection, b×dim; zero at creation.
    pub up: Matrix,
}

/// One adapter per hidden layer of the host model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualAdapterStack {
    pub adapters: Vec<ResidualAdapter>,
    pub bottleneck: usize,
}

impl ResidualAdapterStack {
    pub fn new(model: &ModelParams, bottleneck: usize, rng: &mut SeededRng) -> Result<Self> {
        if model.num_layers() < 2 {
            return Err(Error::shape(
                "residual adapters need at least one hidden layer",
            ));
        }
        if bottleneck == 0 {
            return Err(Error::domain("bottleneck must be at least 1"));
        }
        let mut adapters = Vec::new();
        for layer in model.layers.iter().take(model.num_layers() - 1) {
            let dim = layer.weights.cols;
            adapters.push(ResidualAdapter {
                down: gaussian_matrix(rng, dim, bottleneck, 1.0 / dim as f64)?,
                up: Matrix::zeros(bottleneck, dim),
            });
        }
        Ok(ResidualAdapterStack {
            adapters,
            bottleneck,
        })
    }
}

/// Forward intermediates needed for the adapter backward pass.
#[derive(Debug, Clone)]
pub struct ResadaptTrace {
    pub input: Vec<f64>,
    /// Pre-activations per layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-relu activations per hidden layer (before the adapter).
    pub act: Vec<Vec<f64>>,
    /// Adapter outputs per hidden layer (what feeds the next layer).
    pub adapted: Vec<Vec<f64>>,
    /// LayerNorm caches per hidden layer: (x̂, 1/std).
    ln: Vec<(Vec<f64>, f64)>,
    /// Bottleneck caches per hidden layer: (u, relu(u)).
    mid: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ResadaptTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

fn layer_norm(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

pub fn resadapt_forward(
    model: &ModelParams,
    stack: &ResidualAdapterStack,
    x: &[f64],
) -> Result<ResadaptTrace> {
    if stack.adapters.len() != model.num_layers() - 1 {
        return Err(Error::shape("adapter stack does not match the model"));
    }
    let last = model.num_layers() - 1;
    let mut trace = ResadaptTrace {
        input: x.to_vec(),
        pre: Vec::new(),
        act: Vec::new(),
        adapted: Vec::new(),
        ln: Vec::new(),
        mid: Vec::new(),
    };
    let mut h = x.to_vec();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut z = layer.weights.vec_mul(&h);
        for (zi, bi) in z.iter_mut().zip(layer.bias.iter()) {
            *zi += bi;
        }
        trace.pre.push(z.clone());
        if l == last {
            break;
        }
        let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        trace.act.push(a.clone());

        let adapter = &stack.adapters[l];
        let (xhat, inv_std) = layer_norm(&a);
        let u = adapter.down.vec_mul(&xhat);
        let v: Vec<f64> = u.iter().map(|&t| t.max(0.0)).collect();
        let proj = adapter.up.vec_mul(&v);
        let out: Vec<f64> = a.iter().zip(proj.iter()).map(|(ai, pi)| ai + pi).collect();
        trace.ln.push((xhat, inv_std));
        trace.mid.push((u, v));
        trace.adapted.push(out.clone());
        h = out;
    }
    Ok(trace)
}

/// Gradients of a scalar loss (given d logits) w.r.t. the adapter stack
/// only; the base model is frozen.
pub fn resadapt_backward(
    model: &ModelParams,
    stack: &ResidualAdapterStack,
    trace: &ResadaptTrace,
    d_logits: &[f64],
) -> Result<Vec<(Matrix, Matrix)>> {
    let mut grads: Vec<(Matrix, Matrix)> = stack
        .adapters
        .iter()
        .map(|a| {
            (
                Matrix::zeros(a.down.rows, a.down.cols),
                Matrix::zeros(a.up.rows, a.up.cols),
            )
        })
        .collect();
    let mut delta = d_logits.to_vec();
    for l in (1..model.num_layers()).rev() {
        // Gradient at the input of layer l = adapter output of layer l−1.
        let dh_out = model.layers[l].weights.mul_vec(&delta);
        let idx = l - 1;
        let adapter = &stack.adapters[idx];
        let (u, v) = &trace.mid[idx];
        let (xhat, inv_std) = &trace.ln[idx];

        // Through the bottleneck: out = a + up(relu(down(LN(a)))).
        let dv = adapter.up.mul_vec(&dh_out);
        let (gd, gu) = &mut grads[idx];
        for (k, &vk) in v.iter().enumerate() {
            if vk == 0.0 {
                continue;
            }
            let row = &mut gu.data[k * gu.cols..(k + 1) * gu.cols];
            for (g, &d) in row.iter_mut().zip(dh_out.iter()) {
                *g += vk * d;
            }
        }
        let du: Vec<f64> = dv
            .iter()
            .zip(u.iter())
            .map(|(&g, &ui)| if ui > 0.0 { g } else { 0.0 })
            .collect();
        let dxhat = adapter.down.mul_vec(&du);
        for (i, &xi) in xhat.iter().enumerate() {
            let row = &mut gd.data[i * gd.cols..(i + 1) * gd.cols];
            for (g, &d) in row.iter_mut().zip(du.iter()) {
                *g += xi * d;
            }
        }
        // LayerNorm backward (no affine parameters).
        let n = xhat.len() as f64;
        let mean_dx = dxhat.iter().sum::<f64>() / n;
        let mean_dx_xhat =
            dxhat.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let da_ln: Vec<f64> = dxhat
            .iter()
            .zip(xhat.iter())
            .map(|(&dx, &xh)| inv_std * (dx - mean_dx - xh * mean_dx_xhat))
            .collect();
        let da: Vec<f64> = dh_out
            .iter()
            .zip(da_ln.iter())
            .map(|(a, b)| a + b)
            .collect();
        delta = da
            .iter()
            .zip(trace.pre[idx].iter())
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
    }
    Ok(grads)
}

fn stack_objective(
    model: &ModelParams,
    stack: &ResidualAdapterStack,
    split: &SplitView,
) -> Result<f64> {
    let mut ce = 0.0;
    for (x, &y) in split.xs.iter().zip(split.ys.iter()) {
        ce += cross_entropy(resadapt_forward(model, stack, x)?.logits(), y)?.0;
    }
    Ok(ce / split.len() as f64)
}

/// Continues fine-tuning the stack on one task (cross-entropy, early
/// stopping); base weights are never touched.
pub(crate) fn fit_stack(
    model: &ModelParams,
    stack: &mut ResidualAdapterStack,
    train: &SplitView,
    valid: &SplitView,
    tp: &TrainingConfig,
    rng: &mut SeededRng,
    task: Option<usize>,
) -> Result<usize> {
    let sizes: Vec<usize> = stack
        .adapters
        .iter()
        .flat_map(|a| [a.down.data.len(), a.up.data.len()])
        .collect();
    let mut opt = Optimizer::new(tp.optimizer, tp.lr, &sizes);
    let initial = stack_objective(model, stack, valid)?;
    let mut stop = EarlyStop::new(tp.patience, initial, stack);
    let mut epochs = 0;

    for _ in 0..tp.max_epochs {
        epochs += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(tp.batch_size) {
            let n = chunk.len() as f64;
            let mut grads: Vec<(Matrix, Matrix)> = stack
                .adapters
                .iter()
                .map(|a| {
                    (
                        Matrix::zeros(a.down.rows, a.down.cols),
                        Matrix::zeros(a.up.rows, a.up.cols),
                    )
                })
                .collect();
            for &i in chunk {
                let trace = resadapt_forward(model, stack, &train.xs[i])?;
                let (_, mut g) = cross_entropy(trace.logits(), train.ys[i])?;
                for v in g.iter_mut() {
                    *v /= n;
                }
                let sample = resadapt_backward(model, stack, &trace, &g)?;
                for ((gd, gu), (sd, su)) in grads.iter_mut().zip(sample.into_iter()) {
                    gd.add_assign(&sd);
                    gu.add_assign(&su);
                }
            }
            let grad_slices: Vec<&[f64]> = grads
                .iter()
                .flat_map(|(d, u)| [d.data.as_slice(), u.data.as_slice()])
                .collect();
            let mut params: Vec<&mut [f64]> = stack
                .adapters
                .iter_mut()
                .flat_map(|a| [a.down.data.as_mut_slice(), a.up.data.as_mut_slice()])
                .collect();
            opt.step(&mut params, &grad_slices).map_err(|e| {
                match (e, task) {
                    (Error::Training { message, .. }, Some(t)) => Error::training(Some(t), message),
                    (e, _) => e,
                }
            })?;
        }
        let vloss = stack_objective(model, stack, valid)?;
        if stop.observe(vloss, stack) {
            break;
        }
    }
    *stack = stop.into_best();
    Ok(epochs)
}
