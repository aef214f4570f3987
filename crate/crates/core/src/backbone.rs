//! MLP classifier with manual forward/backward passes.
//!
//! The network is a stack of linear layers with rectifier activations
//! between them and identity at the output. Forward passes can run with a
//! masked low-rank adapter set attached; backward passes compute gradients
//! for exactly one trainable scope: the full weights, the adapter expansion
//! matrices B (plus per-task bias offsets), or the adapter masks M.

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterSet;
use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, SeededRng};

/// One linear layer: weights are d_in×d_out, bias has length d_out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// The running model θ: an ordered stack of linear layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("model must have at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].weights.cols != pair[1].weights.rows {
                return Err(Error::shape(format!(
                    "layer {} output dim {} does not chain into layer {} input dim {}",
                    k,
                    pair[0].weights.cols,
                    k + 1,
                    pair[1].weights.rows
                )));
            }
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.cols {
                return Err(Error::shape(format!(
                    "layer {k} bias length {} != output dim {}",
                    layer.bias.len(),
                    layer.weights.cols
                )));
            }
        }
        Ok(ModelParams { layers })
    }

    /// Seeded He-style initialization: weights N(0, 2/d_in), biases zero.
    /// `dims` lists input dim, hidden widths, and the class count.
    pub fn init(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape("need at least input and output dims"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (d_in, d_out) = (pair[0], pair[1]);
            let weights =
                crate::numerics::gaussian_matrix(rng, d_in, d_out, 2.0 / d_in as f64)?;
            layers.push(LayerParams {
                weights,
                bias: vec![0.0; d_out],
            });
        }
        ModelParams::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.weights.rows, l.weights.cols))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        Materialized::plain(self).forward(x)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(self.forward(x)?.logits()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.forward(x)?;
        Ok(argmax(logits.logits()))
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-layer record of a forward pass: pre-activations, activations, and
/// the penultimate feature vector used by latent arbitration.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// z_ℓ for every layer.
    pub pre: Vec<Vec<f64>>,
    /// h_ℓ = relu(z_ℓ) for hidden layers; h_{L-1} = z_{L-1} (identity output).
    pub act: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().unwrap()
    }

    /// Features entering the final layer (the input itself for a 1-layer net).
    pub fn penultimate(&self) -> &[f64] {
        let n = self.act.len();
        if n >= 2 {
            &self.act[n - 2]
        } else {
            &self.input
        }
    }

    fn matches(&self, mat: &Materialized) -> bool {
        self.pre.len() == mat.weights.len()
            && self.input.len() == mat.weights[0].rows
            && self
                .pre
                .iter()
                .zip(mat.weights.iter())
                .all(|(z, w)| z.len() == w.cols)
    }
}

/// Effective per-layer weights/biases for a forward pass: the plain model,
/// or the model with an adapter set folded in as W + A(M⊙B), b + Δb.
///
/// Merging uses the same fold, so a post-merge forward is bit-identical to
/// an adapter-attached forward.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Materialized {
    pub fn plain(model: &ModelParams) -> Self {
        Materialized {
            weights: model.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: model.layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }

    pub fn with_adapters(model: &ModelParams, set: &AdapterSet) -> Self {
        let mut out = Materialized::plain(model);
        for adapter in &set.adapters {
            let l = adapter.layer;
            out.weights[l] = out.weights[l].add(&adapter.delta());
            for (b, d) in out.biases[l].iter_mut().zip(adapter.bias_delta.iter()) {
                *b += d;
            }
        }
        out
    }

    pub fn maybe_adapted(model: &ModelParams, set: Option<&AdapterSet>) -> Self {
        match set {
            Some(s) => Materialized::with_adapters(model, s),
            None => Materialized::plain(model),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.weights[0].rows {
            return Err(Error::shape(format!(
                "input length {} != model input dim {}",
                x.len(),
                self.weights[0].rows
            )));
        }
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = Vec::with_capacity(self.weights.len());
        let mut h: Vec<f64> = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            let mut z = w.vec_mul(&h);
            for (zi, bi) in z.iter_mut().zip(b.iter()) {
                *zi += bi;
            }
            h = if l < last {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            act.push(h.clone());
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre,
            act,
        })
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(self.forward(x)?.logits()))
    }
}

/// Which parameters a backward pass differentiates.
#[derive(Debug, Clone, Copy)]
pub enum GradTarget<'a> {
    /// Full weight matrices and biases of every layer.
    Full,
    /// Adapter expansion matrices B and the per-task bias offsets.
    AdapterB(&'a AdapterSet),
    /// Adapter masks M only.
    AdapterMask(&'a AdapterSet),
}

/// Gradients for one [`GradTarget`]; tensors parallel the model layers (or
/// the adapter list for adapter scopes).
#[derive(Debug, Clone)]
pub enum Gradients {
    Full {
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
    },
    AdapterB {
        b: Vec<Matrix>,
        bias_delta: Vec<Vec<f64>>,
    },
    AdapterMask {
        mask: Vec<Matrix>,
    },
}

impl Gradients {
    pub fn zeros(mat: &Materialized, target: GradTarget<'_>) -> Gradients {
        match target {
            GradTarget::Full => Gradients::Full {
                weights: mat
                    .weights
                    .iter()
                    .map(|w| Matrix::zeros(w.rows, w.cols))
                    .collect(),
                biases: mat.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            },
            GradTarget::AdapterB(set) => Gradients::AdapterB {
                b: set
                    .adapters
                    .iter()
                    .map(|a| Matrix::zeros(a.b.rows, a.b.cols))
                    .collect(),
                bias_delta: set
                    .adapters
                    .iter()
                    .map(|a| vec![0.0; a.bias_delta.len()])
                    .collect(),
            },
            GradTarget::AdapterMask(set) => Gradients::AdapterMask {
                mask: set
                    .adapters
                    .iter()
                    .map(|a| Matrix::zeros(a.b.rows, a.b.cols))
                    .collect(),
            },
        }
    }

    pub fn scale(&mut self, s: f64) {
        match self {
            Gradients::Full { weights, biases } => {
                for w in weights {
                    for v in &mut w.data {
                        *v *= s;
                    }
                }
                for b in biases {
                    for v in b {
                        *v *= s;
                    }
                }
            }
            Gradients::AdapterB { b, bias_delta } => {
                for m in b {
                    for v in &mut m.data {
                        *v *= s;
                    }
                }
                for d in bias_delta {
                    for v in d {
                        *v *= s;
                    }
                }
            }
            Gradients::AdapterMask { mask } => {
                for m in mask {
                    for v in &mut m.data {
                        *v *= s;
                    }
                }
            }
        }
    }

    /// Flat views over every gradient tensor, interleaved per layer
    /// (weights then bias), matching the parameter slice helpers below.
    pub fn flat_slices(&self) -> Vec<&[f64]> {
        match self {
            Gradients::Full { weights, biases } => weights
                .iter()
                .zip(biases.iter())
                .flat_map(|(w, b)| [w.data.as_slice(), b.as_slice()])
                .collect(),
            Gradients::AdapterB { b, bias_delta } => b
                .iter()
                .zip(bias_delta.iter())
                .flat_map(|(m, d)| [m.data.as_slice(), d.as_slice()])
                .collect(),
            Gradients::AdapterMask { mask } => {
                mask.iter().map(|m| m.data.as_slice()).collect()
            }
        }
    }
}

/// Loss gradient entering the network: one vector for the logits plus
/// optional injections at hidden activations (used by feature-level losses).
#[derive(Debug, Clone)]
pub struct Upstream {
    pub logits: Vec<f64>,
    /// `hidden[ℓ]` adds to dL/dh_ℓ for hidden layer ℓ (0-based, excludes the
    /// output layer).
    pub hidden: Vec<Option<Vec<f64>>>,
}

impl Upstream {
    pub fn from_logits(g: Vec<f64>) -> Self {
        Upstream {
            logits: g,
            hidden: Vec::new(),
        }
    }

    pub fn with_hidden(mut self, layer: usize, g: Vec<f64>) -> Self {
        if self.hidden.len() <= layer {
            self.hidden.resize(layer + 1, None);
        }
        match &mut self.hidden[layer] {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g.iter()) {
                    *e += v;
                }
            }
            slot => *slot = Some(g),
        }
        self
    }
}

/// Backpropagates one sample's upstream gradient, accumulating into `grads`.
///
/// `trace` must come from a forward pass on the same materialized model;
/// a mismatched (stale) trace is rejected.
pub fn backward_into(
    mat: &Materialized,
    trace: &ForwardTrace,
    upstream: &Upstream,
    target: GradTarget<'_>,
    grads: &mut Gradients,
) -> Result<()> {
    if !trace.matches(mat) {
        return Err(Error::shape(
            "stale trace: shape does not match the model it is applied to",
        ));
    }
    if upstream.logits.len() != mat.weights.last().unwrap().cols {
        return Err(Error::shape("upstream logits length mismatch"));
    }

    let num_layers = mat.weights.len();
    let mut delta = upstream.logits.clone();
    for l in (0..num_layers).rev() {
        let h_prev: &[f64] = if l == 0 {
            &trace.input
        } else {
            &trace.act[l - 1]
        };

        match (&target, &mut *grads) {
            (GradTarget::Full, Gradients::Full { weights, biases }) => {
                let gw = &mut weights[l];
                for (i, &hi) in h_prev.iter().enumerate() {
                    if hi == 0.0 {
                        continue;
                    }
                    let row = &mut gw.data[i * gw.cols..(i + 1) * gw.cols];
                    for (g, &d) in row.iter_mut().zip(delta.iter()) {
                        *g += hi * d;
                    }
                }
                for (g, &d) in biases[l].iter_mut().zip(delta.iter()) {
                    *g += d;
                }
            }
            (GradTarget::AdapterB(set), Gradients::AdapterB { b, bias_delta }) => {
                if let Some(idx) = set.index_of_layer(l) {
                    let adapter = &set.adapters[idx];
                    // dC = Aᵀ (h_prevᵀ δ) done as outer(h_prev·A, δ).
                    let u = project_down(&adapter.a, h_prev);
                    let gb = &mut b[idx];
                    accumulate_coeff_grad(gb, &u, &delta, adapter.mask.as_ref(), None);
                    for (g, &d) in bias_delta[idx].iter_mut().zip(delta.iter()) {
                        *g += d;
                    }
                }
            }
            (GradTarget::AdapterMask(set), Gradients::AdapterMask { mask }) => {
                if let Some(idx) = set.index_of_layer(l) {
                    let adapter = &set.adapters[idx];
                    let u = project_down(&adapter.a, h_prev);
                    let gm = &mut mask[idx];
                    accumulate_coeff_grad(gm, &u, &delta, None, Some(&adapter.b));
                }
            }
            _ => unreachable!("grads built for a different target"),
        }

        if l == 0 {
            break;
        }
        // dL/dh_{l-1} via the effective weights, plus any injected gradient.
        let mut dh = mat.weights[l].mul_vec(&delta);
        if let Some(Some(inj)) = upstream.hidden.get(l - 1) {
            for (d, v) in dh.iter_mut().zip(inj.iter()) {
                *d += v;
            }
        }
        let z_prev = &trace.pre[l - 1];
        delta = dh
            .iter()
            .zip(z_prev.iter())
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
    }
    Ok(())
}

/// Gradient of one sample; convenience over [`backward_into`].
pub fn backward(
    mat: &Materialized,
    trace: &ForwardTrace,
    upstream: &Upstream,
    target: GradTarget<'_>,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros(mat, target);
    backward_into(mat, trace, upstream, target, &mut grads)?;
    Ok(grads)
}

/// h·A for h of length d_in → vector of length r.
fn project_down(a: &Matrix, h: &[f64]) -> Vec<f64> {
    a.vec_mul(h)
}

/// grad += outer(u, δ) ⊙ gate, where the gate is the mask (for dB) or the
/// expansion matrix B (for dM); no gate means the plain outer product.
fn accumulate_coeff_grad(
    grad: &mut Matrix,
    u: &[f64],
    delta: &[f64],
    mask_gate: Option<&Matrix>,
    b_gate: Option<&Matrix>,
) {
    for (k, &uk) in u.iter().enumerate() {
        if uk == 0.0 {
            continue;
        }
        let row = &mut grad.data[k * grad.cols..(k + 1) * grad.cols];
        match (mask_gate, b_gate) {
            (Some(m), None) => {
                let mrow = m.row(k);
                for ((g, &d), &gate) in row.iter_mut().zip(delta.iter()).zip(mrow.iter()) {
                    *g += uk * d * gate;
                }
            }
            (None, Some(b)) => {
                let brow = b.row(k);
                for ((g, &d), &gate) in row.iter_mut().zip(delta.iter()).zip(brow.iter()) {
                    *g += uk * d * gate;
                }
            }
            _ => {
                for (g, &d) in row.iter_mut().zip(delta.iter()) {
                    *g += uk * d;
                }
            }
        }
    }
}

/// Flat tensor sizes of a model, interleaved per layer (weights, bias).
pub fn model_param_sizes(model: &ModelParams) -> Vec<usize> {
    model
        .layers
        .iter()
        .flat_map(|l| [l.weights.data.len(), l.bias.len()])
        .collect()
}

/// Mutable flat views over a model's parameters, matching
/// [`model_param_sizes`] and [`Gradients::flat_slices`].
pub fn model_param_slices(model: &mut ModelParams) -> Vec<&mut [f64]> {
    model
        .layers
        .iter_mut()
        .flat_map(|l| [l.weights.data.as_mut_slice(), l.bias.as_mut_slice()])
        .collect()
}

/// Cross-entropy on raw logits: loss = −ln p\[label\] with p = softmax(logits);
/// gradient = softmax − one-hot.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::domain(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let p = softmax(logits);
    let loss = -(p[label].max(1e-300)).ln();
    let mut grad = p;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Optimizer configuration; Adam is the default, plain SGD via config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First/second-moment state for one flat parameter tensor.
#[derive(Debug, Clone)]
struct MomentState {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adaptive-moment (or plain SGD) optimizer over a fixed list of flat
/// parameter tensors. Deterministic given its state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    moments: Vec<MomentState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, tensor_sizes: &[usize]) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: tensor_sizes
                .iter()
                .map(|&n| MomentState {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    /// One update step. `params` and `grads` must parallel the tensor list
    /// given at construction. A non-finite gradient aborts with a training
    /// error.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        assert_eq!(params.len(), self.moments.len(), "optimizer tensor count");
        assert_eq!(grads.len(), self.moments.len(), "gradient tensor count");
        for g in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::training(None, "non-finite gradient".to_string()));
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for ((p, g), state) in params
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(self.moments.iter_mut())
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * gi;
                        state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * gi * gi;
                        let mhat = state.m[i] / bc1;
                        let vhat = state.v[i] / bc2;
                        p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::new_adapter_set;

    fn single_layer(weights: Matrix, bias: Vec<f64>) -> ModelParams {
        ModelParams::new(vec![LayerParams { weights, bias }]).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_logits_and_uniform_softmax() {
        let model = single_layer(Matrix::zeros(3, 2), vec![0.0, 0.0]);
        let trace = model.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(trace.logits(), &[0.0, 0.0]);
        assert_eq!(model.probabilities(&[0.3, -1.0, 2.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let model = single_layer(Matrix::identity(2), vec![0.0, 0.0]);
        let trace = model.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(trace.logits(), &[1.0, 2.0]);
    }

    #[test]
    fn adapters_with_zero_mask_match_plain_forward() {
        let mut rng = SeededRng::new(3);
        let model = ModelParams::init(&[4, 3, 2], &mut rng).unwrap();
        let mut set = new_adapter_set(&model, 2, &mut rng).unwrap();
        for a in &mut set.adapters {
            // Nonzero B, all-zero mask: ΔW must vanish exactly.
            for v in &mut a.b.data {
                *v = 1.25;
            }
            a.mask = Some(Matrix::zeros(a.b.rows, a.b.cols));
        }
        let x = vec![0.5, -0.3, 0.9, 0.1];
        let plain = model.forward(&x).unwrap();
        let adapted = Materialized::with_adapters(&model, &set).forward(&x).unwrap();
        assert_eq!(plain.logits(), adapted.logits());
        assert_eq!(plain.act, adapted.act);
    }

    #[test]
    fn backward_single_layer_outer_product() {
        // loss = logits[0] on a 3→2 layer: dW = x ⊗ e0.
        let model = single_layer(Matrix::zeros(3, 2), vec![0.0, 0.0]);
        let mat = Materialized::plain(&model);
        let x = [1.0, -2.0, 0.5];
        let trace = mat.forward(&x).unwrap();
        let up = Upstream::from_logits(vec![1.0, 0.0]);
        let grads = backward(&mat, &trace, &up, GradTarget::Full).unwrap();
        let Gradients::Full { weights, biases } = grads else {
            panic!()
        };
        assert_eq!(weights[0].data, vec![1.0, 0.0, -2.0, 0.0, 0.5, 0.0]);
        assert_eq!(biases[0], vec![1.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(11);
        let model = ModelParams::init(&[3, 4, 2], &mut rng).unwrap();
        let mat = Materialized::plain(&model);
        let trace = mat.forward(&[0.1, 0.2, 0.3]).unwrap();
        let up = Upstream::from_logits(vec![0.0, 0.0]);
        let grads = backward(&mat, &trace, &up, GradTarget::Full).unwrap();
        for slice in grads.flat_slices() {
            assert!(slice.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut rng = SeededRng::new(1);
        let small = ModelParams::init(&[2, 2], &mut rng).unwrap();
        let big = ModelParams::init(&[3, 4, 2], &mut rng).unwrap();
        let trace = small.forward(&[0.1, 0.2]).unwrap();
        let mat = Materialized::plain(&big);
        let up = Upstream::from_logits(vec![0.0, 0.0]);
        assert!(backward(&mat, &trace, &up, GradTarget::Full).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);

        let (loss, _) = cross_entropy(&[10.0, -10.0], 0).unwrap();
        assert!(loss < 1e-8);

        let (_, grad) = cross_entropy(&[1.3, -0.2, 0.8], 2).unwrap();
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn optimizer_zero_gradient_keeps_params() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, &[2]);
        let mut p = vec![1.0, -2.0];
        opt.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn optimizer_descends_on_quadratic() {
        // f(w) = w², far enough from 0 that one small step shrinks |w|.
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut opt = Optimizer::new(kind, 1e-3, &[1]);
            let mut w = vec![1.0];
            let g = vec![2.0 * w[0]];
            opt.step(&mut [&mut w], &[&g]).unwrap();
            assert!(w[0].abs() < 1.0, "{kind:?} did not descend");
        }
    }

    #[test]
    fn optimizer_is_deterministic() {
        let run = || {
            let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2, &[2]);
            let mut p = vec![0.5, -0.5];
            for step in 0..20 {
                let g = vec![p[0] + step as f64 * 0.01, p[1] * 2.0];
                opt.step(&mut [&mut p], &[&g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn optimizer_rejects_nan_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, &[1]);
        let mut p = vec![1.0];
        assert!(opt.step(&mut [&mut p], &[&[f64::NAN]]).is_err());
    }
}
