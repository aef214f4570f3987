//! Shared test harness: the central-finite-difference oracle and small
//! random problem builders.

#![allow(dead_code)]

pub mod gradcheck;

use keepgain::backbone::ModelParams;
use keepgain::config::ExperimentConfig;
use keepgain::datastream::{DriftSpec, SplitSizes, TaskStream};
use keepgain::numerics::SeededRng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Central finite differences of a scalar function over a flat parameter
/// vector.
pub fn finite_difference(
    params: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + FD_STEP;
        let up = f(&work);
        work[i] = orig - FD_STEP;
        let down = f(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * FD_STEP);
    }
    grad
}

/// Relative error between analytic and numerical gradients, as the norm of
/// the difference over the larger norm.
pub fn gradient_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn assert_gradients_match(analytic: &[f64], numeric: &[f64], context: &str) {
    let err = gradient_rel_error(analytic, numeric);
    assert!(
        err < FD_TOL,
        "{context}: gradient relative error {err:.3e} exceeds {FD_TOL:.0e}"
    );
}

/// Flat (interleaved weights/bias per layer) view of model parameters.
pub fn model_to_flat(model: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in &model.layers {
        out.extend_from_slice(&layer.weights.data);
        out.extend_from_slice(&layer.bias);
    }
    out
}

pub fn model_from_flat(template: &ModelParams, flat: &[f64]) -> ModelParams {
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
    assert_eq!(pos, flat.len());
    out
}

/// Random small model (≤3 layers, dims ≤8) with a labeled batch.
pub fn random_instance(
    seed: u64,
    layers: usize,
    batch: usize,
) -> (ModelParams, Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let mut dims = vec![3 + rng.index(6)];
    for _ in 0..layers.saturating_sub(1) {
        dims.push(3 + rng.index(6));
    }
    dims.push(2 + rng.index(2));
    let mut model = ModelParams::init(&dims, &mut rng).unwrap();
    // Random biases so gradients flow through them too.
    for layer in model.layers.iter_mut() {
        for b in layer.bias.iter_mut() {
            *b = 0.3 * rng.gaussian();
        }
    }
    let classes = model.output_dim();
    let xs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..dims[0]).map(|_| rng.gaussian()).collect())
        .collect();
    let ys: Vec<usize> = (0..batch).map(|_| rng.index(classes)).collect();
    (model, xs, ys)
}

/// The committed adversarial 2-domain stream.
pub fn adversarial_stream() -> TaskStream {
    keepgain::datastream::generate_temporal_stream(&DriftSpec::two_domain_adversarial()).unwrap()
}

/// A reduced-size temporal stream for quick integration runs.
pub fn small_temporal_stream(domains: usize) -> TaskStream {
    let spec = DriftSpec {
        domains,
        samples: SplitSizes {
            train: 400,
            valid: 120,
            test: 240,
        },
        ..DriftSpec::temporal_benchmark()
    };
    keepgain::datastream::generate_temporal_stream(&spec).unwrap()
}

/// Config tuned for fast tests (fewer epochs, small batches).
pub fn fast_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.training.max_epochs = 25;
    cfg.training.mask_epochs = 15;
    cfg.training.patience = 4;
    cfg
}
