//! Gradient-check cases shared between the gradients suite and the
//! acceptance harness. Each case builds a random small instance, computes
//! the analytic gradient, and panics unless it matches central finite
//! differences.

use super::{
    assert_gradients_match, finite_difference, model_from_flat, model_to_flat, random_instance,
};
use keepgain::adapters::{init_mask, new_adapter_set, MaskInit};
use keepgain::arbitration::{
    evaluate_teachers, mask_loss_and_grad, sparse_group_lasso, ArbitrationConfig,
    ArbitrationMode, Divergence, Thresholds,
};
use keepgain::backbone::{
    backward_into, cross_entropy, GradTarget, Gradients, Materialized, ModelParams, Upstream,
};
use keepgain::config::{Co2lConfig, LwfConfig, PodnetConfig};
use keepgain::continual::{
    resadapt_backward, resadapt_forward, AuxLoss, Co2lLoss, LwfLoss, PodnetLoss,
    ResidualAdapterStack,
};
use keepgain::merging::{adamerging_objective, ExpertPool};
use keepgain::numerics::{Matrix, SeededRng};

pub fn check_full_weights(seed: u64) {
    let (model, xs, ys) = random_instance(100 + seed, 1 + (seed as usize % 3), 5);
    let mat = Materialized::plain(&model);
    let mut grads = Gradients::zeros(&mat, GradTarget::Full);
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys.iter()) {
        let trace = mat.forward(x).unwrap();
        let (_, g) = cross_entropy(trace.logits(), y).unwrap();
        let up = Upstream::from_logits(g.iter().map(|v| v / n).collect());
        backward_into(&mat, &trace, &up, GradTarget::Full, &mut grads).unwrap();
    }
    let analytic: Vec<f64> = grads.flat_slices().concat();
    let flat = model_to_flat(&model);
    let numeric = finite_difference(&flat, |p| {
        let m = model_from_flat(&model, p);
        let mat = Materialized::plain(&m);
        let mut acc = 0.0;
        for (x, &y) in xs.iter().zip(ys.iter()) {
            acc += cross_entropy(mat.forward(x).unwrap().logits(), y).unwrap().0;
        }
        acc / xs.len() as f64
    });
    assert_gradients_match(&analytic, &numeric, &format!("full weights seed {seed}"));
}

pub fn check_adapter_b(seed: u64) {
    let (model, xs, ys) = random_instance(200 + seed, 2, 4);
    let mut rng = SeededRng::new(900 + seed);
    let mut set = new_adapter_set(&model, 2, &mut rng).unwrap();
    for a in &mut set.adapters {
        for v in &mut a.b.data {
            *v = 0.5 * rng.gaussian();
        }
        for v in &mut a.bias_delta {
            *v = 0.2 * rng.gaussian();
        }
    }
    if seed % 2 == 1 {
        init_mask(&mut set, 0.5, MaskInit::TopRatio).unwrap();
    }

    let mat = Materialized::with_adapters(&model, &set);
    let mut grads = Gradients::zeros(&mat, GradTarget::AdapterB(&set));
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys.iter()) {
        let trace = mat.forward(x).unwrap();
        let (_, g) = cross_entropy(trace.logits(), y).unwrap();
        let up = Upstream::from_logits(g.iter().map(|v| v / n).collect());
        backward_into(&mat, &trace, &up, GradTarget::AdapterB(&set), &mut grads).unwrap();
    }
    let analytic: Vec<f64> = grads.flat_slices().concat();

    let mut flat = Vec::new();
    for a in &set.adapters {
        flat.extend_from_slice(&a.b.data);
        flat.extend_from_slice(&a.bias_delta);
    }
    let numeric = finite_difference(&flat, |p| {
        let mut s = set.clone();
        let mut pos = 0;
        for a in s.adapters.iter_mut() {
            let nb = a.b.data.len();
            a.b.data.copy_from_slice(&p[pos..pos + nb]);
            pos += nb;
            let nd = a.bias_delta.len();
            a.bias_delta.copy_from_slice(&p[pos..pos + nd]);
            pos += nd;
        }
        let mat = Materialized::with_adapters(&model, &s);
        let mut acc = 0.0;
        for (x, &y) in xs.iter().zip(ys.iter()) {
            acc += cross_entropy(mat.forward(x).unwrap().logits(), y).unwrap().0;
        }
        acc / xs.len() as f64
    });
    assert_gradients_match(&analytic, &numeric, &format!("adapter B seed {seed}"));
}

pub fn check_mask_composite(seed: u64, mode: ArbitrationMode, divergence: Divergence) {
    let (model, xs, ys) = random_instance(300 + seed, 2, 5);
    let mut rng = SeededRng::new(700 + seed);
    let mut set = new_adapter_set(&model, 2, &mut rng).unwrap();
    for a in &mut set.adapters {
        for v in &mut a.b.data {
            *v = 0.6 * rng.gaussian();
        }
        for v in &mut a.bias_delta {
            *v = 0.1 * rng.gaussian();
        }
    }
    let f_old = Materialized::plain(&model);
    let f_new = Materialized::with_adapters(&model, &set);
    init_mask(&mut set, 1.0, MaskInit::TopRatio).unwrap();
    for a in &mut set.adapters {
        let m = a.mask.as_mut().unwrap();
        for v in &mut m.data {
            *v = 0.4 + 0.6 * rng.uniform() * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        }
    }

    let cfg = ArbitrationConfig {
        mode,
        divergence,
        mu: 0.01,
        eta: 0.7,
        ..ArbitrationConfig::classification_profile()
    };
    let tau = Thresholds::constant(0.5);
    let teachers = evaluate_teachers(&f_old, &f_new, &tau, &tau, &xs, &ys).unwrap();

    let (_, grads) = mask_loss_and_grad(&model, &set, &teachers, &xs, &ys, &cfg).unwrap();
    let Gradients::AdapterMask { mask } = grads else {
        panic!()
    };
    let analytic: Vec<f64> = mask.iter().flat_map(|m| m.data.iter().copied()).collect();

    let mut flat = Vec::new();
    for a in &set.adapters {
        flat.extend_from_slice(&a.mask.as_ref().unwrap().data);
    }
    let numeric = finite_difference(&flat, |p| {
        let mut s = set.clone();
        let mut pos = 0;
        for a in s.adapters.iter_mut() {
            let m = a.mask.as_mut().unwrap();
            let nm = m.data.len();
            m.data.copy_from_slice(&p[pos..pos + nm]);
            pos += nm;
        }
        let (c, _) = mask_loss_and_grad(&model, &s, &teachers, &xs, &ys, &cfg).unwrap();
        c.total(&cfg)
    });
    assert_gradients_match(
        &analytic,
        &numeric,
        &format!("mask composite seed {seed} {mode:?} {divergence:?}"),
    );
}

pub fn check_mask_regularizer(seed: u64) {
    let mut rng = SeededRng::new(seed);
    let m = Matrix::from_fn(3, 4, |_, _| {
        let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        sign * (0.3 + rng.uniform())
    });
    let lambda = 0.8;
    let (_, sub) = sparse_group_lasso(&m, lambda);
    let numeric = finite_difference(&m.data, |p| {
        let mm = Matrix::new(3, 4, p.to_vec());
        sparse_group_lasso(&mm, lambda).0
    });
    assert_gradients_match(&sub.data, &numeric, &format!("group lasso seed {seed}"));
}

fn check_aux_loss(name: &str, seed: u64, make: impl Fn(Materialized) -> Box<dyn AuxLoss>) {
    let (model, xs, ys) = random_instance(400 + seed, 3, 6);
    let mut rng = SeededRng::new(50 + seed);
    let teacher = {
        let mut t = model.clone();
        for layer in t.layers.iter_mut() {
            for v in &mut layer.weights.data {
                *v += 0.3 * rng.gaussian();
            }
        }
        t
    };
    let aux = make(Materialized::plain(&teacher));

    let mat = Materialized::plain(&model);
    let traces: Vec<_> = xs.iter().map(|x| mat.forward(x).unwrap()).collect();
    let (_, ups) = aux.batch_terms(&traces, &ys).unwrap();
    let mut grads = Gradients::zeros(&mat, GradTarget::Full);
    for (trace, up) in traces.iter().zip(ups.iter()) {
        backward_into(&mat, trace, up, GradTarget::Full, &mut grads).unwrap();
    }
    let analytic: Vec<f64> = grads.flat_slices().concat();
    let flat = model_to_flat(&model);
    let numeric = finite_difference(&flat, |p| {
        let m = model_from_flat(&model, p);
        let mat = Materialized::plain(&m);
        let traces: Vec<_> = xs.iter().map(|x| mat.forward(x).unwrap()).collect();
        aux.batch_terms(&traces, &ys).unwrap().0
    });
    assert_gradients_match(&analytic, &numeric, &format!("{name} seed {seed}"));
}

pub fn check_lwf(seed: u64) {
    check_aux_loss("lwf", seed, |teacher| {
        Box::new(LwfLoss::new(teacher, &LwfConfig::default()))
    });
}

pub fn check_podnet(seed: u64) {
    check_aux_loss("podnet", seed, |teacher| {
        Box::new(PodnetLoss::new(
            teacher,
            &PodnetConfig {
                chunk: 3,
                ..PodnetConfig::default()
            },
        ))
    });
}

pub fn check_co2l(seed: u64) {
    check_aux_loss("co2l", seed, |teacher| {
        Box::new(Co2lLoss::new(teacher, &Co2lConfig::default()))
    });
}

pub fn check_resadapt(seed: u64) {
    let (model, xs, ys) = random_instance(500 + seed, 3, 5);
    let mut rng = SeededRng::new(60 + seed);
    let mut stack = ResidualAdapterStack::new(&model, 4, &mut rng).unwrap();
    for a in &mut stack.adapters {
        for v in &mut a.up.data {
            *v = 0.3 * rng.gaussian();
        }
    }

    let n = xs.len() as f64;
    let mut acc: Option<Vec<(Matrix, Matrix)>> = None;
    for (x, &y) in xs.iter().zip(ys.iter()) {
        let trace = resadapt_forward(&model, &stack, x).unwrap();
        let (_, mut g) = cross_entropy(trace.logits(), y).unwrap();
        for v in g.iter_mut() {
            *v /= n;
        }
        let sample = resadapt_backward(&model, &stack, &trace, &g).unwrap();
        match &mut acc {
            None => acc = Some(sample),
            Some(acc) => {
                for ((ad, au), (sd, su)) in acc.iter_mut().zip(sample.into_iter()) {
                    ad.add_assign(&sd);
                    au.add_assign(&su);
                }
            }
        }
    }
    let mut analytic: Vec<f64> = Vec::new();
    for (d, u) in acc.unwrap() {
        analytic.extend_from_slice(&d.data);
        analytic.extend_from_slice(&u.data);
    }

    let mut flat = Vec::new();
    for a in &stack.adapters {
        flat.extend_from_slice(&a.down.data);
        flat.extend_from_slice(&a.up.data);
    }
    let numeric = finite_difference(&flat, |p| {
        let mut s = stack.clone();
        let mut pos = 0;
        for a in s.adapters.iter_mut() {
            let nd = a.down.data.len();
            a.down.data.copy_from_slice(&p[pos..pos + nd]);
            pos += nd;
            let nu = a.up.data.len();
            a.up.data.copy_from_slice(&p[pos..pos + nu]);
            pos += nu;
        }
        let mut acc = 0.0;
        for (x, &y) in xs.iter().zip(ys.iter()) {
            let t = resadapt_forward(&model, &s, x).unwrap();
            acc += cross_entropy(t.logits(), y).unwrap().0;
        }
        acc / xs.len() as f64
    });
    assert_gradients_match(&analytic, &numeric, &format!("resadapt seed {seed}"));
}

pub fn check_adamerging(seed: u64) {
    let (base, xs, _) = random_instance(600 + seed, 2, 6);
    let mut rng = SeededRng::new(70 + seed);
    let experts: Vec<ModelParams> = (0..2)
        .map(|_| {
            let mut e = base.clone();
            for layer in e.layers.iter_mut() {
                for v in &mut layer.weights.data {
                    *v += 0.4 * rng.gaussian();
                }
                for v in &mut layer.bias {
                    *v += 0.1 * rng.gaussian();
                }
            }
            e
        })
        .collect();
    let pool = ExpertPool {
        base: base.clone(),
        labels: vec![1, 2],
        experts,
    };
    let layers = base.num_layers();
    let lambda: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..layers).map(|_| 0.2 + 0.3 * rng.uniform()).collect())
        .collect();
    let (_, d_lambda) = adamerging_objective(&pool, &xs, &lambda).unwrap();
    let analytic: Vec<f64> = d_lambda.iter().flatten().copied().collect();

    let flat: Vec<f64> = lambda.iter().flatten().copied().collect();
    let numeric = finite_difference(&flat, |p| {
        let l: Vec<Vec<f64>> = p.chunks(layers).map(|c| c.to_vec()).collect();
        adamerging_objective(&pool, &xs, &l).unwrap().0
    });
    assert_gradients_match(&analytic, &numeric, &format!("adamerging seed {seed}"));
}

/// Runs the whole gradient battery: ≥ 20 random small instances covering
/// every trainable-parameter gradient and every baseline loss. Returns the
/// number of instances checked.
pub fn run_full_battery() -> usize {
    let mut instances = 0;
    for seed in 0..4u64 {
        check_full_weights(seed);
        instances += 1;
    }
    for seed in 0..4u64 {
        check_adapter_b(seed);
        instances += 1;
    }
    for (i, (mode, div)) in [
        (ArbitrationMode::Hard, Divergence::Kl),
        (ArbitrationMode::Soft, Divergence::Kl),
        (ArbitrationMode::Hard, Divergence::LatentMse),
        (ArbitrationMode::Soft, Divergence::LatentMse),
    ]
    .into_iter()
    .enumerate()
    {
        check_mask_composite(i as u64, mode, div);
        check_mask_composite(10 + i as u64, mode, div);
        instances += 2;
    }
    for seed in 0..2u64 {
        check_mask_regularizer(40 + seed);
        instances += 1;
    }
    for seed in 0..2u64 {
        check_lwf(seed);
        check_podnet(seed);
        check_co2l(seed);
        check_resadapt(seed);
        check_adamerging(seed);
        instances += 5;
    }
    instances
}
