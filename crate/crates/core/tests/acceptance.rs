//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).
//! Every tolerance is pinned here; the committed streams and seeds live in
//! `DriftSpec::temporal_benchmark`, `DriftSpec::two_domain_adversarial`,
//! `DriftSpec::representation_benchmark`, and the matching
//! `ExperimentConfig` profiles.

mod common;

use std::time::Instant;

use keepgain::backbone::ModelParams;
use keepgain::cli;
use keepgain::config::{ExperimentConfig, Method};
use keepgain::continual::{run_stream, train_supervised, Snapshot};
use keepgain::datastream::DriftSpec;
use keepgain::diagnostics::{interference_scaling_probe, isometry_probe};
use keepgain::merging::{
    adamerging, task_arithmetic, ties_merge, weight_average, ExpertPool,
};
use keepgain::metrics::{aut, f1, model_preserving_ptr, ptr, xrep};
use keepgain::numerics::SeededRng;

fn pass(criterion: &str, detail: String) {
    println!("[PASS] {criterion}: {detail}");
}

#[test]
fn c01_gradient_suite() {
    let start = Instant::now();
    let instances = common::gradcheck::run_full_battery();
    let elapsed = start.elapsed();
    assert!(instances >= 20, "need at least 20 instances, ran {instances}");
    assert!(
        elapsed.as_secs() < 30,
        "gradient suite took {elapsed:.2?}, budget is 30 s"
    );
    pass(
        "C1 gradient suite",
        format!("{instances} random instances, rel err < 1e-4, {elapsed:.2?}"),
    );
}

#[test]
fn c02_interference_scaling() {
    let start = Instant::now();
    let report = interference_scaling_probe(&[4], &[64, 256, 1024], 16, 2000, 7).unwrap();
    let elapsed = start.elapsed();
    let small = report.cell(4, 64).unwrap();
    let large = report.cell(4, 1024).unwrap();
    let expected = (1024.0f64 / 64.0).sqrt(); // = 4

    let ratio_random = small.mean_abs_cos_random / large.mean_abs_cos_random;
    let ratio_aligned = small.mean_abs_cos_aligned / large.mean_abs_cos_aligned;
    assert!(
        (ratio_random - expected).abs() / expected <= 0.25,
        "random-B ratio {ratio_random:.3} departs from {expected} by more than 25%"
    );
    assert!(
        (ratio_aligned - expected).abs() / expected <= 0.25,
        "aligned-B ratio {ratio_aligned:.3} departs from {expected} by more than 25%"
    );
    assert!(elapsed.as_secs() < 60, "probe took {elapsed:.2?}, budget 60 s");
    pass(
        "C2 interference scaling",
        format!(
            "D=64 vs D=1024 mean|cos| ratios: random {ratio_random:.3}, aligned {ratio_aligned:.3} (target 4 ± 25%), {elapsed:.2?}"
        ),
    );
}

#[test]
fn c03_isometry() {
    let violation = isometry_probe(1024, 8, 16, 1000, 0.15, 7).unwrap();
    assert!(
        violation.violation_rate <= 0.01,
        "relative error > 0.15 in {:.2}% of trials (allowed 1%)",
        100.0 * violation.violation_rate
    );
    let norms = isometry_probe(1024, 8, 16, 5000, 0.15, 8).unwrap();
    assert!(
        (norms.mean_norm_ratio - 1.0).abs() <= 0.02,
        "E⟨AU,AU⟩/‖U‖² = {:.4}, allowed within ±2% of 1",
        norms.mean_norm_ratio
    );
    pass(
        "C3 isometry",
        format!(
            "ε ≤ 0.15 in {:.1}% of 1000 trials; mean norm ratio {:.4} over 5000 trials",
            100.0 * (1.0 - violation.violation_rate),
            norms.mean_norm_ratio
        ),
    );
}

#[test]
fn c04_metric_oracles() {
    let v = aut(&[0.8, 0.6, 1.0]).unwrap();
    assert!((v - 0.75).abs() < 1e-12, "AUT hand case: {v}");

    let a = vec![vec![1.0], vec![0.9, 0.9], vec![0.8, 0.9, 0.95]];
    let (p, _) = ptr(&a, 3).unwrap();
    assert!((p - 0.9).abs() < 1e-12, "PTR hand case: {p}");

    // The displayed table value 25.81 is the 2-decimal rounding of the
    // exact mean 77.44/3.
    let x = xrep(&[36.97, 25.42, 15.05]).unwrap();
    assert!((x - 77.44 / 3.0).abs() < 1e-10, "XRep exact mean: {x}");
    assert_eq!((x * 100.0).round() / 100.0, 25.81, "XRep paper display");

    let ones = aut(&[1.0; 6]).unwrap();
    assert_eq!(ones, 1.0, "AUT of a constant-1 sequence");

    pass(
        "C4 metric oracles",
        format!("AUT {v:.4}, PTR {p:.4}, XRep {x:.6} (≈ 25.81), AUT(1…1) = {ones}"),
    );
}

#[test]
fn c05_merging_oracles() {
    // Trained base/expert pair so the bit-for-bit check runs on realistic
    // weights rather than synthetic ones.
    let stream = common::adversarial_stream();
    let cfg = common::fast_config();
    let mut rng = SeededRng::with_stream(99, 0);
    let dims = cfg.backbone.dims(stream.feature_dim());
    let init = ModelParams::init(&dims, &mut rng).unwrap();
    let d0 = &stream.domains[0];
    let base = train_supervised(&init, &d0.train(), &d0.valid(), &cfg.training, &mut rng).unwrap();
    let d1 = &stream.domains[1];
    let expert =
        train_supervised(&base, &d1.train(), &d1.valid(), &cfg.training, &mut rng).unwrap();

    let single = ExpertPool {
        base: base.clone(),
        experts: vec![expert.clone()],
        labels: vec![1],
    };
    let ta = task_arithmetic(&single, 1.0).unwrap();
    for (a, b) in ta.layers.iter().zip(expert.layers.iter()) {
        assert_eq!(a.weights.data, b.weights.data, "task_arithmetic(n=1, α=1) bit-for-bit");
        assert_eq!(a.bias, b.bias);
    }

    let twins = ExpertPool {
        base: base.clone(),
        experts: vec![expert.clone(), expert.clone()],
        labels: vec![1, 2],
    };
    let wa = weight_average(&twins).unwrap();
    for (a, b) in wa.layers.iter().zip(expert.layers.iter()) {
        assert_eq!(a.weights.data, b.weights.data, "weight_average of identical models");
        assert_eq!(a.bias, b.bias);
    }

    // 4-parameter TIES hand example.
    let scalar = |vals: &[f64]| {
        ModelParams::new(vec![keepgain::backbone::LayerParams {
            weights: keepgain::Matrix::new(1, 4, vals.to_vec()),
            bias: vec![0.0; 4],
        }])
        .unwrap()
    };
    let pool = ExpertPool {
        base: scalar(&[0.0; 4]),
        experts: vec![scalar(&[2.0, -1.0, 0.0, 0.0]), scalar(&[-1.0, 3.0, 4.0, 0.0])],
        labels: vec![1, 2],
    };
    let alpha = 0.3;
    let ties = ties_merge(&pool, 50.0, alpha).unwrap();
    for (v, e) in ties.layers[0].weights.data.iter().zip([2.0, 3.0, 4.0, 0.0]) {
        assert!((v - alpha * e).abs() < 1e-12, "TIES hand example: {v} vs {}", alpha * e);
    }

    // AdaMerging on an already-minimal-entropy pool barely moves λ.
    let mut confident = base.clone();
    for v in confident.layers.last_mut().unwrap().bias.iter_mut() {
        *v = 0.0;
    }
    confident.layers.last_mut().unwrap().bias[0] = 200.0;
    let pool = ExpertPool {
        base: confident.clone(),
        experts: vec![confident.clone()],
        labels: vec![1],
    };
    let unlabeled: Vec<Vec<f64>> = d1.test().xs.into_iter().take(64).collect();
    let (_, coeff) = adamerging(&pool, &unlabeled, 50, 1e-2, None).unwrap();
    let mut max_move = 0.0f64;
    for row in &coeff.coefficients {
        for &l in row {
            max_move = max_move.max((l - 0.3).abs());
        }
    }
    assert!(max_move < 1e-3, "λ moved by {max_move}");

    pass(
        "C5 merging oracles",
        format!("task-vector identity bit-exact, averaging identity, TIES Δ=[2,3,4,0]·α, λ drift {max_move:.2e}"),
    );
}

#[test]
fn c06_directional_retention() {
    let start = Instant::now();
    let cfg = ExperimentConfig::temporal_benchmark();
    let stream = cfg.load_stream().unwrap();

    let cft = run_stream(Method::Cft, &stream, &cfg, cfg.seed).unwrap().report;
    let lwf = run_stream(Method::Lwf, &stream, &cfg, cfg.seed).unwrap().report;
    let retro = run_stream(Method::Retrofit, &stream, &cfg, cfg.seed)
        .unwrap()
        .report;
    let elapsed = start.elapsed();

    let (ptr_r, ptr_c, ptr_l) = (retro.ptr.unwrap(), cft.ptr.unwrap(), lwf.ptr.unwrap());
    let (aut_r, aut_c) = (retro.aut.unwrap(), cft.aut.unwrap());
    assert!(
        ptr_r >= ptr_c + 0.05,
        "PTR(retrofit) = {ptr_r:.4} must exceed PTR(cft) = {ptr_c:.4} by ≥ 0.05"
    );
    assert!(
        aut_r >= aut_c - 0.02,
        "AUT(retrofit) = {aut_r:.4} must stay within 0.02 of AUT(cft) = {aut_c:.4}"
    );
    assert!(
        ptr_l > ptr_c,
        "PTR(lwf) = {ptr_l:.4} must exceed PTR(cft) = {ptr_c:.4}"
    );
    assert!(elapsed.as_secs() < 300, "runtime {elapsed:.1?} exceeds 5 min");
    pass(
        "C6 directional retention",
        format!(
            "PTR retrofit {ptr_r:.3} vs cft {ptr_c:.3} (gap {:+.3}); AUT {aut_r:.3} vs {aut_c:.3}; PTR lwf {ptr_l:.3}; {elapsed:.1?}",
            ptr_r - ptr_c
        ),
    );
}

#[test]
fn c07_bounded_drift_monotonicity() {
    let base_cfg = ExperimentConfig::temporal_benchmark();
    let stream = base_cfg.load_stream().unwrap();
    let mut energies = Vec::new();
    let mut drifts = Vec::new();
    let mut min_ratio: Option<f64> = None;
    for &mu in &[0.0, 2e-6, 2e-3] {
        let mut cfg = base_cfg.clone();
        cfg.arbitration.mu = mu;
        let out = run_stream(Method::Retrofit, &stream, &cfg, cfg.seed).unwrap();
        let d = out.report.diagnostics.unwrap();
        energies.push(d.energy_per_task.iter().sum::<f64>());
        drifts.push(d.old_domain_drift.iter().sum::<f64>() / d.old_domain_drift.len() as f64);
        if mu == 2e-6 {
            min_ratio = d.plasticity_constant;
        }
    }
    assert!(
        energies[0] >= energies[1] && energies[1] >= energies[2],
        "ΣE_t must be non-increasing in μ: {energies:?}"
    );
    assert!(
        drifts[0] >= drifts[1] && drifts[1] >= drifts[2],
        "old-domain drift must be non-increasing in μ: {drifts:?}"
    );
    let c = min_ratio.expect("plasticity ratio defined");
    assert!(c > 0.0, "plasticity min ratio must be positive, got {c}");
    pass(
        "C7 bounded-drift monotonicity",
        format!(
            "ΣE = [{:.2}, {:.2}, {:.2}], drift = [{:.4}, {:.4}, {:.4}], min plasticity ratio {c:.4}",
            energies[0], energies[1], energies[2], drifts[0], drifts[1], drifts[2]
        ),
    );
}

#[test]
fn c08_merge_consistency() {
    let cfg = ExperimentConfig::temporal_benchmark();
    let stream = cfg.load_stream().unwrap();
    let run = run_stream(Method::Retrofit, &stream, &cfg, cfg.seed)
        .unwrap()
        .run
        .unwrap();
    let mut worst = 0.0f64;
    for log in &run.task_logs {
        let diff = log
            .merge_consistency
            .expect("merge consistency recorded per task");
        worst = worst.max(diff);
        assert!(
            diff < 1e-12,
            "task {}: merged vs adapter-attached outputs differ by {diff:.3e}",
            log.domain_id
        );
    }
    assert_eq!(run.task_logs.len(), stream.len() - 1);
    pass(
        "C8 merge consistency",
        format!(
            "{} tasks × 100 random inputs, max |diff| = {worst:.2e} < 1e-12",
            run.task_logs.len()
        ),
    );
}

#[test]
fn c09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::temporal_benchmark();
    // A smaller stream keeps this criterion quick; determinism must hold
    // for any invocation.
    cfg.stream.spec = Some(DriftSpec::two_domain_adversarial());
    let a = cli::cmd_train(&cfg, dir.path()).unwrap();
    let b = cli::cmd_train(&cfg, dir.path()).unwrap();
    assert_ne!(a.report_path, b.report_path, "reruns get versioned filenames");
    let bytes_a = std::fs::read(&a.report_path).unwrap();
    let bytes_b = std::fs::read(&b.report_path).unwrap();
    assert_eq!(bytes_a, bytes_b, "report JSON must be byte-identical");
    pass(
        "C9 determinism",
        format!("two runs, {} bytes each, byte-identical", bytes_a.len()),
    );
}

#[test]
fn c10_representation_shift() {
    let start = Instant::now();
    let cfg = ExperimentConfig::representation_benchmark();
    let stream = cfg.load_stream().unwrap();

    let cft = run_stream(Method::Cft, &stream, &cfg, cfg.seed).unwrap().report;
    let retro = run_stream(Method::Retrofit, &stream, &cfg, cfg.seed)
        .unwrap()
        .report;

    // Transfer-learning reference: a model fitted on the last level alone.
    let last = stream.domains.last().unwrap();
    let dims = cfg.backbone.dims(stream.feature_dim());
    let mut rng = SeededRng::with_stream(cfg.seed, 10);
    let init = ModelParams::init(&dims, &mut rng).unwrap();
    let solo =
        train_supervised(&init, &last.train(), &last.valid(), &cfg.training, &mut rng).unwrap();
    let snap = Snapshot::Plain(solo);
    let split = last.test();
    let mut preds = Vec::with_capacity(split.len());
    for x in &split.xs {
        preds.push(snap.predict(x).unwrap());
    }
    let solo_f1 = f1(&preds, &split.ys, cfg.backbone.positive_class).unwrap();

    let (x_r, x_c) = (retro.xrep.unwrap(), cft.xrep.unwrap());
    let retro_last = *retro.a_matrix.last().unwrap().last().unwrap();
    let elapsed = start.elapsed();
    assert!(
        x_r >= x_c,
        "XRep(retrofit) = {x_r:.4} must not fall below XRep(cft) = {x_c:.4}"
    );
    assert!(
        retro_last >= solo_f1,
        "last-level retrofit {retro_last:.4} must match or beat the level-only model {solo_f1:.4}"
    );
    assert!(elapsed.as_secs() < 300, "runtime {elapsed:.1?} exceeds 5 min");
    pass(
        "C10 representation shift",
        format!(
            "XRep retrofit {x_r:.4} vs cft {x_c:.4}; last level {retro_last:.4} vs level-only {solo_f1:.4}; {elapsed:.1?}"
        ),
    );
}

#[test]
fn c00_model_preserving_sanity() {
    // Not a numbered criterion: the model-preserving retention metric and
    // protocol wiring used by the table runs.
    let merged = vec![0.8, 0.9];
    let best = vec![1.0, 0.9];
    let v = model_preserving_ptr(&merged, &best).unwrap();
    assert!((v - 0.9).abs() < 1e-12);
    pass("C0 aggregation-protocol sanity", format!("normalized retention {v:.3}"));
}
