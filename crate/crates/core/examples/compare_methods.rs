//! Compare the continual-learning methods and anchors on the committed
//! temporal benchmark: naive fine-tuning, the distillation baselines, the
//! residual-adapter baseline, the bounded-forgetting merge method, and the
//! base/oracle anchors.
//!
//! Run with: `cargo run --release --example compare_methods`

use keepgain::config::{ExperimentConfig, Method};
use keepgain::continual::run_stream;

fn main() -> keepgain::Result<()> {
    let cfg = ExperimentConfig::temporal_benchmark();
    let stream = cfg.load_stream()?;

    println!(
        "{:<10} {:>7} {:>7} {:>9} {:>9}   per-slot F1 (current test set)",
        "method", "AUT", "PTR", "old(T)", "new(T)"
    );
    for method in [
        Method::Base,
        Method::Oracle,
        Method::Cft,
        Method::Lwf,
        Method::Podnet,
        Method::Co2l,
        Method::Resadapt,
        Method::Retrofit,
    ] {
        let outcome = run_stream(method, &stream, &cfg, cfg.seed)?;
        let r = outcome.report;
        let (old_last, new_last) = r.old_new.last().copied().unwrap();
        let f: Vec<String> = r.f_current.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "{:<10} {:>7} {:>7} {:>9} {:>9}   [{}]",
            r.method,
            r.aut.map_or("n/a".into(), |v| format!("{v:.4}")),
            r.ptr.map_or("n/a".into(), |v| format!("{v:.4}")),
            old_last.map_or("n/a".into(), |v| format!("{v:.3}")),
            format!("{new_last:.3}"),
            f.join(", "),
        );
    }
    Ok(())
}
