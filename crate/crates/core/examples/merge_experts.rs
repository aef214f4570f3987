//! Model-preserving alternatives: fine-tune one expert per domain from a
//! shared base, then aggregate with voting, averaging, task arithmetic,
//! TIES, and entropy-minimizing coefficient merging.
//!
//! Run with: `cargo run --release --example merge_experts`

use keepgain::config::{ExperimentConfig, Method};
use keepgain::continual::run_stream;

fn main() -> keepgain::Result<()> {
    let mut cfg = ExperimentConfig::temporal_benchmark();
    let stream = cfg.load_stream()?;

    println!(
        "{:<12} {:>7} {:>9}   F1 per test set (single aggregate model)",
        "method", "PTR", "final"
    );
    for method in [
        Method::Vote,
        Method::SoftAvg,
        Method::WeightAvg,
        Method::TaskArith,
        Method::Ties,
        Method::Adamerging,
    ] {
        cfg.method = method;
        let outcome = run_stream(method, &stream, &cfg, cfg.seed)?;
        let r = outcome.report;
        let scores: Vec<String> = r.f_current.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "{:<12} {:>7} {:>9.3}   [{}]",
            r.method,
            r.ptr.map_or("n/a".into(), |v| format!("{v:.4}")),
            r.f_current.last().unwrap(),
            scores.join(", "),
        );
    }
    println!("\n(PTR here normalizes each past slot by the best single-domain expert)");
    Ok(())
}
