//! Empirically verify the interference and forgetting analysis: the
//! √(r/D) interference scaling of low-rank updates, the near-isometry of
//! frozen random projections, the measured forgetting-bound terms on a real
//! run, and the plasticity lower bound.
//!
//! Run with: `cargo run --release --example verify_bounds`

use keepgain::config::{ExperimentConfig, Method};
use keepgain::continual::run_stream;
use keepgain::diagnostics::{interference_scaling_probe, isometry_probe};

fn main() -> keepgain::Result<()> {
    // Interference scaling: |cos(g_old, ΔW)| should shrink like 1/√D, and
    // like √r in the gradient-aligned worst case.
    let probe = interference_scaling_probe(&[4, 8], &[64, 256, 1024], 16, 2000, 7)?;
    println!("interference scaling (trials = {}):", probe.trials);
    println!(
        "{:>6} {:>6} {:>18} {:>18}",
        "rank", "D", "mean|cos| random", "mean|cos| aligned"
    );
    for cell in &probe.cells {
        println!(
            "{:>6} {:>6} {:>18.5} {:>18.5}",
            cell.rank, cell.dim, cell.mean_abs_cos_random, cell.mean_abs_cos_aligned
        );
    }
    println!(
        "fitted exponent of D: random {:.3}, aligned {:.3} (both ≈ −1/2)",
        probe.fitted_exponent_random, probe.fitted_exponent_aligned
    );
    let r64 = probe.cell(4, 64).unwrap().mean_abs_cos_aligned;
    let r1024 = probe.cell(4, 1024).unwrap().mean_abs_cos_aligned;
    println!(
        "D = 64 vs 1024 at rank 4: ratio {:.3} (√(1024/64) = 4)\n",
        r64 / r1024
    );

    // Near-isometry of the frozen down-projection.
    let iso = isometry_probe(1024, 8, 16, 1000, 0.15, 7)?;
    println!(
        "isometry at D=1024, r=8, d_out=16: ε̂ = {:.4}, violations(>{}) = {:.1}%, E⟨AU,AU⟩/‖U‖² = {:.4}",
        iso.eps_hat,
        iso.threshold,
        100.0 * iso.violation_rate,
        iso.mean_norm_ratio
    );
    let small = isometry_probe(64, 8, 16, 1000, 0.05, 7)?;
    let big = isometry_probe(1024, 8, 16, 1000, 0.05, 7)?;
    println!(
        "violation rate at the tighter 0.05 threshold: D=64 → {:.1}%, D=1024 → {:.1}%\n",
        100.0 * small.violation_rate,
        100.0 * big.violation_rate
    );

    // Bound terms measured on a finished run of the committed benchmark.
    let cfg = ExperimentConfig::temporal_benchmark();
    let stream = cfg.load_stream()?;
    let outcome = run_stream(Method::Retrofit, &stream, &cfg, cfg.seed)?;
    let diag = outcome.report.diagnostics.unwrap();
    println!("measured bound terms on the committed run:");
    println!("  E_t          = {:?}", diag.energy_per_task);
    println!("  ρ (overlap)  = {:?}", diag.mask_overlap_rho);
    println!("  δ̂ (tightness)= {:?}", diag.arbitration_tightness);
    println!("  ε̂ (isometry) = {:?}", diag.isometry_error);
    println!("  κ (rank)     = {:?}", diag.effective_rank_ratio);
    println!("  drift(old)   = {:?}", diag.old_domain_drift);
    println!("  fitted c₀    = {:?}", diag.fitted_bound_constant);
    println!("  drift(new)   = {:?}", diag.new_domain_drift);
    println!(
        "  plasticity ratios = {:?} (min = empirical C = {:?})",
        diag.plasticity_ratios, diag.plasticity_constant
    );
    Ok(())
}
