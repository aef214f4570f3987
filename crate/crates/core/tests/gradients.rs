//! Finite-difference verification of every analytic gradient in the crate:
//! full weights, adapter B (with bias offsets), adapter masks under the
//! composite arbitration objective, the mask regularizer, the distillation
//! baselines, residual adapters, and the entropy-merging coefficients.
//! The case bodies live in `common::gradcheck` and are shared with the
//! acceptance harness.

mod common;

use common::gradcheck::*;
use keepgain::arbitration::{ArbitrationMode, Divergence};

#[test]
fn full_weight_gradients_match_finite_differences() {
    for seed in 0..6u64 {
        check_full_weights(seed);
    }
}

#[test]
fn adapter_b_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        check_adapter_b(seed);
    }
}

#[test]
fn mask_gradients_match_finite_differences_all_modes() {
    for seed in 0..3u64 {
        check_mask_composite(seed, ArbitrationMode::Hard, Divergence::Kl);
        check_mask_composite(10 + seed, ArbitrationMode::Soft, Divergence::Kl);
        check_mask_composite(20 + seed, ArbitrationMode::Hard, Divergence::LatentMse);
        check_mask_composite(30 + seed, ArbitrationMode::Soft, Divergence::LatentMse);
    }
}

#[test]
fn mask_regularizer_subgradient_matches_finite_differences() {
    for seed in 0..5u64 {
        check_mask_regularizer(42 + seed);
    }
}

#[test]
fn lwf_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        check_lwf(seed);
    }
}

#[test]
fn podnet_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        check_podnet(seed);
    }
}

#[test]
fn co2l_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        check_co2l(seed);
    }
}

#[test]
fn resadapt_gradients_match_finite_differences() {
    for seed in 0..4u64 {
        check_resadapt(seed);
    }
}

#[test]
fn adamerging_coefficient_gradients_match_finite_differences() {
    for seed in 0..3u64 {
        check_adamerging(seed);
    }
}
