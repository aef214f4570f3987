//! Masked low-rank update machinery.
//!
//! Each adapted layer carries a triple (A, B, M): a frozen random
//! down-projection A ~ N(0, 1/d_in), a trainable expansion B initialized to
//! zero, and a learnable real-valued mask M over B. The layer update is
//! ΔW = A(M⊙B); merging folds it into the host weights so the running model
//! keeps a constant size. Per-task bias offsets ride along with B since
//! biases are not low-rank.

use serde::{Deserialize, Serialize};

use crate::backbone::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::{frobenius_norm, gaussian_matrix, Matrix, SeededRng};

/// Low-rank adapter for one layer. A is immutable after creation; B and M
/// are the trainable parts. `mask: None` means the mask has not been
/// initialized yet (the B-training phase), in which case the effective
/// coefficient is B itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedLowRankAdapter {
    pub layer: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub mask: Option<Matrix>,
    pub bias_delta: Vec<f64>,
    pub rank: usize,
}

impl MaskedLowRankAdapter {
    /// M⊙B when the mask is set, otherwise B.
    pub fn effective_coeff(&self) -> Matrix {
        match &self.mask {
            Some(m) => m.hadamard(&self.b),
            None => self.b.clone(),
        }
    }

    /// ΔW = A · (M⊙B).
    pub fn delta(&self) -> Matrix {
        self.a.matmul(&self.effective_coeff())
    }

    /// Update energy ‖M⊙B‖_F of the coefficients that would be merged.
    pub fn effective_energy(&self) -> f64 {
        frobenius_norm(&self.effective_coeff())
    }
}

/// How the mask is initialized from the trained B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskInit {
    /// Binary start: 1.0 at the top `ratio` fraction of |B| entries, 0
    /// elsewhere. Ties at equal magnitude break toward the lowest flat
    /// index.
    #[default]
    TopRatio,
    /// Proportional start: M = B scaled so the largest |entry| is 1.
    Proportional,
}

/// One adapter per layer of the host model, for a single task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    pub task_index: usize,
    pub adapters: Vec<MaskedLowRankAdapter>,
}

impl AdapterSet {
    pub fn index_of_layer(&self, layer: usize) -> Option<usize> {
        self.adapters.iter().position(|a| a.layer == layer)
    }
}

/// Fresh adapter set for every layer of `model`: A ~ N(0, 1/d_in), B = 0,
/// mask unset, bias offsets zero.
///
/// The per-layer rank is min(r, d_in, d_out): the requested rank is capped
/// where a layer is too narrow to support it (e.g. a 2-class output layer).
pub fn new_adapter_set(
    model: &ModelParams,
    r: usize,
    rng: &mut SeededRng,
) -> Result<AdapterSet> {
    if r == 0 {
        return Err(Error::domain("adapter rank must be at least 1"));
    }
    let mut adapters = Vec::with_capacity(model.num_layers());
    for (layer, params) in model.layers.iter().enumerate() {
        let d_in = params.weights.rows;
        let d_out = params.weights.cols;
        let rank = r.min(d_in).min(d_out);
        let a = gaussian_matrix(rng, d_in, rank, 1.0 / d_in as f64)?;
        adapters.push(MaskedLowRankAdapter {
            layer,
            a,
            b: Matrix::zeros(rank, d_out),
            mask: None,
            bias_delta: vec![0.0; d_out],
            rank,
        });
    }
    Ok(AdapterSet {
        task_index: 0,
        adapters,
    })
}

/// Initializes every adapter's mask from its trained B.
pub fn init_mask(set: &mut AdapterSet, ratio: f64, mode: MaskInit) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::domain(format!(
            "mask ratio must lie in (0, 1], got {ratio}"
        )));
    }
    for adapter in &mut set.adapters {
        adapter.mask = Some(match mode {
            MaskInit::TopRatio => top_ratio_mask(&adapter.b, ratio),
            MaskInit::Proportional => proportional_mask(&adapter.b),
        });
    }
    Ok(())
}

fn top_ratio_mask(b: &Matrix, ratio: f64) -> Matrix {
    let n = b.data.len();
    let keep = ((ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort by descending magnitude keeps ties in flat-index order.
    order.sort_by(|&i, &j| {
        b.data[j]
            .abs()
            .partial_cmp(&b.data[i].abs())
            .expect("mask init saw NaN in B")
    });
    let mut mask = Matrix::zeros(b.rows, b.cols);
    for &idx in order.iter().take(keep) {
        mask.data[idx] = 1.0;
    }
    mask
}

fn proportional_mask(b: &Matrix) -> Matrix {
    let max = b.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max == 0.0 {
        Matrix::zeros(b.rows, b.cols)
    } else {
        b.scale(1.0 / max)
    }
}

/// Folds ΔW = A(M⊙B) and the bias offsets into the model, returning the
/// merged model. Uses the same per-layer addition as the adapter-attached
/// forward, so the two evaluation paths agree bit for bit.
pub fn merge(model: &ModelParams, set: &AdapterSet) -> ModelParams {
    let mut merged = model.clone();
    for adapter in &set.adapters {
        let layer = &mut merged.layers[adapter.layer];
        layer.weights = layer.weights.add(&adapter.delta());
        for (b, d) in layer.bias.iter_mut().zip(adapter.bias_delta.iter()) {
            *b += d;
        }
    }
    merged
}
