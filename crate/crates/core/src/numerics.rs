//! Dense f64 linear algebra, seeded sampling, and elementary statistics.
//!
//! Everything downstream builds on these primitives, so they are kept
//! deliberately small: row-major matrices, a counter-seeded ChaCha stream
//! with Box-Muller Gaussian draws (bit-reproducible for a fixed seed), and
//! the softmax/KL/MSE family used by the losses.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Panics if the length does not
    /// match `rows * cols`; shape bugs are programmer errors here.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `self * other`, (m×k)·(k×n) → m×n.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(l);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow.iter()) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other`, (m×k)ᵀ·(m×n) → k×n.
    pub fn transpose_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transpose_matmul row mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for m in 0..self.rows {
            let arow = self.row(m);
            let brow = other.row(m);
            for (l, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[l * other.cols..(l + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(brow.iter()) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "hadamard shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "add shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "sub shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (d, &s) in self.data.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
    }

    /// `x · self` for a row vector x of length `rows` → vector of length `cols`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "vec_mul length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, &w) in out.iter_mut().zip(row.iter()) {
                *o += xi * w;
            }
        }
        out
    }

    /// `self · yᵀ` for a vector y of length `cols` → vector of length `rows`.
    pub fn mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.cols, "mul_vec length mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(y.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// ⟨U,V⟩_F = Σ uᵢⱼ vᵢⱼ.
pub fn frobenius_inner(u: &Matrix, v: &Matrix) -> Result<f64> {
    if !u.same_shape(v) {
        return Err(Error::shape(format!(
            "frobenius_inner: {}x{} vs {}x{}",
            u.rows, u.cols, v.rows, v.cols
        )));
    }
    Ok(u.data.iter().zip(v.data.iter()).map(|(a, b)| a * b).sum())
}

/// ‖U‖_F = √⟨U,U⟩_F.
pub fn frobenius_norm(u: &Matrix) -> f64 {
    u.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Seeded, platform-independent random stream.
///
/// ChaCha8 keyed from a 64-bit seed plus a 64-bit stream id; Gaussian draws
/// use Box-Muller over the raw 64-bit output so the sample sequence is fixed
/// by (seed, stream) alone.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng::with_stream(seed, 0)
    }

    /// Independent substream of the same seed. Task/phase ids map to stream
    /// ids so a resumed run replays the exact byte stream of a fresh one.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeededRng { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1): 53 mantissa bits of the next u64.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; used where log(0) must be impossible.
    fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller. Two uniforms per draw; the sine
    /// branch is discarded to keep the stream position independent of call
    /// parity.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    /// always tiny compared to 2^64 so the bias is far below f64 noise.
    pub fn index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Matrix with i.i.d. N(0, variance) entries.
pub fn gaussian_matrix(
    rng: &mut SeededRng,
    rows: usize,
    cols: usize,
    variance: f64,
) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "gaussian_matrix: empty shape {rows}x{cols}"
        )));
    }
    if variance <= 0.0 {
        return Err(Error::domain(format!(
            "gaussian_matrix: variance must be positive, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    let data = (0..rows * cols).map(|_| sd * rng.gaussian()).collect();
    Ok(Matrix::new(rows, cols, data))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(name: &str, p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::domain(format!(
            "{name} must sum to 1 (got {sum})"
        )));
    }
    Ok(())
}

/// KL(p‖q) = Σ pᵢ ln(pᵢ/qᵢ), with 0·ln 0 = 0. Errors if q has a
/// non-positive entry; callers that want clamping opt in via
/// [`kl_div_clamped`].
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_div: length mismatch"));
    }
    check_simplex("kl_div: p", p)?;
    check_simplex("kl_div: q", q)?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if qi <= 0.0 {
            return Err(Error::domain(format!(
                "kl_div: q entry must be positive, got {qi}"
            )));
        }
        if pi > 0.0 {
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc)
}

/// KL with q clamped at 1e-12; for training paths where teachers can
/// underflow to exact zeros.
pub fn kl_div_clamped(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            acc += pi * (pi / qi.max(1e-12)).ln();
        }
    }
    acc
}

/// Mean squared difference of two equal-length vectors.
pub fn mse(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::shape("mse: length mismatch or empty"));
    }
    let sum: f64 = u
        .iter()
        .zip(v.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / u.len() as f64)
}

/// Σ (uᵢ−vᵢ)²; the latent-space divergence used by arbitration.
pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn l1_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).sum()
}

pub fn l2_norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn l2_distance(u: &[f64], v: &[f64]) -> f64 {
    squared_distance(u, v).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
