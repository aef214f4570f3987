//! Distillation-based sequential baselines, implemented as auxiliary loss
//! terms added to cross-entropy during full fine-tuning. The frozen
//! previous model is the teacher in all three.

use super::AuxLoss;
use crate::backbone::{ForwardTrace, Materialized, Upstream};
use crate::config::{Co2lConfig, LwfConfig, PodnetConfig};
use crate::error::{Error, Result};

/// Soft distribution at temperature T plus its log, max-subtracted.
fn softened(logits: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    let p = exps.iter().map(|e| e / sum).collect();
    let logp = scaled.iter().map(|z| z - lse).collect();
    (p, logp)
}

/// Logit distillation: cross-entropy between softened teacher and student
/// probabilities at temperature T.
pub struct LwfLoss {
    teacher: Materialized,
    temperature: f64,
    lambda_kd: f64,
}

impl LwfLoss {
    pub fn new(teacher: Materialized, cfg: &LwfConfig) -> Self {
        LwfLoss {
            teacher,
            temperature: cfg.temperature,
            lambda_kd: cfg.lambda_kd,
        }
    }
}

impl AuxLoss for LwfLoss {
    fn batch_terms(&self, traces: &[ForwardTrace], _ys: &[usize]) -> Result<(f64, Vec<Upstream>)> {
        let n = traces.len() as f64;
        let t = self.temperature;
        let mut value = 0.0;
        let mut ups = Vec::with_capacity(traces.len());
        for trace in traces {
            let z_t = self.teacher.forward(&trace.input)?;
            let (p_t, _) = softened(z_t.logits(), t);
            let (p_s, logp_s) = softened(trace.logits(), t);
            value -= p_t.iter().zip(logp_s.iter()).map(|(a, b)| a * b).sum::<f64>();
            let grad: Vec<f64> = p_s
                .iter()
                .zip(p_t.iter())
                .map(|(s, tt)| self.lambda_kd * (s - tt) / (n * t))
                .collect();
            ups.push(Upstream::from_logits(grad));
        }
        Ok((self.lambda_kd * value / n, ups))
    }
}

fn l2_normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r == 0.0 {
        (vec![0.0; v.len()], 0.0)
    } else {
        (v.iter().map(|x| x / r).collect(), r)
    }
}

/// dL/draw from dL/dnormalized: (g − u·(u·g)) / r.
fn normalize_backward(unit: &[f64], r: f64, g: &[f64]) -> Vec<f64> {
    if r == 0.0 {
        return vec![0.0; g.len()];
    }
    let dot: f64 = unit.iter().zip(g.iter()).map(|(u, x)| u * x).sum();
    unit.iter()
        .zip(g.iter())
        .map(|(u, x)| (x - u * dot) / r)
        .collect()
}

fn chunk_means(v: &[f64], chunk: usize) -> Vec<f64> {
    v.chunks(chunk)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// One-dimensional feature distillation: mean-squared alignment of
/// L2-normalized, chunk-mean-pooled hidden activations against the teacher,
/// at every hidden layer.
pub struct PodnetLoss {
    teacher: Materialized,
    lambda_kd: f64,
    chunk: usize,
}

impl PodnetLoss {
    pub fn new(teacher: Materialized, cfg: &PodnetConfig) -> Self {
        PodnetLoss {
            teacher,
            lambda_kd: cfg.lambda_kd,
            chunk: cfg.chunk.max(1),
        }
    }
}

impl AuxLoss for PodnetLoss {
    fn batch_terms(&self, traces: &[ForwardTrace], _ys: &[usize]) -> Result<(f64, Vec<Upstream>)> {
        let n = traces.len() as f64;
        let num_layers = self.teacher.weights.len();
        let hidden = num_layers.saturating_sub(1);
        if hidden == 0 {
            let ups = traces
                .iter()
                .map(|t| Upstream::from_logits(vec![0.0; t.logits().len()]))
                .collect();
            return Ok((0.0, ups));
        }
        let scale = self.lambda_kd / (n * hidden as f64);
        let mut value = 0.0;
        let mut ups = Vec::with_capacity(traces.len());
        for trace in traces {
            let teacher_trace = self.teacher.forward(&trace.input)?;
            let mut up = Upstream::from_logits(vec![0.0; trace.logits().len()]);
            for layer in 0..hidden {
                let (u_s, r_s) = l2_normalize(&trace.act[layer]);
                let (u_t, _) = l2_normalize(&teacher_trace.act[layer]);
                let p_s = chunk_means(&u_s, self.chunk);
                let p_t = chunk_means(&u_t, self.chunk);
                let chunks = p_s.len() as f64;
                let layer_loss: f64 = p_s
                    .iter()
                    .zip(p_t.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / chunks;
                value += scale * layer_loss;

                // d layer_loss / d u_s, spread back through the chunk means.
                let mut du = vec![0.0; u_s.len()];
                for (c, (ps, pt)) in p_s.iter().zip(p_t.iter()).enumerate() {
                    let start = c * self.chunk;
                    let end = (start + self.chunk).min(u_s.len());
                    let dp = 2.0 * (ps - pt) / chunks / (end - start) as f64;
                    for d in du[start..end].iter_mut() {
                        *d += dp;
                    }
                }
                let mut dh = normalize_backward(&u_s, r_s, &du);
                for d in dh.iter_mut() {
                    *d *= scale;
                }
                up = up.with_hidden(layer, dh);
            }
            ups.push(up);
        }
        Ok((value, ups))
    }
}

/// Supervised-contrastive term plus instance-relation distillation on
/// penultimate embeddings.
pub struct Co2lLoss {
    teacher: Materialized,
    lambda_con: f64,
    lambda_ird: f64,
    temp_con: f64,
    temp_ird: f64,
}

impl Co2lLoss {
    pub fn new(teacher: Materialized, cfg: &Co2lConfig) -> Self {
        Co2lLoss {
            teacher,
            lambda_con: cfg.lambda_con,
            lambda_ird: cfg.lambda_ird,
            temp_con: cfg.temp_con,
            temp_ird: cfg.temp_ird,
        }
    }
}

/// Row-wise softmax over j≠i of sims/temp; returns probabilities with the
/// diagonal fixed at 0.
fn relation_rows(sims: &[Vec<f64>], temp: f64) -> Vec<Vec<f64>> {
    let n = sims.len();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                max = max.max(sims[i][j] / temp);
            }
        }
        let mut row = vec![0.0; n];
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let e = (sims[i][j] / temp - max).exp();
                row[j] = e;
                sum += e;
            }
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        rows.push(row);
    }
    rows
}

impl AuxLoss for Co2lLoss {
    fn batch_terms(&self, traces: &[ForwardTrace], ys: &[usize]) -> Result<(f64, Vec<Upstream>)> {
        let n = traces.len();
        let classes = traces
            .first()
            .map(|t| t.logits().len())
            .unwrap_or_default();
        if n < 2 {
            let ups = traces
                .iter()
                .map(|_| Upstream::from_logits(vec![0.0; classes]))
                .collect();
            return Ok((0.0, ups));
        }
        let num_layers = self.teacher.weights.len();
        let penult = num_layers
            .checked_sub(2)
            .ok_or_else(|| Error::shape("contrastive distillation needs a hidden layer"))?;

        let mut units = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        let mut t_units = Vec::with_capacity(n);
        for trace in traces {
            let (u, r) = l2_normalize(trace.penultimate());
            units.push(u);
            norms.push(r);
            let t_trace = self.teacher.forward(&trace.input)?;
            t_units.push(l2_normalize(t_trace.penultimate()).0);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
        let mut sims = vec![vec![0.0; n]; n];
        let mut t_sims = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sims[i][j] = dot(&units[i], &units[j]);
                    t_sims[i][j] = dot(&t_units[i], &t_units[j]);
                }
            }
        }

        let dim = units[0].len();
        let mut d_units = vec![vec![0.0; dim]; n];
        let mut value = 0.0;

        // Supervised contrastive term; batches without positive pairs
        // contribute zero.
        let q = relation_rows(&sims, self.temp_con);
        let mut anchors = Vec::new();
        for i in 0..n {
            let positives: Vec<usize> =
                (0..n).filter(|&j| j != i && ys[j] == ys[i]).collect();
            if !positives.is_empty() {
                anchors.push((i, positives));
            }
        }
        if !anchors.is_empty() {
            let a_count = anchors.len() as f64;
            let mut supcon = 0.0;
            for (i, positives) in &anchors {
                let i = *i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if j != i {
                        max = max.max(sims[i][j] / self.temp_con);
                    }
                }
                let lse = max
                    + (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (sims[i][j] / self.temp_con - max).exp())
                        .sum::<f64>()
                        .ln();
                let p_count = positives.len() as f64;
                for &p in positives {
                    supcon += (lse - sims[i][p] / self.temp_con) / p_count;
                }
                // d supcon_i / d sims[i][j] = q_ij − 1_{j∈P}/|P|.
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let mut g = q[i][j];
                    if positives.contains(&j) {
                        g -= 1.0 / p_count;
                    }
                    let g = self.lambda_con * g / (a_count * self.temp_con);
                    for d in 0..dim {
                        d_units[i][d] += g * units[j][d];
                        d_units[j][d] += g * units[i][d];
                    }
                }
            }
            value += self.lambda_con * supcon / a_count;
        }

        // Instance-relation distillation: match row-normalized similarity
        // distributions of the teacher.
        let p_t = relation_rows(&t_sims, self.temp_ird);
        let q_s = relation_rows(&sims, self.temp_ird);
        let mut ird = 0.0;
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                if p_t[i][j] > 0.0 {
                    ird -= p_t[i][j] * q_s[i][j].max(1e-300).ln();
                }
                let g = self.lambda_ird * (q_s[i][j] - p_t[i][j])
                    / (n as f64 * self.temp_ird);
                for d in 0..dim {
                    d_units[i][d] += g * units[j][d];
                    d_units[j][d] += g * units[i][d];
                }
            }
        }
        value += self.lambda_ird * ird / n as f64;

        let ups = (0..n)
            .map(|i| {
                let de = normalize_backward(&units[i], norms[i], &d_units[i]);
                Upstream::from_logits(vec![0.0; classes]).with_hidden(penult, de)
            })
            .collect();
        Ok((value, ups))
    }
}
