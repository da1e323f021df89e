//! Contrastive, triplet and additive-angular-margin losses with analytic
//! gradients w.r.t. the embeddings (and the class weights for ArcFace).

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `y D^2 + (1 - y) max(0, m - D)^2` with `D = |z1 - z2|`. Returns the loss
/// and the gradients w.r.t. `z1` and `z2`. An impostor pair at `D = 0`
/// gets a zero subgradient.
pub fn contrastive_loss(z1: &[f64], z2: &[f64], genuine: bool, margin: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let d = dist(z1, z2);
    let diff: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a - b).collect();
    let (loss, coef) = if genuine {
        (d * d, 2.0)
    } else if d < margin && d > 0.0 {
        let gap = margin - d;
        (gap * gap, -2.0 * gap / d)
    } else if d < margin {
        (margin * margin, 0.0)
    } else {
        (0.0, 0.0)
    };
    let g1: Vec<f64> = diff.iter().map(|v| coef * v).collect();
    let g2 = g1.iter().map(|v| -v).collect();
    (loss, g1, g2)
}

/// `max(0, D_ap - D_an + alpha)` with Euclidean distances. Returns the loss
/// and the gradients w.r.t. anchor, positive and negative.
pub fn triplet_loss(za: &[f64], zp: &[f64], zn: &[f64], alpha: f64) -> (f64, [Vec<f64>; 3]) {
    let (dap, dan) = (dist(za, zp), dist(za, zn));
    let loss = dap - dan + alpha;
    let dim = za.len();
    if loss <= 0.0 {
        return (0.0, [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]]);
    }
    let unit = |a: &[f64], b: &[f64], d: f64| -> Vec<f64> {
        if d > 0.0 {
            a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
        } else {
            vec![0.0; dim]
        }
    };
    let uap = unit(za, zp, dap);
    let uan = unit(za, zn, dan);
    let ga = uap.iter().zip(&uan).map(|(p, n)| p - n).collect();
    let gp = uap.iter().map(|v| -v).collect();
    (loss, [ga, gp, uan])
}

/// Numerically stable `-log softmax(logits)[label]` and `softmax(logits)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    (loss, exps.into_iter().map(|e| e / sum).collect())
}

/// Classifier head: one weight row per training identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcFaceHead {
    pub weights: Array2<f64>,
    pub scale: f64,
    pub margin: f64,
}

/// Margin-adjusted target cosine and its derivative w.r.t. `cos`.
///
/// Main branch is `cos(theta + m)`. Past `theta = pi - m` that stops being
/// decreasing in `theta`, so the fallback `cos - (1 - cos m)` takes over; the
/// two agree (value -1) at the switch point.
fn margin_target(cos: f64, m: f64) -> (f64, f64) {
    let c = cos.clamp(-1.0, 1.0);
    if c >= -m.cos() {
        let s = (1.0 - c * c).max(0.0).sqrt();
        let slope = if s > 1e-12 { m.cos() + c * m.sin() / s } else { m.cos() };
        (c * m.cos() - s * m.sin(), slope)
    } else {
        (c - (1.0 - m.cos()), 1.0)
    }
}

/// Loss and gradients of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceStep {
    pub loss: f64,
    pub dz: Vec<f64>,
}

impl ArcFaceHead {
    /// Rows drawn from a standard normal (scale is irrelevant after
    /// normalisation).
    pub fn init<R: Rng>(classes: usize, dim: usize, scale: f64, margin: f64, rng: &mut R) -> Self {
        Self { weights: Array2::from_shape_fn((classes, dim), |_| rng.sample(StandardNormal)), scale, margin }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    fn row_norms(&self) -> Vec<f64> {
        self.weights.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
    }

    fn cosines(&self, z: &[f64], norms: &[f64]) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .zip(norms)
            .map(|(w, n)| w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect()
    }

    /// Forward, loss and backward for one sample. Accumulates
    /// `weight * dL/dW` into `dw` and returns `dL/dz` (unscaled).
    pub fn step(&self, z: &[f64], label: usize, dw: &mut Array2<f64>, weight: f64) -> ArcFaceStep {
        let norms = self.row_norms();
        self.step_with_norms(z, label, dw, weight, &norms)
    }

    pub(crate) fn step_with_norms(&self, z: &[f64], label: usize, dw: &mut Array2<f64>, weight: f64, norms: &[f64]) -> ArcFaceStep {
        let cos = self.cosines(z, norms);
        let (target, slope) = margin_target(cos[label], self.margin);
        let logits: Vec<f64> = cos
            .iter()
            .enumerate()
            .map(|(j, &c)| self.scale * if j == label { target } else { c })
            .collect();
        let (loss, probs) = softmax_cross_entropy(&logits, label);
        let mut dz = vec![0.0; z.len()];
        for (j, w) in self.weights.rows().into_iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            let dcos = (probs[j] - onehot) * self.scale * if j == label { slope } else { 1.0 };
            if dcos == 0.0 {
                continue;
            }
            let inv = 1.0 / norms[j];
            let mut dwj = dw.row_mut(j);
            for k in 0..z.len() {
                let what = w[k] * inv;
                dz[k] += dcos * what;
                dwj[k] += weight * dcos * (z[k] - cos[j] * what) * inv;
            }
        }
        ArcFaceStep { loss, dz }
    }
}

/// Logits for one sample: `s cos(theta_j)` off-target, the margin-adjusted
/// value on the target.
pub fn arcface_logits(z: &[f64], head: &ArcFaceHead, label: usize) -> Vec<f64> {
    let norms = head.row_norms();
    let cos = head.cosines(z, &norms);
    cos.iter()
        .enumerate()
        .map(|(j, &c)| head.scale * if j == label { margin_target(c, head.margin).0 } else { c })
        .collect()
}
