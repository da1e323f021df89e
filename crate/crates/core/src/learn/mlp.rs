//! `input -> [affine -> batch-norm -> ReLU] x H -> dropout -> affine -> L2`.

use super::LearnError;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub embedding: usize,
}

impl Default for MlpShape {
    fn default() -> Self {
        Self { input: crate::features::N_FEATURES, hidden: vec![32, 64, 256], embedding: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y = x W^T + b`, `W` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
        let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
        Self { w, b }
    }

    fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.len()) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let (n, k) = x.dim();
        let out = self.w.nrows();
        let xs = x.as_slice().expect("standard layout");
        let ws = self.w.as_slice().expect("standard layout");
        let mut y = Array2::zeros((n, out));
        let ys = y.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let xi = &xs[i * k..(i + 1) * k];
            for o in 0..out {
                let wo = &ws[o * k..(o + 1) * k];
                let mut acc = self.b[o];
                for (a, b) in xi.iter().zip(wo) {
                    acc += a * b;
                }
                ys[i * out + o] = acc;
            }
        }
        y
    }

    /// Accumulate `dW = dy^T x`, `db = sum dy`; return `dx = dy W`.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        let (n, k) = x.dim();
        let out = self.w.nrows();
        let xs = x.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let ws = self.w.as_slice().expect("standard layout");
        let gw = grad.w.as_slice_mut().expect("standard layout");
        let mut dx = Array2::zeros((n, k));
        let dxs = dx.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let xi = &xs[i * k..(i + 1) * k];
            let dxi = &mut dxs[i * k..(i + 1) * k];
            for o in 0..out {
                let d = dys[i * out + o];
                if d == 0.0 {
                    continue;
                }
                grad.b[o] += d;
                let gwo = &mut gw[o * k..(o + 1) * k];
                let wo = &ws[o * k..(o + 1) * k];
                for c in 0..k {
                    gwo[c] += d * xi[c];
                    dxi[c] += d * wo[c];
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub shape: MlpShape,
    pub hidden: Vec<Dense>,
    pub norms: Vec<BatchNorm>,
    pub proj: Dense,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Gradients laid out like the trainable part of [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub hidden: Vec<Dense>,
    pub gamma: Vec<Array1<f64>>,
    pub beta: Vec<Array1<f64>>,
    pub proj: Dense,
}

impl MlpGrads {
    /// Same order as [`MlpParams::trainable_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in 0..self.hidden.len() {
            out.push(self.hidden[l].w.as_slice().expect("standard layout"));
            out.push(self.hidden[l].b.as_slice().expect("standard layout"));
            out.push(self.gamma[l].as_slice().expect("standard layout"));
            out.push(self.beta[l].as_slice().expect("standard layout"));
        }
        out.push(self.proj.w.as_slice().expect("standard layout"));
        out.push(self.proj.b.as_slice().expect("standard layout"));
        out
    }
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    /// Input of each hidden affine layer.
    inputs: Vec<Array2<f64>>,
    xhat: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    /// ReLU outputs; also gives the activation pattern.
    pub activations: Vec<Array2<f64>>,
    /// Batch mean and unbiased variance per layer (train mode).
    pub batch_stats: Vec<(Array1<f64>, Array1<f64>)>,
    mask: Option<Array2<f64>>,
    proj_in: Array2<f64>,
    norms: Array1<f64>,
    pub z: Array2<f64>,
}

/// Inverted-dropout mask: entries `1/(1-p)` with probability `1-p`, else 0.
pub fn dropout_mask<R: Rng>(rng: &mut R, rows: usize, cols: usize, p: f64) -> Option<Array2<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < p { 0.0 } else { keep }))
}

fn check_finite(a: &Array2<f64>, layer: usize) -> Result<(), LearnError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LearnError::NumericFault { layer })
    }
}

impl MlpParams {
    pub fn init<R: Rng>(shape: MlpShape, dropout: f64, rng: &mut R) -> Self {
        let mut hidden = Vec::new();
        let mut norms = Vec::new();
        let mut fan_in = shape.input;
        for &w in &shape.hidden {
            hidden.push(Dense::init(rng, fan_in, w));
            norms.push(BatchNorm::new(w));
            fan_in = w;
        }
        let proj = Dense::init(rng, fan_in, shape.embedding);
        Self { shape, hidden, norms, proj, dropout, bn_momentum: 0.1, bn_eps: 1e-5 }
    }

    pub fn last_hidden_width(&self) -> usize {
        *self.shape.hidden.last().unwrap_or(&self.shape.input)
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            hidden: self.hidden.iter().map(Dense::zeros_like).collect(),
            gamma: self.norms.iter().map(|n| Array1::zeros(n.gamma.len())).collect(),
            beta: self.norms.iter().map(|n| Array1::zeros(n.beta.len())).collect(),
            proj: self.proj.zeros_like(),
        }
    }

    /// Trainable tensors: per hidden layer `w, b, gamma, beta`, then the
    /// projection `w, b`.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (d, n) in self.hidden.iter_mut().zip(self.norms.iter_mut()) {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
            out.push(n.gamma.as_slice_mut().expect("standard layout"));
            out.push(n.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.proj.w.as_slice_mut().expect("standard layout"));
        out.push(self.proj.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut p = self.clone();
        p.trainable_mut().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.norms.iter().all(|n| n.running_mean.iter().chain(&n.running_var).all(|v| v.is_finite()))
    }

    /// Pure forward pass. `mask` is the dropout mask to use in train mode
    /// (`None` disables dropout); it is ignored in eval mode.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode, mask: Option<&Array2<f64>>) -> Result<ForwardCache, LearnError> {
        let n = x.nrows();
        if x.ncols() != self.shape.input {
            return Err(LearnError::InputWidth { expected: self.shape.input, got: x.ncols() });
        }
        if mode == Mode::Train && n < 2 {
            return Err(LearnError::BatchTooSmall(n));
        }
        let mut h = x.as_standard_layout().into_owned();
        let (mut inputs, mut xhats, mut inv_stds, mut acts, mut batch_stats) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (l, (dense, bn)) in self.hidden.iter().zip(&self.norms).enumerate() {
            let a = dense.forward(&h);
            check_finite(&a, l)?;
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
                    let var = a.var_axis(Axis(0), 0.0);
                    batch_stats.push((mean.clone(), &var * (n as f64 / (n as f64 - 1.0))));
                    (mean, var)
                }
                Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + self.bn_eps).sqrt());
            let xhat = (&a - &mean) * &inv_std;
            let y = &xhat * &bn.gamma + &bn.beta;
            let out = y.mapv(|v| v.max(0.0));
            check_finite(&out, l)?;
            inputs.push(std::mem::replace(&mut h, out.clone()));
            xhats.push(xhat);
            inv_stds.push(inv_std);
            acts.push(out);
        }
        let mask = match mode {
            Mode::Train => mask.cloned(),
            Mode::Eval => None,
        };
        let proj_in = match &mask {
            Some(m) => &h * m,
            None => h,
        };
        let p = self.proj.forward(&proj_in);
        let layer = self.hidden.len();
        check_finite(&p, layer)?;
        let norms = p.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if norms.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(LearnError::NumericFault { layer });
        }
        let z = &p / &norms.clone().insert_axis(Axis(1));
        Ok(ForwardCache {
            mode,
            inputs,
            xhat: xhats,
            inv_std: inv_stds,
            activations: acts,
            batch_stats,
            mask,
            proj_in,
            norms,
            z,
        })
    }

    /// Fold a train-mode cache's batch statistics into the running ones.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let m = self.bn_momentum;
        for (bn, (mean, var)) in self.norms.iter_mut().zip(&cache.batch_stats) {
            bn.running_mean = &bn.running_mean * (1.0 - m) + mean * m;
            bn.running_var = &bn.running_var * (1.0 - m) + var * m;
        }
    }

    /// Gradients of a loss with `dL/dz = dz` w.r.t. every trainable tensor
    /// and the input.
    pub fn backward(&self, cache: &ForwardCache, dz: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let mut g = self.zero_grads();
        let z = &cache.z;
        // through z = p / |p|
        let zdz = (z * dz).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dp = (dz - &(z * &zdz)) / &cache.norms.clone().insert_axis(Axis(1));
        let mut dh = self.proj.backward(&cache.proj_in, &dp.as_standard_layout().into_owned(), &mut g.proj);
        if let Some(m) = &cache.mask {
            dh = dh * m;
        }
        let n = z.nrows() as f64;
        for l in (0..self.hidden.len()).rev() {
            let act = &cache.activations[l];
            let dy = ndarray::Zip::from(&dh).and(act).map_collect(|&d, &a| if a > 0.0 { d } else { 0.0 });
            let xhat = &cache.xhat[l];
            g.gamma[l] = (&dy * xhat).sum_axis(Axis(0));
            g.beta[l] = dy.sum_axis(Axis(0));
            let dxhat = &dy * &self.norms[l].gamma;
            let inv_std = &cache.inv_std[l];
            let da = match cache.mode {
                Mode::Train => {
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                    ((&dxhat * n - &sum_d) - xhat * &sum_dx) * inv_std / n
                }
                Mode::Eval => &dxhat * inv_std,
            };
            dh = self.hidden[l].backward(&cache.inputs[l], &da.as_standard_layout().into_owned(), &mut g.hidden[l]);
        }
        (g, dh)
    }
}
