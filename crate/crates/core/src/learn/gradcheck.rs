//! Central finite differences, for checking the analytic gradients.

use super::mlp::{MlpParams, Mode};
use ndarray::Array2;

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + h;
            let up = f(&v);
            v[i] = x[i] - h;
            let down = f(&v);
            v[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)`; zero when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn relu_pattern(p: &MlpParams, x: &Array2<f64>, mask: Option<&Array2<f64>>) -> Option<Vec<bool>> {
    let c = p.forward(x, Mode::Train, mask).ok()?;
    Some(c.activations.iter().flat_map(|a| a.iter().map(|&v| v > 0.0)).collect())
}

/// Directional-derivative check of a train-mode MLP pass under the scalar
/// loss `sum(weights * z)`, along a direction `u_params` over the trainable
/// tensors (in [`MlpParams::trainable_mut`] order) and `u_input` over the
/// input. Returns `None` when a ReLU unit changes side within `+-h`, where the
/// central difference is meaningless.
pub fn mlp_directional_error(
    params: &MlpParams,
    x: &Array2<f64>,
    mask: Option<&Array2<f64>>,
    weights: &Array2<f64>,
    u_params: &[Vec<f64>],
    u_input: &Array2<f64>,
    h: f64,
) -> Option<f64> {
    let shifted = |t: f64| {
        let mut p = params.clone();
        for (s, u) in p.trainable_mut().into_iter().zip(u_params) {
            for (v, d) in s.iter_mut().zip(u) {
                *v += t * d;
            }
        }
        (p, x + &(u_input * t))
    };
    let (pp, xp) = shifted(h);
    let (pm, xm) = shifted(-h);
    let base = relu_pattern(params, x, mask)?;
    if relu_pattern(&pp, &xp, mask)? != base || relu_pattern(&pm, &xm, mask)? != base {
        return None;
    }
    let loss = |p: &MlpParams, x: &Array2<f64>| (&p.forward(x, Mode::Train, mask).unwrap().z * weights).sum();
    let numeric = (loss(&pp, &xp) - loss(&pm, &xm)) / (2.0 * h);

    let cache = params.forward(x, Mode::Train, mask).ok()?;
    let (g, dx) = params.backward(&cache, weights);
    let mut analytic = (&dx * u_input).sum();
    for (gs, u) in g.slices().into_iter().zip(u_params) {
        analytic += gs.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
    }
    Some(rel_err(&[analytic], &[numeric]))
}
