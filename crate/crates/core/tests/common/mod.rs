//! Shared test oracles: flat parameter access for finite differencing, an
//! independent straight-line forward pass, and a from-scratch logistic
//! regression used as a linear-probe oracle. Everything here is written
//! against public getters only, independent of the production compute paths
//! it is used to check.

#![allow(dead_code)]

use fairscrub_core::num::{Matrix, Mlp};
use fairscrub_core::probing::metrics;
use fairscrub_core::seed::component_rng;
use rand::seq::SliceRandom;
use rand::Rng;

/// Total flat parameter count: weights then biases, layer-major.
pub fn flat_param_count(net: &Mlp) -> usize {
    (0..net.num_layers())
        .map(|l| net.weights(l).rows() * net.weights(l).cols() + net.biases(l).len())
        .sum()
}

pub fn get_flat_param(net: &Mlp, mut idx: usize) -> f64 {
    for l in 0..net.num_layers() {
        let w_len = net.weights(l).rows() * net.weights(l).cols();
        if idx < w_len {
            return net.weights(l).as_slice()[idx];
        }
        idx -= w_len;
        let b_len = net.biases(l).len();
        if idx < b_len {
            return net.biases(l)[idx];
        }
        idx -= b_len;
    }
    panic!("flat parameter index out of range");
}

pub fn set_flat_param(net: &mut Mlp, mut idx: usize, value: f64) {
    for l in 0..net.num_layers() {
        let w_len = net.weights(l).rows() * net.weights(l).cols();
        if idx < w_len {
            net.weights_mut(l).as_mut_slice()[idx] = value;
            return;
        }
        idx -= w_len;
        let b_len = net.biases(l).len();
        if idx < b_len {
            net.biases_mut(l)[idx] = value;
            return;
        }
        idx -= b_len;
    }
    panic!("flat parameter index out of range");
}

/// Gradient tape flattened in the same order as the parameters.
pub fn flat_tape(tape: &fairscrub_core::num::GradientTape) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in tape.d_weights.iter().zip(&tape.d_biases) {
        out.extend_from_slice(w.as_slice());
        out.extend_from_slice(b);
    }
    out
}

/// Relative error with an absolute floor for near-zero pairs.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central finite differences of `loss` w.r.t. every parameter of one
/// network inside the model. `loss` must be a pure function of the model.
pub fn fd_gradient<F>(
    model: &mut fairscrub_core::model::AdsModel,
    select: fn(&mut fairscrub_core::model::AdsModel) -> &mut Mlp,
    eps: f64,
    mut loss: F,
) -> Vec<f64>
where
    F: FnMut(&fairscrub_core::model::AdsModel) -> f64,
{
    let count = flat_param_count(select(model));
    let mut grads = Vec::with_capacity(count);
    for idx in 0..count {
        let original = get_flat_param(select(model), idx);
        set_flat_param(select(model), idx, original + eps);
        let plus = loss(model);
        set_flat_param(select(model), idx, original - eps);
        let minus = loss(model);
        set_flat_param(select(model), idx, original);
        grads.push((plus - minus) / (2.0 * eps));
    }
    grads
}

/// Straight-line forward pass re-implemented with raw index loops, as an
/// oracle for `Mlp::forward`. ReLU on all layers but the last.
pub fn straight_line_forward(net: &Mlp, batch: &Matrix) -> Matrix {
    let rows = batch.rows();
    let mut current: Vec<Vec<f64>> = (0..rows).map(|r| batch.row(r).to_vec()).collect();
    for l in 0..net.num_layers() {
        let w = net.weights(l);
        let b = net.biases(l);
        let last = l == net.num_layers() - 1;
        let mut next = vec![vec![0.0; w.cols()]; rows];
        for r in 0..rows {
            for c in 0..w.cols() {
                let mut acc = b[c];
                for k in 0..w.rows() {
                    acc += current[r][k] * w.get(k, c);
                }
                next[r][c] = if last { acc } else { acc.max(0.0) };
            }
        }
        current = next;
    }
    Matrix::from_rows(&current).unwrap()
}

/// Multinomial logistic regression trained by plain gradient descent, used
/// as an independent linear-probe oracle. Returns (accuracy %, macro F1 %)
/// on a seeded 80/20 held-out split.
pub fn linear_probe_scores(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    seed: u64,
) -> (f64, f64) {
    let n = labels.len();
    assert!(n >= 5, "oracle needs a few examples");
    let dim = features.cols();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut component_rng(seed, "oracle-split", 0));
    let heldout = n / 5;
    let (test_idx, train_idx) = order.split_at(heldout);

    let mut weights = vec![vec![0.0f64; dim]; num_classes];
    let mut bias = vec![0.0f64; num_classes];
    let lr = 0.5;
    let l2 = 1e-4;
    for _iter in 0..300 {
        let mut gw = vec![vec![0.0f64; dim]; num_classes];
        let mut gb = vec![0.0f64; num_classes];
        for &i in train_idx {
            let x = features.row(i);
            let logits: Vec<f64> = (0..num_classes)
                .map(|c| {
                    bias[c]
                        + weights[c]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * v)
                            .sum::<f64>()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for c in 0..num_classes {
                let p = exps[c] / denom;
                let err = p - if labels[i] == c { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, v) in gw[c].iter_mut().zip(x) {
                    *g += err * v;
                }
            }
        }
        let m = train_idx.len() as f64;
        for c in 0..num_classes {
            bias[c] -= lr * gb[c] / m;
            for (w, g) in weights[c].iter_mut().zip(&gw[c]) {
                *w -= lr * (g / m + l2 * *w);
            }
        }
    }

    let predictions: Vec<usize> = test_idx
        .iter()
        .map(|&i| {
            let x = features.row(i);
            (0..num_classes)
                .map(|c| {
                    bias[c]
                        + weights[c]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * v)
                            .sum::<f64>()
                })
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect();
    let truth: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    let m = metrics(&predictions, &truth, 0.0).expect("oracle metrics");
    (m.accuracy, m.f1_macro)
}

/// Random matrix with entries in `[-scale, scale)`.
pub fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Matrix {
    let mut rng = component_rng(seed, "test-matrix", 0);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    m
}
