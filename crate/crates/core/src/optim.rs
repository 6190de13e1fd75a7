//! AdamW with decoupled weight decay.
//!
//! Decay touches weight matrices only, never biases, and is applied
//! directly to the parameters rather than folded into the moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{GradientTape, Matrix, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWParams {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !betas_ok || self.epsilon <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Domain(format!("invalid AdamW parameters: {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment buffers mirroring one network.
#[derive(Debug, Clone)]
pub struct AdamWState {
    m_weights: Vec<Matrix>,
    v_weights: Vec<Matrix>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step: u64,
}

impl AdamWState {
    pub fn new(net: &Mlp) -> Self {
        let m_weights = (0..net.num_layers())
            .map(|l| Matrix::zeros(net.weights(l).rows(), net.weights(l).cols()))
            .collect::<Vec<_>>();
        let v_weights = m_weights.clone();
        let m_biases = (0..net.num_layers())
            .map(|l| vec![0.0; net.biases(l).len()])
            .collect::<Vec<_>>();
        let v_biases = m_biases.clone();
        AdamWState {
            m_weights,
            v_weights,
            m_biases,
            v_biases,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[inline]
fn moment_update(
    param: &mut f64,
    grad: f64,
    m: &mut f64,
    v: &mut f64,
    lr: f64,
    cfg: &AdamWParams,
    bias_c1: f64,
    bias_c2: f64,
) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * grad;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * grad * grad;
    let m_hat = *m / bias_c1;
    let v_hat = *v / bias_c2;
    *param -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
}

/// One AdamW step on every parameter of `net` using the tape's gradients.
pub fn adamw_step(
    net: &mut Mlp,
    tape: &GradientTape,
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWParams,
) -> Result<()> {
    cfg.validate()?;
    if tape.d_weights.len() != net.num_layers() || state.m_weights.len() != net.num_layers() {
        return Err(Error::Usage("tape/state does not mirror this network".into()));
    }
    state.step += 1;
    let bias_c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bias_c2 = 1.0 - cfg.beta2.powi(state.step as i32);

    for l in 0..net.num_layers() {
        if tape.d_weights[l].rows() != net.weights(l).rows()
            || tape.d_weights[l].cols() != net.weights(l).cols()
            || tape.d_biases[l].len() != net.biases(l).len()
        {
            return Err(Error::Usage(format!("tape shape mismatch at layer {l}")));
        }
        // Decoupled decay, weights only.
        if cfg.weight_decay > 0.0 {
            let decay = lr * cfg.weight_decay;
            for w in net.weights_mut(l).as_mut_slice() {
                *w -= decay * *w;
            }
        }
        {
            let weights = net.weights_mut(l).as_mut_slice();
            let grads = tape.d_weights[l].as_slice();
            let ms = state.m_weights[l].as_mut_slice();
            let vs = state.v_weights[l].as_mut_slice();
            for (((w, &g), m), v) in weights.iter_mut().zip(grads).zip(ms).zip(vs) {
                moment_update(w, g, m, v, lr, cfg, bias_c1, bias_c2);
            }
        }
        let biases = net.biases_mut(l);
        for (i, b) in biases.iter_mut().enumerate() {
            moment_update(
                b,
                tape.d_biases[l][i],
                &mut state.m_biases[l][i],
                &mut state.v_biases[l][i],
                lr,
                cfg,
                bias_c1,
                bias_c2,
            );
        }
    }
    Ok(())
}
