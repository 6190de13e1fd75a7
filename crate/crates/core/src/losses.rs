//! The scrubber loss family.
//!
//! The adversary minimizes plain cross-entropy `L_d`. The scrubbing side
//! minimizes `L_s = L_c - λ₁ Σₙ H(dₙ(u)) + λ₂ Σₙ δ(dₙ(u))`: the entropy term
//! pushes every discriminator toward a uniform posterior, the δ term
//! penalizes probability mass assigned to the true protected class through a
//! Gumbel-softmax relaxation. All batch reductions are arithmetic means.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::ops::{
    cross_entropy, gumbel_softmax, log_softmax, sample_gumbel, softmax, LOG_FLOOR,
};
use crate::num::Matrix;

/// Weights and knobs of the composite scrubber loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Entropy weight λ₁.
    pub lambda1: f64,
    /// δ weight λ₂.
    pub lambda2: f64,
    /// Gumbel-softmax temperature τ.
    pub tau: f64,
    /// Draw Gumbel noise (true) or run the deterministic relaxation (false).
    pub gumbel_noise: bool,
    /// Number of protected attributes N.
    pub num_attrs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            tau: 1.0,
            gumbel_noise: true,
            num_attrs: 1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Domain(format!(
                "loss weights must be nonnegative (λ₁={}, λ₂={})",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Domain(format!("temperature {} must be > 0", self.tau)));
        }
        if self.num_attrs == 0 {
            return Err(Error::Domain("need at least one protected attribute".into()));
        }
        Ok(())
    }
}

/// One-hot row selecting a protected class among `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMask {
    mask: Vec<f64>,
}

impl OutputMask {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::Domain(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut mask = vec![0.0; num_classes];
        mask[class] = 1.0;
        Ok(OutputMask { mask })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mask
    }

    /// `mᵀ p`: picks the probability of the masked class.
    pub fn dot(&self, probs: &[f64]) -> Result<f64> {
        if probs.len() != self.mask.len() {
            return Err(Error::Dimension(format!(
                "mask of length {} against {} probabilities",
                self.mask.len(),
                probs.len()
            )));
        }
        Ok(self.mask.iter().zip(probs).map(|(m, p)| m * p).sum())
    }
}

/// Adversary cross-entropy `L_d` (nats) and its gradient w.r.t. the
/// discriminator logits.
pub fn discriminator_loss(disc_logits: &Matrix, z: &[usize]) -> Result<(f64, Matrix)> {
    cross_entropy(disc_logits, z)
}

/// Mean posterior entropy `H(d(u))` (nats) and its gradient w.r.t. logits.
///
/// For one row with `p = softmax(l)`: `∂H/∂l_j = -p_j (ln p_j + H)`.
pub fn entropy_term(disc_logits: &Matrix) -> Result<(f64, Matrix)> {
    if disc_logits.rows() == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let batch = disc_logits.rows() as f64;
    let mut grad = Matrix::zeros(disc_logits.rows(), disc_logits.cols());
    let mut total = 0.0;
    for r in 0..disc_logits.rows() {
        let p = softmax(disc_logits.row(r))?;
        let h: f64 = p
            .iter()
            .map(|&v| if v > 0.0 { -v * v.max(LOG_FLOOR).ln() } else { 0.0 })
            .sum();
        total += h;
        let g = grad.row_mut(r);
        for (j, &pj) in p.iter().enumerate() {
            g[j] = -pj * (pj.max(LOG_FLOOR).ln() + h) / batch;
        }
    }
    Ok((total / batch, grad))
}

/// Gumbel noise for one batch of discriminator logits.
pub fn sample_gumbel_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut noise = Matrix::zeros(rows, cols);
    for r in 0..rows {
        noise.row_mut(r).copy_from_slice(&sample_gumbel(cols, rng));
    }
    noise
}

/// Per-example δ values: `δᵢ = mᵢᵀ softmax_gumbel(log_softmax(lᵢ))`.
///
/// `noise = None` is the deterministic relaxation; with `τ = 1` it reduces
/// δ to the softmax probability of the true class, i.e. `exp(-L_d)`.
pub fn per_example_delta(
    disc_logits: &Matrix,
    z: &[usize],
    tau: f64,
    noise: Option<&Matrix>,
) -> Result<Vec<f64>> {
    if disc_logits.rows() != z.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows against {} labels",
            disc_logits.rows(),
            z.len()
        )));
    }
    if let Some(n) = noise {
        if n.rows() != disc_logits.rows() || n.cols() != disc_logits.cols() {
            return Err(Error::Dimension("noise shape does not match logits".into()));
        }
    }
    let classes = disc_logits.cols();
    z.iter()
        .enumerate()
        .map(|(r, &label)| {
            let mask = OutputMask::new(label, classes)?;
            let lp = log_softmax(disc_logits.row(r))?;
            let relaxed = gumbel_softmax(&lp, tau, noise.map(|n| n.row(r)))?;
            mask.dot(&relaxed)
        })
        .collect()
}

/// Mean δ over the batch with the reparameterized gradient w.r.t. logits
/// (Gumbel draws treated as constants).
///
/// For one row with relaxed output `y` and true class `k`:
/// `∂δ/∂l_i = y_k (1[k=i] - y_i) / τ`.
pub fn delta_loss(
    disc_logits: &Matrix,
    z: &[usize],
    tau: f64,
    noise: Option<&Matrix>,
) -> Result<(f64, Matrix)> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature {tau} must be > 0")));
    }
    if disc_logits.rows() == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let deltas = per_example_delta(disc_logits, z, tau, noise)?;
    let batch = disc_logits.rows() as f64;
    let mut grad = Matrix::zeros(disc_logits.rows(), disc_logits.cols());
    for (r, &label) in z.iter().enumerate() {
        let lp = log_softmax(disc_logits.row(r))?;
        let y = gumbel_softmax(&lp, tau, noise.map(|n| n.row(r)))?;
        let yk = y[label];
        let g = grad.row_mut(r);
        for (i, &yi) in y.iter().enumerate() {
            let indicator = if i == label { 1.0 } else { 0.0 };
            g[i] = yk * (indicator - yi) / (tau * batch);
        }
    }
    Ok((deltas.iter().sum::<f64>() / batch, grad))
}

/// δ-loss drawing fresh Gumbel noise from `rng` when the config asks for it.
pub fn delta_loss_sampled(
    disc_logits: &Matrix,
    z: &[usize],
    cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    let noise = if cfg.gumbel_noise {
        Some(sample_gumbel_noise(disc_logits.rows(), disc_logits.cols(), rng))
    } else {
        None
    };
    delta_loss(disc_logits, z, cfg.tau, noise.as_ref())
}

/// Value breakdown of one scrubber-loss evaluation (all nats except δ,
/// which is a probability).
#[derive(Debug, Clone)]
pub struct ScrubberLoss {
    pub task: f64,
    pub entropy_per_attr: Vec<f64>,
    /// Present only when λ₂ > 0.
    pub delta_per_attr: Option<Vec<f64>>,
    pub total: f64,
}

/// Scrubber loss plus gradients w.r.t. the task logits and each
/// discriminator's logits.
#[derive(Debug, Clone)]
pub struct ScrubberLossGrads {
    pub loss: ScrubberLoss,
    pub task_grad: Matrix,
    pub disc_grads: Vec<Matrix>,
}

/// `L_s = L_c - λ₁ Σₙ H(dₙ(u)) + λ₂ Σₙ δ(dₙ(u))` with exact gradients.
///
/// `noise_per_attr` supplies pre-drawn Gumbel noise (ignored entries when
/// λ₂ = 0); pass `None` for the deterministic relaxation.
pub fn scrubber_loss(
    task_logits: &Matrix,
    disc_logits_per_attr: &[Matrix],
    y: &[usize],
    z_per_attr: &[Vec<usize>],
    cfg: &LossConfig,
    noise_per_attr: Option<&[Matrix]>,
) -> Result<ScrubberLossGrads> {
    cfg.validate()?;
    if disc_logits_per_attr.len() != cfg.num_attrs || z_per_attr.len() != cfg.num_attrs {
        return Err(Error::Usage(format!(
            "expected {} protected attributes, got {} logit sets and {} label sets",
            cfg.num_attrs,
            disc_logits_per_attr.len(),
            z_per_attr.len()
        )));
    }
    if let Some(noise) = noise_per_attr {
        if noise.len() != cfg.num_attrs {
            return Err(Error::Usage(format!(
                "expected {} noise matrices, got {}",
                cfg.num_attrs,
                noise.len()
            )));
        }
    }

    let (task, task_grad) = cross_entropy(task_logits, y)?;
    let mut total = task;
    let mut entropy_per_attr = Vec::with_capacity(cfg.num_attrs);
    let mut delta_per_attr = if cfg.lambda2 > 0.0 {
        Some(Vec::with_capacity(cfg.num_attrs))
    } else {
        None
    };
    let mut disc_grads = Vec::with_capacity(cfg.num_attrs);

    for (n, (disc_logits, z)) in disc_logits_per_attr.iter().zip(z_per_attr).enumerate() {
        let (h, h_grad) = entropy_term(disc_logits)?;
        entropy_per_attr.push(h);
        total -= cfg.lambda1 * h;

        let mut grad = Matrix::zeros(disc_logits.rows(), disc_logits.cols());
        for (g, hg) in grad.as_mut_slice().iter_mut().zip(h_grad.as_slice()) {
            *g = -cfg.lambda1 * hg;
        }

        if let Some(deltas) = delta_per_attr.as_mut() {
            let noise = noise_per_attr.map(|ns| &ns[n]);
            let (d, d_grad) = delta_loss(disc_logits, z, cfg.tau, noise)?;
            deltas.push(d);
            total += cfg.lambda2 * d;
            for (g, dg) in grad.as_mut_slice().iter_mut().zip(d_grad.as_slice()) {
                *g += cfg.lambda2 * dg;
            }
        }
        disc_grads.push(grad);
    }

    Ok(ScrubberLossGrads {
        loss: ScrubberLoss {
            task,
            entropy_per_attr,
            delta_per_attr,
            total,
        },
        task_grad,
        disc_grads,
    })
}

/// Scrubber loss drawing any needed Gumbel noise from `rng`.
pub fn scrubber_loss_sampled(
    task_logits: &Matrix,
    disc_logits_per_attr: &[Matrix],
    y: &[usize],
    z_per_attr: &[Vec<usize>],
    cfg: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ScrubberLossGrads> {
    cfg.validate()?;
    let noise: Option<Vec<Matrix>> = if cfg.lambda2 > 0.0 && cfg.gumbel_noise {
        Some(
            disc_logits_per_attr
                .iter()
                .map(|m| sample_gumbel_noise(m.rows(), m.cols(), rng))
                .collect(),
        )
    } else {
        None
    };
    scrubber_loss(
        task_logits,
        disc_logits_per_attr,
        y,
        z_per_attr,
        cfg,
        noise.as_deref(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::component_rng;
    use rand::Rng;

    fn random_logits(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = component_rng(seed, "loss-test", 0);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.as_mut_slice() {
            *v = rng.random_range(-3.0..3.0);
        }
        m
    }

    #[test]
    fn discriminator_loss_matches_shared_kernel() {
        let logits = random_logits(6, 3, 21);
        let z = vec![0, 1, 2, 1, 0, 2];
        let (a, ga) = discriminator_loss(&logits, &z).unwrap();
        let (b, gb) = cross_entropy(&logits, &z).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn entropy_term_on_uniform_logits_is_ln_k() {
        let logits = Matrix::zeros(4, 3);
        let (h, _) = entropy_term(&logits).unwrap();
        assert!((h - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_term_mixes_confident_and_uniform_rows() {
        let logits = Matrix::from_rows(&[vec![50.0, -50.0], vec![0.0, 0.0]]).unwrap();
        let (h, _) = entropy_term(&logits).unwrap();
        assert!((h - 2f64.ln() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let logits = random_logits(3, 4, 33);
        let (_, grad) = entropy_term(&logits).unwrap();
        let eps = 1e-5;
        for r in 0..logits.rows() {
            for c in 0..logits.cols() {
                let mut plus = logits.clone();
                plus.set(r, c, logits.get(r, c) + eps);
                let mut minus = logits.clone();
                minus.set(r, c, logits.get(r, c) - eps);
                let numeric =
                    (entropy_term(&plus).unwrap().0 - entropy_term(&minus).unwrap().0) / (2.0 * eps);
                let analytic = grad.get(r, c);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "entropy grad mismatch at ({r},{c}): {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn deterministic_delta_on_uniform_binary_logits_is_half() {
        let logits = Matrix::zeros(3, 2);
        let z = vec![0, 1, 0];
        let cfg = LossConfig {
            gumbel_noise: false,
            ..LossConfig::default()
        };
        let mut rng = component_rng(1, "unused", 0);
        let (d, _) = delta_loss_sampled(&logits, &z, &cfg, &mut rng).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_delta_equals_exp_of_negative_per_example_loss() {
        for k in [2usize, 3, 5] {
            let logits = random_logits(20, k, 40 + k as u64);
            let mut rng = component_rng(41, "labels", k as u64);
            let z: Vec<usize> = (0..20).map(|_| rng.random_range(0..k)).collect();
            let deltas = per_example_delta(&logits, &z, 1.0, None).unwrap();
            let nll = crate::num::ops::per_example_nll(&logits, &z).unwrap();
            for (d, l) in deltas.iter().zip(&nll) {
                assert!(
                    (d - (-l).exp()).abs() < 1e-12,
                    "δ={d} vs exp(-L_d)={}",
                    (-l).exp()
                );
            }
        }
    }

    #[test]
    fn delta_is_monotone_decreasing_in_per_example_loss() {
        // Sweep the true-class logit with the others fixed; δ must fall as
        // the per-example cross-entropy rises.
        let mut pairs = Vec::new();
        for step in 0..40 {
            let logit = -4.0 + 0.2 * step as f64;
            let logits = Matrix::from_rows(&[vec![logit, 0.7, -0.3]]).unwrap();
            let z = vec![0usize];
            let nll = crate::num::ops::per_example_nll(&logits, &z).unwrap()[0];
            let delta = per_example_delta(&logits, &z, 0.7, None).unwrap()[0];
            pairs.push((nll, delta));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(
                w[1].1 < w[0].1,
                "δ did not decrease: {:?} -> {:?}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn delta_gradient_matches_finite_differences_with_frozen_noise() {
        let logits = random_logits(4, 3, 55);
        let z = vec![0, 2, 1, 1];
        let mut rng = component_rng(56, "noise", 0);
        let noise = sample_gumbel_noise(4, 3, &mut rng);
        let tau = 0.6;
        let (_, grad) = delta_loss(&logits, &z, tau, Some(&noise)).unwrap();
        let eps = 1e-5;
        for r in 0..logits.rows() {
            for c in 0..logits.cols() {
                let mut plus = logits.clone();
                plus.set(r, c, logits.get(r, c) + eps);
                let mut minus = logits.clone();
                minus.set(r, c, logits.get(r, c) - eps);
                let numeric = (delta_loss(&plus, &z, tau, Some(&noise)).unwrap().0
                    - delta_loss(&minus, &z, tau, Some(&noise)).unwrap().0)
                    / (2.0 * eps);
                let analytic = grad.get(r, c);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "delta grad mismatch at ({r},{c}): {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn sampled_delta_mean_matches_independent_monte_carlo() {
        // Mean δ under Gumbel noise vs. an independent straight-line sampler.
        let logits = random_logits(1, 3, 60);
        let z = vec![1usize];
        let tau = 0.5;
        let cfg = LossConfig {
            lambda2: 1.0,
            tau,
            gumbel_noise: true,
            ..LossConfig::default()
        };
        let draws = 10_000;
        let mut rng = component_rng(61, "delta-mc", 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let (d, _) = delta_loss_sampled(&logits, &z, &cfg, &mut rng).unwrap();
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / draws as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let sigma = (var / draws as f64).sqrt();

        // Independent sampler: raw exp/log arithmetic, separate RNG stream.
        let mut oracle_rng = component_rng(62, "delta-mc-oracle", 0);
        let lp = log_softmax(logits.row(0)).unwrap();
        let mut oracle_sum = 0.0;
        for _ in 0..draws {
            let mut num = [0.0f64; 3];
            for (i, v) in num.iter_mut().enumerate() {
                let u: f64 = oracle_rng.random::<f64>().clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
                let g = -(-u.ln()).ln();
                *v = ((lp[i] + g) / tau).exp();
            }
            let denom: f64 = num.iter().sum();
            oracle_sum += num[z[0]] / denom;
        }
        let oracle_mean = oracle_sum / draws as f64;
        assert!(
            (mean - oracle_mean).abs() < 3.0 * sigma.max(1e-4),
            "sampled δ mean {mean} vs oracle {oracle_mean} (3σ={})",
            3.0 * sigma
        );
    }

    #[test]
    fn scrubber_loss_with_zero_weights_is_task_loss() {
        let task_logits = random_logits(5, 2, 70);
        let disc_logits = vec![random_logits(5, 2, 71)];
        let y = vec![0, 1, 1, 0, 1];
        let z = vec![vec![1, 0, 0, 1, 1]];
        let cfg = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..LossConfig::default()
        };
        let out = scrubber_loss(&task_logits, &disc_logits, &y, &z, &cfg, None).unwrap();
        let (task_only, task_grad) = cross_entropy(&task_logits, &y).unwrap();
        assert_eq!(out.loss.total, task_only);
        assert_eq!(out.task_grad, task_grad);
        assert!(out.disc_grads[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scrubber_loss_composes_uniform_disc_and_perfect_task() {
        let task_logits = Matrix::from_rows(&[vec![30.0, -30.0], vec![-30.0, 30.0]]).unwrap();
        let disc_logits = vec![Matrix::zeros(2, 2)];
        let y = vec![0, 1];
        let z = vec![vec![0, 1]];
        let cfg = LossConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            ..LossConfig::default()
        };
        let out = scrubber_loss(&task_logits, &disc_logits, &y, &z, &cfg, None).unwrap();
        assert!((out.loss.total - (0.0 - 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn two_attribute_loss_recomposes_from_single_attribute_calls() {
        let task_logits = random_logits(6, 2, 80);
        let d1 = random_logits(6, 3, 81);
        let d2 = random_logits(6, 2, 82);
        let y = vec![0, 1, 0, 1, 1, 0];
        let z1 = vec![0, 2, 1, 1, 0, 2];
        let z2 = vec![1, 0, 0, 1, 1, 0];
        let cfg2 = LossConfig {
            lambda1: 1.0,
            lambda2: 0.5,
            tau: 0.8,
            gumbel_noise: false,
            num_attrs: 2,
        };
        let both = scrubber_loss(
            &task_logits,
            &[d1.clone(), d2.clone()],
            &y,
            &[z1.clone(), z2.clone()],
            &cfg2,
            None,
        )
        .unwrap();
        let cfg1 = LossConfig {
            num_attrs: 1,
            ..cfg2.clone()
        };
        let only1 = scrubber_loss(&task_logits, &[d1], &y, &[z1], &cfg1, None).unwrap();
        let only2 = scrubber_loss(&task_logits, &[d2], &y, &[z2], &cfg1, None).unwrap();
        let (task_only, _) = cross_entropy(&task_logits, &y).unwrap();
        let recomposed = only1.loss.total + only2.loss.total - task_only;
        assert!(
            (both.loss.total - recomposed).abs() < 1e-12,
            "{} vs {}",
            both.loss.total,
            recomposed
        );
    }

    #[test]
    fn attribute_count_mismatch_is_a_usage_error() {
        let task_logits = random_logits(2, 2, 90);
        let disc = vec![random_logits(2, 2, 91)];
        let cfg = LossConfig {
            num_attrs: 2,
            ..LossConfig::default()
        };
        let err = scrubber_loss(&task_logits, &disc, &[0, 1], &[vec![0, 1]], &cfg, None);
        assert!(matches!(err, Err(Error::Usage(_))));
    }
}
