//! Probability transforms and classification losses.
//!
//! Training losses are in nats. Codelengths (bits) live in the probing
//! module; the unit boundary is there, not here.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::matrix::Matrix;

/// Floor for every log argument and uniform draw.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_finite_slice(values: &[f64], context: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite input to {context}")));
    }
    Ok(())
}

/// Numerically stable softmax of one logit row (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_finite_slice(logits, "softmax")?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Log-probabilities of one logit row: `l - max - ln Σ exp(l - max)`.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_finite_slice(logits, "log_softmax")?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&v| v - max - log_sum).collect())
}

/// Row-wise softmax over a batch of logits.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        out.row_mut(r).copy_from_slice(&softmax(logits.row(r))?);
    }
    Ok(out)
}

/// Shannon entropy of a probability vector, in nats.
///
/// Zero-probability entries contribute zero.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_finite_slice(p, "entropy")?;
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("negative probability".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(p.iter()
        .map(|&v| if v > 0.0 { -v * v.max(LOG_FLOOR).ln() } else { 0.0 })
        .sum())
}

/// One sample per slot from Gumbel(0,1): `-ln(-ln U)` with clamped `U`.
pub fn sample_gumbel(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Gumbel-softmax relaxation: `softmax((log_probs + g)/τ)`.
///
/// `noise = None` is deterministic mode (`g = 0`); at `τ = 1` that is the
/// identity on probability vectors.
pub fn gumbel_softmax(log_probs: &[f64], tau: f64, noise: Option<&[f64]>) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature {tau} must be > 0")));
    }
    check_finite_slice(log_probs, "gumbel_softmax")?;
    let scaled: Vec<f64> = match noise {
        Some(g) => {
            if g.len() != log_probs.len() {
                return Err(Error::Dimension(format!(
                    "noise of length {} against {} log-probs",
                    g.len(),
                    log_probs.len()
                )));
            }
            log_probs.iter().zip(g).map(|(&lp, &gv)| (lp + gv) / tau).collect()
        }
        None => log_probs.iter().map(|&lp| lp / tau).collect(),
    };
    softmax(&scaled)
}

/// Convenience: draw the Gumbel noise from `rng` and relax in one call.
pub fn gumbel_softmax_sampled(
    log_probs: &[f64],
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let noise = sample_gumbel(log_probs.len(), rng);
    gumbel_softmax(log_probs, tau, Some(&noise))
}

/// Mean cross-entropy over a batch, in nats, with the gradient w.r.t. logits.
///
/// `grad = (softmax - onehot) / batch_size`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows against {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let classes = logits.cols();
    let batch = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Domain(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let lp = log_softmax(logits.row(r))?;
        total -= lp[label];
        let g = grad.row_mut(r);
        for (c, &lpv) in lp.iter().enumerate() {
            g[c] = lpv.exp() / batch;
        }
        g[label] -= 1.0 / batch;
    }
    Ok((total / batch, grad))
}

/// Per-example negative log-likelihoods in nats (no batch reduction).
pub fn per_example_nll(logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows against {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    labels
        .iter()
        .enumerate()
        .map(|(r, &label)| {
            if label >= logits.cols() {
                return Err(Error::Domain(format!(
                    "label {label} out of range for {} classes",
                    logits.cols()
                )));
            }
            Ok(-log_softmax(logits.row(r))?[label])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::component_rng;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 1.0 - 1e-12);
        assert!(p[1] < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_grid_uniform_and_one_hot() {
        for k in 2..=8usize {
            let uniform = vec![1.0 / k as f64; k];
            assert!((entropy(&uniform).unwrap() - (k as f64).ln()).abs() < 1e-12);
            let mut one_hot = vec![0.0; k];
            one_hot[k / 2] = 1.0;
            assert_eq!(entropy(&one_hot).unwrap(), 0.0);
        }
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(matches!(entropy(&[0.7, 0.7]), Err(Error::Domain(_))));
        assert!(matches!(entropy(&[1.5, -0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn deterministic_gumbel_at_unit_temperature_is_identity() {
        let p = [0.5, 0.5];
        let lp: Vec<f64> = p.iter().map(|&v: &f64| v.ln()).collect();
        let out = gumbel_softmax(&lp, 1.0, None).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12);

        let p = [0.2, 0.3, 0.5];
        let lp: Vec<f64> = p.iter().map(|&v: &f64| v.ln()).collect();
        let out = gumbel_softmax(&lp, 1.0, None).unwrap();
        for (o, e) in out.iter().zip(&p) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn gumbel_rejects_bad_temperature() {
        assert!(matches!(
            gumbel_softmax(&[0.0, 0.0], 0.0, None),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            gumbel_softmax(&[0.0, 0.0], -1.0, None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gumbel_argmax_frequency_follows_the_distribution() {
        // Gumbel-max property: argmax(log p + g) ~ Categorical(p), for any τ.
        let p = [0.7, 0.3];
        let lp: Vec<f64> = p.iter().map(|&v: &f64| v.ln()).collect();
        let mut rng = component_rng(11, "gumbel-mc", 0);
        let draws = 100_000;
        let mut hits = 0usize;
        for _ in 0..draws {
            let y = gumbel_softmax_sampled(&lp, 0.5, &mut rng).unwrap();
            if y[0] > y[1] {
                hits += 1;
            }
        }
        let freq = hits as f64 / draws as f64;
        assert!(
            (freq - 0.7).abs() < 0.01,
            "argmax frequency {freq} not within 0.01 of 0.7"
        );
    }

    #[test]
    fn cross_entropy_uniform_and_confident_cases() {
        let logits = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let (loss, _) = cross_entropy(&logits, &[1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);

        let logits = Matrix::from_vec(1, 2, vec![20.0, -20.0]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_labels() {
        let logits = Matrix::zeros(1, 2);
        assert!(matches!(
            cross_entropy(&logits, &[2]),
            Err(Error::Domain(_))
        ));
    }
}
