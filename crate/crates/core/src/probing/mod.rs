//! Post-hoc leakage evaluation: probing classifiers, F1/Δz metrics and
//! Minimum Description Length via online coding.
//!
//! Training losses elsewhere are in nats; everything here that measures
//! codelength is in bits. That unit boundary lives in this module.

pub mod dump;
pub mod metrics;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::ops::{cross_entropy, log_softmax, LOG_FLOOR};
use crate::num::{Activation, Matrix, Mlp};
use crate::optim::{adamw_step, AdamWParams, AdamWState};
use crate::seed::{component_rng, derive_seed};

pub use metrics::{metrics, Metrics};

/// Cumulative dataset fractions defining the online-code timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSchedule {
    pub fractions: Vec<f64>,
}

impl Default for FractionSchedule {
    fn default() -> Self {
        FractionSchedule {
            fractions: vec![
                0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.0625, 0.125, 0.25, 0.5, 1.0,
            ],
        }
    }
}

impl FractionSchedule {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        let schedule = FractionSchedule { fractions };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Schedule("empty fraction schedule".into()));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schedule(format!(
                "fractions must be strictly increasing: {:?}",
                self.fractions
            )));
        }
        if self.fractions[0] <= 0.0 || (self.fractions.last().unwrap() - 1.0).abs() > 1e-12 {
            return Err(Error::Schedule(
                "fractions must start above 0 and end at exactly 1.0".into(),
            ));
        }
        Ok(())
    }

    /// Timesteps `t_i` for a dataset of `n` labels, rounded up so every
    /// prefix holds at least one example.
    pub fn boundaries(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Schedule("cannot schedule an empty dataset".into()));
        }
        let mut out = Vec::with_capacity(self.fractions.len());
        for &f in &self.fractions {
            let q = f * n as f64;
            let t = if (q - q.round()).abs() < 1e-9 {
                q.round() as usize
            } else {
                q.ceil() as usize
            };
            out.push(t.max(1).min(n));
        }
        if out.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schedule(format!(
                "schedule induces an empty block on {n} examples: {out:?}"
            )));
        }
        Ok(out)
    }
}

/// Probe training hyperparameters. The architecture itself is fixed: one
/// hidden layer of `hidden` ReLU units trained with AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Minimum improvement that resets the plateau counter.
    pub tol: f64,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Share of the block held out to monitor the plateau (when the block
    /// is large enough); the best-scoring parameters are kept.
    pub val_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 100,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            batch_size: 200,
            max_epochs: 60,
            tol: 1e-4,
            patience: 6,
            val_fraction: 0.1,
        }
    }
}

/// A trained probe plus what it predicted on the held-out rows.
#[derive(Debug, Clone)]
pub struct ProbeFit {
    pub probe: Mlp,
    pub majority_fallback: bool,
    pub heldout_predictions: Vec<usize>,
    pub heldout_labels: Vec<usize>,
}

/// Per-(representation, attribute) evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub attribute: String,
    pub num_examples: usize,
    /// Percents.
    pub f1_macro: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Percentage points above the random baseline; protected attributes only.
    pub delta_z: Option<f64>,
    /// Online codelength in bits.
    pub mdl_bits: f64,
    /// Bits per 1000 labels.
    pub normalized_mdl: f64,
    pub per_block_codelengths: Vec<f64>,
    pub majority_fallback: bool,
}

/// Constant predictor emitting the Laplace-smoothed class marginal of the
/// training labels, as a linear layer with zero weights.
fn majority_probe(input_dim: usize, num_classes: usize, labels: &[usize]) -> Result<Mlp> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let total = labels.len() + num_classes;
    let bias: Vec<f64> = counts
        .iter()
        .map(|&c| ((c + 1) as f64 / total as f64).ln())
        .collect();
    Mlp::from_parts(
        vec![Matrix::zeros(input_dim, num_classes)],
        vec![bias],
        Activation::Identity,
    )
}

fn mean_nll(probe: &Mlp, reps: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = probe.infer(reps)?;
    let nll = crate::num::ops::per_example_nll(&logits, labels)?;
    Ok(nll.iter().sum::<f64>() / nll.len() as f64)
}

/// Train a probe on the whole block. Falls back to the majority predictor
/// when the block is single-class.
pub fn fit_probe(
    reps: &Matrix,
    labels: &[usize],
    num_classes: usize,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<(Mlp, bool)> {
    if reps.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} representation rows against {} labels",
            reps.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Usage("cannot fit a probe on zero examples".into()));
    }
    if num_classes < 2 {
        return Err(Error::Domain("probes need at least 2 classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }

    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Ok((majority_probe(reps.cols(), num_classes, labels)?, true));
    }

    let n = labels.len();
    let mut rng = component_rng(seed, "probe", 0);
    let mut probe = Mlp::init(&[reps.cols(), cfg.hidden, num_classes], Activation::ReLU, &mut rng)?;
    let mut state = AdamWState::new(&probe);
    let adamw = AdamWParams {
        weight_decay: cfg.weight_decay,
        ..AdamWParams::default()
    };

    // Carve a monitoring slice out of blocks big enough to afford one.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let val_count = if n >= 20 {
        ((n as f64 * cfg.val_fraction).round() as usize).max(2)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(val_count);
    let val_reps = reps.gather_rows(val_idx)?;
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();
    let monitor_on_val = val_count > 0;

    let batch_size = cfg.batch_size.min(train_idx.len()).max(1);
    let mut best_monitor = f64::INFINITY;
    let mut best_params: Option<Mlp> = None;
    let mut bad_epochs = 0usize;

    let mut train_order = train_idx.to_vec();
    for _epoch in 0..cfg.max_epochs {
        train_order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;
        for chunk in train_order.chunks(batch_size) {
            let x = reps.gather_rows(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = probe.forward(&x)?;
            let (loss, grad) = cross_entropy(&logits, &y)?;
            epoch_nll += loss * chunk.len() as f64;
            let tape = probe.backward(&cache, &grad)?;
            adamw_step(&mut probe, &tape, &mut state, cfg.learning_rate, &adamw)?;
        }
        let monitor = if monitor_on_val {
            mean_nll(&probe, &val_reps, &val_labels)?
        } else {
            epoch_nll / train_order.len() as f64
        };
        if monitor < best_monitor - cfg.tol {
            best_monitor = monitor;
            if monitor_on_val {
                best_params = Some(probe.clone());
            }
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        probe = best;
    }
    Ok((probe, false))
}

/// Argmax predictions of a probe.
pub fn predict(probe: &Mlp, reps: &Matrix) -> Result<Vec<usize>> {
    let logits = probe.infer(reps)?;
    Ok((0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect())
}

/// Train a probe with an internal seeded 80/20 split and predict the
/// held-out rows.
pub fn train_probe(
    reps: &Matrix,
    labels: &[usize],
    num_classes: usize,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    if reps.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} representation rows against {} labels",
            reps.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Usage("cannot probe zero examples".into()));
    }
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut component_rng(seed, "probe-split", 0));
    let heldout_count = if n >= 2 { (n / 5).max(1) } else { 0 };
    let (heldout_idx, train_idx) = order.split_at(heldout_count);

    let train_reps = reps.gather_rows(train_idx)?;
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let (probe, majority_fallback) =
        fit_probe(&train_reps, &train_labels, num_classes, derive_seed(seed, "probe-fit", 0), cfg)?;

    let heldout_reps = reps.gather_rows(heldout_idx)?;
    let heldout_predictions = if heldout_idx.is_empty() {
        Vec::new()
    } else {
        predict(&probe, &heldout_reps)?
    };
    Ok(ProbeFit {
        probe,
        majority_fallback,
        heldout_predictions,
        heldout_labels: heldout_idx.iter().map(|&i| labels[i]).collect(),
    })
}

/// Online-code result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlOutcome {
    pub total_bits: f64,
    /// Entry 0 is the uniform-coded first block, then one entry per trained
    /// block in schedule order.
    pub per_block_codelengths: Vec<f64>,
    pub boundaries: Vec<usize>,
}

/// Bits to transmit one evaluation chunk under a trained probe.
fn block_cost(probe: &Mlp, reps: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = probe.infer(reps)?;
    let mut bits = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= logits.cols() {
            return Err(Error::Domain(format!(
                "label {label} out of range for {} classes",
                logits.cols()
            )));
        }
        let lp = log_softmax(logits.row(r))?;
        let p = lp[label].exp().max(LOG_FLOOR);
        bits -= p.log2();
    }
    Ok(bits)
}

/// Online-code MDL: the first block is uniform-coded at `t₁·log₂C` bits,
/// every later block is coded by a fresh probe trained on the cumulative
/// prefix before it.
///
/// Labels are transmitted in the order given; shuffle beforehand when the
/// input order is structured (e.g. sorted by label). Per-block seeds derive
/// from `(seed, block index)`, so results are identical for any `threads`
/// value (0 = rayon default).
pub fn online_mdl(
    reps: &Matrix,
    labels: &[usize],
    schedule: &FractionSchedule,
    num_classes: usize,
    seed: u64,
    threads: usize,
    cfg: &ProbeConfig,
) -> Result<MdlOutcome> {
    if reps.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} representation rows against {} labels",
            reps.rows(),
            labels.len()
        )));
    }
    if num_classes < 2 {
        return Err(Error::Domain("online code needs at least 2 classes".into()));
    }
    let n = labels.len();
    let boundaries = schedule.boundaries(n)?;
    let labels = labels.to_vec();

    let uniform_bits = boundaries[0] as f64 * (num_classes as f64).log2();

    let compute = |block: usize| -> Result<f64> {
        let t_train = boundaries[block - 1];
        let t_end = boundaries[block];
        let train_idx: Vec<usize> = (0..t_train).collect();
        let train_reps = reps.gather_rows(&train_idx)?;
        let (probe, _) = fit_probe(
            &train_reps,
            &labels[..t_train],
            num_classes,
            derive_seed(seed, "mdl-block", block as u64),
            cfg,
        )?;
        let eval_idx: Vec<usize> = (t_train..t_end).collect();
        let eval_reps = reps.gather_rows(&eval_idx)?;
        block_cost(&probe, &eval_reps, &labels[t_train..t_end])
    };

    let trained_blocks: Vec<usize> = (1..boundaries.len()).collect();
    let costs: Result<Vec<f64>> = if threads == 1 {
        trained_blocks.iter().map(|&b| compute(b)).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
        pool.install(|| trained_blocks.par_iter().map(|&b| compute(b)).collect())
    };
    let costs = costs?;

    let mut per_block = Vec::with_capacity(boundaries.len());
    per_block.push(uniform_bits);
    per_block.extend(costs);
    Ok(MdlOutcome {
        total_bits: per_block.iter().sum(),
        per_block_codelengths: per_block,
        boundaries,
    })
}

/// Bits per 1000 labels.
pub fn normalized_mdl(mdl_bits: f64, dataset_size: usize) -> Result<f64> {
    if dataset_size == 0 {
        return Err(Error::Usage("dataset size must be positive".into()));
    }
    Ok(1000.0 * mdl_bits / dataset_size as f64)
}
