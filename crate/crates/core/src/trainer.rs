//! Alternating adversarial training.
//!
//! Each iteration runs two phases. Phase 1 updates only the discriminators
//! on the cross-entropy of the protected labels, with the encoder, scrubber
//! and task head frozen. Phase 2 recomputes the forward pass under the
//! freshly updated discriminators and applies the composite scrubber-loss
//! gradient to the encoder, scrubber and task head, with the discriminators
//! frozen.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, scrubber_loss_sampled, LossConfig};
use crate::model::AdsModel;
use crate::num::GradientTape;
use crate::optim::{adamw_step, AdamWParams, AdamWState};
use crate::seed::component_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Full adversarial training.
    Ads,
    /// Task fine-tuning baseline: no discriminator updates, λ₁ = λ₂ = 0.
    NoAdversary,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Ads => "ads",
            Regime::NoAdversary => "no-adversary",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ads" => Ok(Regime::Ads),
            "no-adversary" => Ok(Regime::NoAdversary),
            other => Err(Error::Usage(format!("unknown regime '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adamw: AdamWParams,
    pub regime: Regime,
    /// Discriminator updates per scrubber update.
    pub disc_steps: usize,
    /// Global-norm gradient clip, applied per phase.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            adamw: AdamWParams::default(),
            regime: Regime::Ads,
            disc_steps: 1,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.adamw.validate()?;
        if self.epochs < 1 || self.batch_size < 1 || self.disc_steps < 1 {
            return Err(Error::Domain(
                "epochs, batch_size and disc_steps must all be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Domain(
                "learning rate must be >= 0 and grad clip > 0".into(),
            ));
        }
        Ok(())
    }

    /// The loss weights phase 2 actually uses under this regime.
    fn effective_loss(&self) -> LossConfig {
        match self.regime {
            Regime::Ads => self.loss.clone(),
            Regime::NoAdversary => LossConfig {
                lambda1: 0.0,
                lambda2: 0.0,
                ..self.loss.clone()
            },
        }
    }
}

/// One record per scrubber update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Mean discriminator loss at the start of phase 1; absent when the
    /// regime never updates discriminators.
    pub l_d: Option<f64>,
    pub l_c: f64,
    /// Mean posterior entropy term; absent when not evaluated.
    pub h_term: Option<f64>,
    /// Mean δ term; absent when λ₂ = 0.
    pub delta_term: Option<f64>,
    pub l_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    /// CSV with columns `iter,L_d,L_c,H,delta,L_s`; empty cells for values
    /// the regime never produced.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,L_d,L_c,H,delta,L_s\n");
        for r in &self.records {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter,
                opt(r.l_d),
                r.l_c,
                opt(r.h_term),
                opt(r.delta_term),
                r.l_s
            ));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.records.iter().all(|r| {
            r.l_c.is_finite()
                && r.l_s.is_finite()
                && r.l_d.map_or(true, f64::is_finite)
                && r.h_term.map_or(true, f64::is_finite)
                && r.delta_term.map_or(true, f64::is_finite)
        })
    }
}

/// Optimizer states and RNG streams for one training run.
pub struct Trainer {
    cfg: TrainConfig,
    opt_encoder: AdamWState,
    opt_scrubber: AdamWState,
    opt_task: AdamWState,
    opt_discs: Vec<AdamWState>,
    noise_rng: ChaCha8Rng,
    iter: usize,
}

fn clip_global_norm(tapes: &mut [&mut GradientTape], max_norm: f64) {
    let norm = tapes
        .iter()
        .map(|t| t.squared_l2_norm())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for tape in tapes {
            tape.scale(factor);
        }
    }
}

impl Trainer {
    pub fn new(model: &AdsModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.loss.num_attrs != model.num_attrs() {
            return Err(Error::Usage(format!(
                "loss config declares {} protected attributes, model has {}",
                cfg.loss.num_attrs,
                model.num_attrs()
            )));
        }
        Ok(Trainer {
            opt_encoder: AdamWState::new(&model.encoder),
            opt_scrubber: AdamWState::new(&model.scrubber),
            opt_task: AdamWState::new(&model.task_head),
            opt_discs: model.discriminators.iter().map(AdamWState::new).collect(),
            noise_rng: component_rng(cfg.seed, "gumbel", 0),
            cfg,
            iter: 0,
        })
    }

    /// One two-phase update. Returns the loss record for this iteration.
    pub fn step(&mut self, model: &mut AdsModel, batch: &Batch) -> Result<TraceRecord> {
        let lr = self.cfg.learning_rate;

        // Phase 1: discriminators only, u recomputed fresh each sub-step.
        let mut phase1_l_d = None;
        if self.cfg.regime == Regime::Ads {
            for sub in 0..self.cfg.disc_steps {
                let embedding = model.encode(&batch.x)?;
                let scrubbed = model.scrub(&embedding)?;
                let mut tapes = Vec::with_capacity(model.num_attrs());
                let mut mean_l_d = 0.0;
                for (n, disc) in model.discriminators.iter().enumerate() {
                    let (logits, cache) = disc.forward(&scrubbed)?;
                    let (l_d, grad) = discriminator_loss(&logits, &batch.z[n])?;
                    if !l_d.is_finite() {
                        return Err(Error::Numerical(format!(
                            "discriminator loss for attribute {n} is {l_d} at iteration {}",
                            self.iter
                        )));
                    }
                    mean_l_d += l_d / model.num_attrs() as f64;
                    tapes.push(disc.backward(&cache, &grad)?);
                }
                {
                    let mut refs: Vec<&mut GradientTape> = tapes.iter_mut().collect();
                    clip_global_norm(&mut refs, self.cfg.grad_clip);
                }
                for ((disc, tape), state) in model
                    .discriminators
                    .iter_mut()
                    .zip(&tapes)
                    .zip(&mut self.opt_discs)
                {
                    adamw_step(disc, tape, state, lr, &self.cfg.adamw)?;
                }
                if sub == 0 {
                    phase1_l_d = Some(mean_l_d);
                }
            }
        }

        // Phase 2: encoder + scrubber + task head, discriminators frozen.
        // d(u) is recomputed under the phase-1-updated discriminators.
        let loss_cfg = self.cfg.effective_loss();
        let adversarial = loss_cfg.lambda1 > 0.0 || loss_cfg.lambda2 > 0.0;

        let (embedding, cache_h) = model.encoder.forward(&batch.x)?;
        let (scrubbed, cache_s) = model.scrubber.forward(&embedding)?;
        let (task_logits, cache_c) = model.task_head.forward(&scrubbed)?;

        let mut disc_logits = Vec::new();
        let mut disc_caches = Vec::new();
        for disc in &model.discriminators {
            let (logits, cache) = disc.forward(&scrubbed)?;
            disc_logits.push(logits);
            disc_caches.push(cache);
        }

        let out = scrubber_loss_sampled(
            &task_logits,
            &disc_logits,
            &batch.y,
            &batch.z,
            &loss_cfg,
            &mut self.noise_rng,
        )?;
        if !out.loss.total.is_finite() {
            return Err(Error::Numerical(format!(
                "scrubber loss is {} at iteration {}",
                out.loss.total, self.iter
            )));
        }

        let mut tape_task = model.task_head.backward(&cache_c, &out.task_grad)?;
        let mut d_scrubbed = tape_task.d_input.clone();
        if adversarial {
            for ((disc, cache), grad) in model
                .discriminators
                .iter()
                .zip(&disc_caches)
                .zip(&out.disc_grads)
            {
                let tape = disc.backward(cache, grad)?;
                d_scrubbed.add_assign(&tape.d_input)?;
            }
        }
        let mut tape_scrubber = model.scrubber.backward(&cache_s, &d_scrubbed)?;
        let mut tape_encoder = model.encoder.backward(&cache_h, &tape_scrubber.d_input)?;

        {
            let mut refs: Vec<&mut GradientTape> =
                vec![&mut tape_task, &mut tape_scrubber, &mut tape_encoder];
            clip_global_norm(&mut refs, self.cfg.grad_clip);
        }
        adamw_step(&mut model.task_head, &tape_task, &mut self.opt_task, lr, &self.cfg.adamw)?;
        adamw_step(
            &mut model.scrubber,
            &tape_scrubber,
            &mut self.opt_scrubber,
            lr,
            &self.cfg.adamw,
        )?;
        adamw_step(
            &mut model.encoder,
            &tape_encoder,
            &mut self.opt_encoder,
            lr,
            &self.cfg.adamw,
        )?;

        let record = TraceRecord {
            iter: self.iter,
            l_d: phase1_l_d,
            l_c: out.loss.task,
            h_term: if adversarial {
                Some(out.loss.entropy_per_attr.iter().sum::<f64>())
            } else {
                None
            },
            delta_term: out
                .loss
                .delta_per_attr
                .as_ref()
                .map(|d| d.iter().sum::<f64>()),
            l_s: out.loss.total,
        };
        self.iter += 1;
        Ok(record)
    }
}

/// Epoch-wise shuffled minibatch boundaries for one epoch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Run Algorithm-style training over the dataset. Deterministic for a fixed
/// config: shuffling, Gumbel draws and init all flow from labeled sub-seeds.
pub fn train(mut model: AdsModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<(AdsModel, TrainTrace)> {
    cfg.validate()?;
    dataset.check_compatible(&model.dims)?;
    if dataset.len() == 0 {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }

    let mut trainer = Trainer::new(&model, cfg.clone())?;
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = component_rng(cfg.seed, "shuffle", epoch as u64);
        for indices in epoch_batches(dataset.len(), cfg.batch_size, &mut shuffle_rng) {
            let batch = dataset.batch(&indices)?;
            let record = trainer.step(&mut model, &batch)?;
            trace.records.push(record);
        }
    }
    Ok((model, trace))
}

/// Entropy of the empirical label marginal, in nats: the discriminator loss
/// an information-free representation converges to.
pub fn majority_entropy_nats(labels: &[usize], num_classes: usize) -> f64 {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}
