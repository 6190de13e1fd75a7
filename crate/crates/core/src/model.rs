//! Composition of the four networks: encoder h, scrubber s, task classifier
//! c and one bias discriminator d_n per protected attribute.
//!
//! `u = s(h(x))` is the representation everything downstream consumes. The
//! encoder and scrubber are 2-layer ReLU networks; both heads are single
//! linear layers.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{Activation, Matrix, Mlp};
use crate::seed::component_rng;

/// Layer widths of the composed model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub embed: usize,
    pub scrubbed: usize,
    pub hidden: usize,
    pub task_classes: usize,
    /// K_n for each protected attribute.
    pub protected_classes: Vec<usize>,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input: 64,
            embed: 32,
            scrubbed: 32,
            hidden: 32,
            task_classes: 2,
            protected_classes: vec![2],
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [self.input, self.embed, self.scrubbed, self.hidden, self.task_classes];
        if all.iter().any(|&d| d == 0) || self.protected_classes.iter().any(|&k| k < 2) {
            return Err(Error::Dimension(format!("degenerate model dims: {self:?}")));
        }
        Ok(())
    }
}

/// Which representation a probe sees (the four evaluation settings).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepresentationTap {
    /// h(x) from the frozen initial encoder.
    PretrainedEncoder,
    /// h(x) after fine-tuning on the target task without an adversary.
    FinetunedEncoder,
    /// h(x) after adversarial training.
    AdsEncoder,
    /// s(h(x)) after adversarial training.
    AdsScrubbed,
}

impl RepresentationTap {
    pub const ALL: [RepresentationTap; 4] = [
        RepresentationTap::PretrainedEncoder,
        RepresentationTap::FinetunedEncoder,
        RepresentationTap::AdsEncoder,
        RepresentationTap::AdsScrubbed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationTap::PretrainedEncoder => "pretrained-encoder",
            RepresentationTap::FinetunedEncoder => "finetuned-encoder",
            RepresentationTap::AdsEncoder => "ads-encoder",
            RepresentationTap::AdsScrubbed => "ads-scrubbed",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pretrained-encoder" => Ok(RepresentationTap::PretrainedEncoder),
            "finetuned-encoder" => Ok(RepresentationTap::FinetunedEncoder),
            "ads-encoder" => Ok(RepresentationTap::AdsEncoder),
            "ads-scrubbed" => Ok(RepresentationTap::AdsScrubbed),
            other => Err(Error::Usage(format!("unknown representation tap '{other}'"))),
        }
    }
}

/// The composed model with its four parameter sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdsModel {
    pub dims: ModelDims,
    pub encoder: Mlp,
    pub scrubber: Mlp,
    pub task_head: Mlp,
    pub discriminators: Vec<Mlp>,
}

impl AdsModel {
    /// Seeded Xavier init of all four parameter sets. Sub-streams are
    /// labeled so adding a discriminator never shifts the others.
    pub fn init(dims: &ModelDims, master_seed: u64) -> Result<Self> {
        dims.validate()?;
        let encoder = Mlp::init(
            &[dims.input, dims.hidden, dims.embed],
            Activation::ReLU,
            &mut component_rng(master_seed, "init:encoder", 0),
        )?;
        let scrubber = Mlp::init(
            &[dims.embed, dims.hidden, dims.scrubbed],
            Activation::ReLU,
            &mut component_rng(master_seed, "init:scrubber", 0),
        )?;
        let task_head = Mlp::init(
            &[dims.scrubbed, dims.task_classes],
            Activation::Identity,
            &mut component_rng(master_seed, "init:task-head", 0),
        )?;
        let discriminators = dims
            .protected_classes
            .iter()
            .enumerate()
            .map(|(n, &k)| {
                Mlp::init(
                    &[dims.scrubbed, k],
                    Activation::Identity,
                    &mut component_rng(master_seed, "init:discriminator", n as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AdsModel {
            dims: dims.clone(),
            encoder,
            scrubber,
            task_head,
            discriminators,
        })
    }

    /// Init with an explicit RNG per component, for tests that need custom
    /// weight settings to start from.
    pub fn init_with_rng(dims: &ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        dims.validate()?;
        Ok(AdsModel {
            dims: dims.clone(),
            encoder: Mlp::init(&[dims.input, dims.hidden, dims.embed], Activation::ReLU, rng)?,
            scrubber: Mlp::init(&[dims.embed, dims.hidden, dims.scrubbed], Activation::ReLU, rng)?,
            task_head: Mlp::init(&[dims.scrubbed, dims.task_classes], Activation::Identity, rng)?,
            discriminators: dims
                .protected_classes
                .iter()
                .map(|&k| Mlp::init(&[dims.scrubbed, k], Activation::Identity, rng))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    pub fn num_attrs(&self) -> usize {
        self.discriminators.len()
    }

    /// e = h(x).
    pub fn encode(&self, batch: &Matrix) -> Result<Matrix> {
        self.encoder.infer(batch)
    }

    /// u = s(e).
    pub fn scrub(&self, embedding: &Matrix) -> Result<Matrix> {
        self.scrubber.infer(embedding)
    }

    /// Task logits c(u).
    pub fn predict_task(&self, scrubbed: &Matrix) -> Result<Matrix> {
        self.task_head.infer(scrubbed)
    }

    /// Discriminator logits d_n(u).
    pub fn predict_bias(&self, scrubbed: &Matrix, attr: usize) -> Result<Matrix> {
        let disc = self.discriminators.get(attr).ok_or_else(|| {
            Error::Usage(format!(
                "attribute {attr} out of range for {} discriminators",
                self.discriminators.len()
            ))
        })?;
        disc.infer(scrubbed)
    }

    /// The representation a probe would see under `kind`. Never logits.
    pub fn tap(&self, batch: &Matrix, kind: RepresentationTap) -> Result<Matrix> {
        let embedding = self.encode(batch)?;
        match kind {
            RepresentationTap::AdsScrubbed => self.scrub(&embedding),
            _ => Ok(embedding),
        }
    }

    /// Sanity checks over the composed wiring.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.encoder.validate()?;
        self.scrubber.validate()?;
        self.task_head.validate()?;
        for d in &self.discriminators {
            d.validate()?;
        }
        if self.encoder.output_dim() != self.scrubber.input_dim() {
            return Err(Error::Dimension("encoder output vs scrubber input".into()));
        }
        if self.scrubber.output_dim() != self.task_head.input_dim() {
            return Err(Error::Dimension("scrubber output vs task head input".into()));
        }
        if self.discriminators.len() != self.dims.protected_classes.len() {
            return Err(Error::Dimension("discriminator count vs declared attributes".into()));
        }
        for (n, d) in self.discriminators.iter().enumerate() {
            if d.input_dim() != self.scrubber.output_dim() {
                return Err(Error::Dimension(format!("discriminator {n} input dim")));
            }
            if d.output_dim() != self.dims.protected_classes[n] {
                return Err(Error::Dimension(format!("discriminator {n} output arity")));
            }
        }
        Ok(())
    }

    pub fn total_params(&self) -> usize {
        self.encoder.param_count()
            + self.scrubber.param_count()
            + self.task_head.param_count()
            + self.discriminators.iter().map(Mlp::param_count).sum::<usize>()
    }
}

/// Versioned checkpoint wrapper; f64 values survive the JSON round trip
/// bit-exactly (shortest round-trip formatting).
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: AdsModel,
}

const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &AdsModel, path: &Path) -> Result<()> {
    let payload = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_string(&payload)
        .map_err(|e| Error::Format(format!("checkpoint serialization: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AdsModel> {
    let json = fs::read_to_string(path)?;
    let payload: Checkpoint = serde_json::from_str(&json)
        .map_err(|e| Error::Format(format!("checkpoint parse: {e}")))?;
    if payload.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            payload.format_version
        )));
    }
    payload.model.validate()?;
    Ok(payload.model)
}
