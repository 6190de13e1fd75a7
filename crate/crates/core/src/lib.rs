//! Adversarial scrubbing of protected attributes from learned
//! representations, evaluated with probing F1 and online-code MDL.
//!
//! The pipeline: an encoder embeds inputs, a scrubber maps embeddings to
//! representations that keep target-task information while starving one
//! bias discriminator per protected attribute, and a post-hoc probing
//! harness measures what leaked.

pub mod datagen;
pub mod error;
pub mod losses;
pub mod model;
pub mod num;
pub mod optim;
pub mod probing;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
