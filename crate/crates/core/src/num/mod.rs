//! Deterministic dense linear algebra, activations, probability transforms
//! and analytic gradients for small feed-forward networks.

pub mod matrix;
pub mod mlp;
pub mod ops;

pub use matrix::Matrix;
pub use mlp::{Activation, ForwardCache, GradientTape, Mlp};
