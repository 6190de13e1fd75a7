//! Feed-forward networks with analytic gradients.
//!
//! Weights for layer `l` are stored as `(in_dim, out_dim)` so the forward
//! pass is `a_l = act(a_{l-1} W_l + b_l)`. The hidden activation applies to
//! every layer except the last; the output layer always emits raw logits.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation (subgradient 0 at 0).
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// A feed-forward network: `layer_sizes = [in, h1, ..., out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Per-layer state captured by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_sizes: Vec<usize>,
    batch_rows: usize,
    /// Input to each layer: `inputs[l]` has `layer_sizes[l]` columns.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre_activations: Vec<Matrix>,
}

/// Parameter gradients mirroring an [`Mlp`], plus the gradient w.r.t. the
/// network input for chaining through composed networks.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
    pub d_input: Matrix,
}

impl GradientTape {
    fn zeros_like(net: &Mlp, batch_rows: usize) -> Self {
        GradientTape {
            d_weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            d_input: Matrix::zeros(batch_rows, net.input_dim()),
        }
    }

    pub fn squared_l2_norm(&self) -> f64 {
        let w: f64 = self
            .d_weights
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|v| v * v)
            .sum();
        let b: f64 = self.d_biases.iter().flatten().map(|v| v * v).sum();
        w + b
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.d_weights {
            w.scale(factor);
        }
        for b in &mut self.d_biases {
            for v in b {
                *v *= factor;
            }
        }
    }
}

impl Mlp {
    /// Uniform `±sqrt(6/(fan_in+fan_out))` weights, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Matrix::zeros(fan_in, fan_out);
            for v in w.as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// All-zero parameters (the information-free network).
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|p| Matrix::zeros(p[0], p[1]))
            .collect();
        let biases = layer_sizes.windows(2).map(|p| vec![0.0; p[1]]).collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Build from explicit parameters, validating the shape chain.
    pub fn from_parts(
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Dimension(
                "weights and biases must be non-empty and of equal layer count".into(),
            ));
        }
        let mut layer_sizes = vec![weights[0].rows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.rows() != *layer_sizes.last().unwrap() {
                return Err(Error::Dimension(format!(
                    "layer input dim {} does not chain from previous output {}",
                    w.rows(),
                    layer_sizes.last().unwrap()
                )));
            }
            if b.len() != w.cols() {
                return Err(Error::Dimension(format!(
                    "bias length {} against {} output units",
                    b.len(),
                    w.cols()
                )));
            }
            layer_sizes.push(w.cols());
        }
        Ok(Mlp {
            layer_sizes,
            weights,
            biases,
            activation,
        })
    }

    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Dimension(format!(
                "layer sizes {layer_sizes:?} must list at least [in, out], all nonzero"
            )));
        }
        Ok(())
    }

    /// Re-check invariants, e.g. after deserializing a checkpoint.
    pub fn validate(&self) -> Result<()> {
        Self::check_sizes(&self.layer_sizes)?;
        if self.weights.len() != self.layer_sizes.len() - 1 || self.biases.len() != self.weights.len() {
            return Err(Error::Format("layer count mismatch".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.rows() != self.layer_sizes[l] || w.cols() != self.layer_sizes[l + 1] {
                return Err(Error::Format(format!(
                    "layer {l} weight is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    self.layer_sizes[l],
                    self.layer_sizes[l + 1]
                )));
            }
            if b.len() != w.cols() {
                return Err(Error::Format(format!("layer {l} bias length {}", b.len())));
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite parameter in layer {l}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn weights(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    #[inline]
    pub fn weights_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    #[inline]
    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    #[inline]
    pub fn biases_mut(&mut self, layer: usize) -> &mut Vec<f64> {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Forward pass caching everything `backward` needs.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        let mut current = batch.clone();
        for l in 0..self.num_layers() {
            let mut z = current.matmul(&self.weights[l])?;
            z.add_row_broadcast(&self.biases[l])?;
            inputs.push(current);
            let a = if l < last {
                let mut a = z.clone();
                for v in a.as_mut_slice() {
                    *v = self.activation.apply(*v);
                }
                a
            } else {
                z.clone()
            };
            pre_activations.push(z);
            current = a;
        }
        current.check_finite("forward pass logits")?;
        let cache = ForwardCache {
            layer_sizes: self.layer_sizes.clone(),
            batch_rows: batch.rows(),
            inputs,
            pre_activations,
        };
        Ok((current, cache))
    }

    /// Forward pass without gradient bookkeeping.
    pub fn infer(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.0)
    }

    /// Backpropagate `upstream = dL/d(logits)` through the cached pass.
    ///
    /// The upstream gradient is taken as-is: any batch-mean factor belongs to
    /// the loss that produced it.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<GradientTape> {
        if cache.layer_sizes != self.layer_sizes {
            return Err(Error::Usage(
                "forward cache does not belong to this network".into(),
            ));
        }
        if upstream.rows() != cache.batch_rows || upstream.cols() != self.output_dim() {
            return Err(Error::Usage(format!(
                "upstream gradient is {}x{}, cache expects {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.batch_rows,
                self.output_dim()
            )));
        }

        let mut tape = GradientTape::zeros_like(self, cache.batch_rows);
        let last = self.num_layers() - 1;
        let mut d_act = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            // dZ = dA ⊙ act'(z); output layer is identity.
            let mut d_z = d_act;
            if l < last {
                let z = &cache.pre_activations[l];
                for (v, &zv) in d_z.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *v *= self.activation.derivative(zv);
                }
            }
            // dW = aᵀ dZ, db = column sums of dZ, dA_prev = dZ Wᵀ.
            tape.d_weights[l] = cache.inputs[l].transpose_matmul(&d_z)?;
            let db = &mut tape.d_biases[l];
            for row in d_z.iter_rows() {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            d_act = d_z.matmul_transpose(&self.weights[l])?;
        }
        tape.d_input = d_act;
        Ok(tape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::component_rng;

    #[test]
    fn identity_single_layer_passes_input_through() {
        let net = Mlp::from_parts(
            vec![Matrix::identity(2)],
            vec![vec![0.0, 0.0]],
            Activation::ReLU,
        )
        .unwrap();
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let (logits, _) = net.forward(&x).unwrap();
        assert_eq!(logits.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_hidden_layer_zeroes_negative_preactivations() {
        // One hidden layer whose pre-activations are all negative.
        let w0 = Matrix::from_vec(1, 2, vec![-1.0, -2.0]).unwrap();
        let w1 = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let net = Mlp::from_parts(
            vec![w0, w1],
            vec![vec![0.0, 0.0], vec![0.0]],
            Activation::ReLU,
        )
        .unwrap();
        let x = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let (logits, cache) = net.forward(&x).unwrap();
        assert_eq!(logits.as_slice(), &[0.0]);
        assert_eq!(cache.inputs[1].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_tape() {
        let mut rng = component_rng(3, "test-init", 0);
        let net = Mlp::init(&[3, 4, 2], Activation::ReLU, &mut rng).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let upstream = Matrix::zeros(2, 2);
        let tape = net.backward(&cache, &upstream).unwrap();
        assert_eq!(tape.squared_l2_norm(), 0.0);
        assert!(tape.d_input.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_layer_squared_error_gradient_matches_closed_form() {
        // Scalar linear net, loss = (w x + b - t)^2.
        let w = Matrix::from_vec(1, 1, vec![1.5]).unwrap();
        let net = Mlp::from_parts(vec![w], vec![vec![0.25]], Activation::Identity).unwrap();
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let target = 1.0;
        let (pred, cache) = net.forward(&x).unwrap();
        let residual = pred.get(0, 0) - target;
        let upstream = Matrix::from_vec(1, 1, vec![2.0 * residual]).unwrap();
        let tape = net.backward(&cache, &upstream).unwrap();
        assert!((tape.d_weights[0].get(0, 0) - 2.0 * residual * 2.0).abs() < 1e-12);
        assert!((tape.d_biases[0][0] - 2.0 * residual).abs() < 1e-12);
        assert!((tape.d_input.get(0, 0) - 2.0 * residual * 1.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_cache_is_a_usage_error() {
        let mut rng = component_rng(4, "test-init", 0);
        let a = Mlp::init(&[3, 4, 2], Activation::ReLU, &mut rng).unwrap();
        let b = Mlp::init(&[3, 5, 2], Activation::ReLU, &mut rng).unwrap();
        let x = Matrix::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let (_, cache) = a.forward(&x).unwrap();
        let upstream = Matrix::zeros(1, 2);
        assert!(matches!(
            b.backward(&cache, &upstream),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mut rng = component_rng(5, "test-init", 0);
        let net = Mlp::init(&[3, 2], Activation::ReLU, &mut rng).unwrap();
        let x = Matrix::zeros(1, 4);
        assert!(matches!(net.forward(&x), Err(Error::Dimension(_))));
    }
}
