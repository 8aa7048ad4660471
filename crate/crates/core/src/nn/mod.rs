//! Minimal neural-network engine with manual backpropagation.
//!
//! Batches are `[B, features]` tensors; convolutional layers reinterpret each
//! row as a `[channels, height, width]` sample. Class labels are zero-based.

mod gradients;
mod layer;
mod loss;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use gradients::{Gradients, LastLayerGradient};
pub use layer::{Activation, Layer, LayerSpec, Params};
pub use loss::{cross_entropy_loss, softmax, LossOutput};

static STATE_IDS: AtomicU64 = AtomicU64::new(1);

fn fresh_state_id() -> u64 {
    STATE_IDS.fetch_add(1, Ordering::Relaxed)
}

/// Built-in architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `input -> dense(hidden) -> sigmoid -> dense(n)`.
    Mlp,
    /// Two sigmoid conv layers (8 channels, 3x3, stride 1) and a dense head.
    Cnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 64;

/// A feed-forward network whose final layer is dense with `n` outputs.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    n_classes: usize,
    penultimate_width: usize,
    rng_seed: u64,
    state_id: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape
            && self.layers == other.layers
            && self.rng_seed == other.rng_seed
    }
}

/// Every intermediate activation of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the batch, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Tensor>,
    state_id: u64,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("non-empty cache")
    }

    /// Input of the final dense layer, `a_{L-1}`, as `[B, h]`.
    pub fn penultimate(&self) -> &Tensor {
        &self.activations[self.activations.len() - 2]
    }
}

impl Network {
    /// Materializes `specs` for samples of `input_shape`, drawing every weight
    /// and bias uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "bad input shape {input_shape:?}"
            )));
        }
        let Some(LayerSpec::Dense { inputs, outputs }) = specs.last().copied() else {
            return Err(Error::InvalidNetwork(
                "the final layer must be dense".into(),
            ));
        };
        if outputs < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least 2 classes, got {outputs}"
            )));
        }
        let preceding = specs[..specs.len() - 1]
            .iter()
            .rev()
            .find(|s| !matches!(s, LayerSpec::Flatten));
        match preceding {
            Some(LayerSpec::Activation(act)) if act.is_non_negative() => {}
            _ => {
                return Err(Error::InvalidNetwork(
                    "the final dense layer must be preceded by a non-negative activation".into(),
                ))
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let out_shape = Layer::output_shape(spec, &shape)?;
            let params = match *spec {
                LayerSpec::Dense { inputs, outputs } => Some(init_params(
                    &mut rng,
                    vec![outputs, inputs],
                    outputs,
                    inputs,
                )),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => Some(init_params(
                    &mut rng,
                    vec![out_channels, in_channels, kernel, kernel],
                    out_channels,
                    in_channels * kernel * kernel,
                )),
                _ => None,
            };
            layers.push(Layer {
                spec: *spec,
                in_shape: shape,
                out_shape: out_shape.clone(),
                params,
            });
            shape = out_shape;
        }

        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            n_classes: outputs,
            penultimate_width: inputs,
            rng_seed: seed,
            state_id: fresh_state_id(),
        })
    }

    pub fn mlp(
        input_dim: usize,
        hidden: usize,
        n_classes: usize,
        act: Activation,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            &[input_dim],
            &[
                LayerSpec::Dense {
                    inputs: input_dim,
                    outputs: hidden,
                },
                LayerSpec::Activation(act),
                LayerSpec::Dense {
                    inputs: hidden,
                    outputs: n_classes,
                },
            ],
            seed,
        )
    }

    /// Two conv layers over `[channels, height, width]` inputs plus a dense head.
    pub fn small_cnn(input_shape: [usize; 3], n_classes: usize, seed: u64) -> Result<Self> {
        let [c, h, w] = input_shape;
        if h < 5 || w < 5 {
            return Err(Error::InvalidNetwork(format!(
                "small CNN needs inputs of at least 5x5, got {h}x{w}"
            )));
        }
        let flat = 8 * (h - 4) * (w - 4);
        Self::new(
            &input_shape,
            &[
                LayerSpec::Conv2d {
                    in_channels: c,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Activation(Activation::Sigmoid),
                LayerSpec::Conv2d {
                    in_channels: 8,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Activation(Activation::Sigmoid),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: flat,
                    outputs: n_classes,
                },
            ],
            seed,
        )
    }

    /// Builds one of the stock architectures for flat inputs of `input_dim`
    /// features. The CNN needs `input_dim` to be a perfect square.
    pub fn build(kind: ModelKind, input_dim: usize, n_classes: usize, seed: u64) -> Result<Self> {
        match kind {
            ModelKind::Mlp => Self::mlp(
                input_dim,
                DEFAULT_HIDDEN,
                n_classes,
                Activation::Sigmoid,
                seed,
            ),
            ModelKind::Cnn => {
                let side = (input_dim as f64).sqrt().round() as usize;
                if side * side != input_dim {
                    return Err(Error::InvalidNetwork(format!(
                        "cnn needs a square input, {input_dim} is not a perfect square"
                    )));
                }
                Self::small_cnn([1, side, side], n_classes, seed)
            }
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Width `h` of the penultimate activation.
    pub fn penultimate_width(&self) -> usize {
        self.penultimate_width
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Runs the network on `[B, input_len]` and records every activation.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if batch.shape().len() != 2 || batch.shape()[1] != self.input_len() {
            return Err(Error::Shape(format!(
                "batch of shape {:?} does not match network input [B, {}]",
                batch.shape(),
                self.input_len()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for layer in &self.layers {
            let out = layer.forward(activations.last().unwrap());
            activations.push(out);
        }
        let logits = activations.last().unwrap().clone();
        if !logits.all_finite() {
            return Err(Error::NonFinite("forward logits"));
        }
        Ok((
            logits,
            ForwardCache {
                activations,
                state_id: self.state_id,
            },
        ))
    }

    /// Back-propagates a per-sample logit gradient `[B, n]` recorded against `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        if cache.state_id != self.state_id || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache);
        }
        if grad_logits.shape() != cache.logits().shape() {
            return Err(Error::Shape(format!(
                "logit gradient {:?} vs logits {:?}",
                grad_logits.shape(),
                cache.logits().shape()
            )));
        }
        let mut layers = vec![None; self.layers.len()];
        let mut grad = grad_logits.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (params, grad_in) = layer.backward(
                &cache.activations[idx],
                &cache.activations[idx + 1],
                &grad,
                idx > 0,
            );
            layers[idx] = params;
            match grad_in {
                Some(g) => grad = g,
                None => break,
            }
        }
        let grads = Gradients { layers };
        if !grads.all_finite() {
            return Err(Error::NonFinite("backward gradients"));
        }
        Ok(grads)
    }

    /// Forward, cross-entropy and backward in one call.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        labels: &[usize],
    ) -> Result<(LossOutput, Gradients, ForwardCache)> {
        let (logits, cache) = self.forward(batch)?;
        let loss = cross_entropy_loss(&logits, labels)?;
        let grads = self.backward(&cache, &loss.grad_logits)?;
        Ok((loss, grads, cache))
    }

    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let (logits, _) = self.forward(batch)?;
        Ok(cross_entropy_loss(&logits, labels)?.loss)
    }

    /// Arg-max class per row.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(batch)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    /// A zero gradient laid out like this network's parameters.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| l.params.as_ref().map(Params::zeros_like))
                .collect(),
        }
    }

    /// `W <- W - eta * grad` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, eta: f64) -> Result<()> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {eta}"
            )));
        }
        if !grads.same_layout(&self.zero_gradients()) {
            return Err(Error::Shape("gradients do not match the network".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (Some(p), Some(g)) = (layer.params.as_mut(), g.as_ref()) {
                p.weights.axpy(-eta, &g.weights)?;
                p.bias.axpy(-eta, &g.bias)?;
            }
        }
        self.state_id = fresh_state_id();
        Ok(())
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(Params::len)
            .sum()
    }

    /// Flat parameter read, in the order used by [`Gradients::values`].
    pub fn param(&self, index: usize) -> f64 {
        let (layer, offset) = self.locate(index);
        let p = self.layers[layer].params.as_ref().unwrap();
        if offset < p.weights.len() {
            p.weights.data()[offset]
        } else {
            p.bias.data()[offset - p.weights.len()]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (layer, offset) = self.locate(index);
        let p = self.layers[layer].params.as_mut().unwrap();
        if offset < p.weights.len() {
            p.weights.data_mut()[offset] = value;
        } else {
            let w = p.weights.len();
            p.bias.data_mut()[offset - w] = value;
        }
        self.state_id = fresh_state_id();
    }

    /// Mutable access to the parameters of layer `idx`.
    pub fn params_mut(&mut self, idx: usize) -> Option<&mut Params> {
        self.state_id = fresh_state_id();
        self.layers[idx].params.as_mut()
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(p) = &layer.params {
                if index < p.len() {
                    return (i, index);
                }
                index -= p.len();
            }
        }
        panic!("parameter index out of range");
    }
}

fn init_params(
    rng: &mut ChaCha8Rng,
    weight_shape: Vec<usize>,
    outputs: usize,
    fan_in: usize,
) -> Params {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n_weights: usize = weight_shape.iter().product();
    let weights = (0..n_weights)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let bias = (0..outputs)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Params {
        weights: Tensor::new(weight_shape, weights).expect("consistent shape"),
        bias: Tensor::new(vec![outputs], bias).expect("consistent shape"),
    }
}
