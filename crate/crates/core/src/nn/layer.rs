use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Element-wise non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    /// Both supported activations map into `[0, inf)`.
    pub fn is_non_negative(self) -> bool {
        matches!(self, Activation::Sigmoid | Activation::Relu)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the layer input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Declarative description of one network layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Valid (unpadded) 2-D convolution over `[channels, height, width]` samples.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Activation(Activation),
}

/// Trainable weights and bias of a dense or convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Tensor::zeros(self.weights.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A materialized layer: its spec, per-sample input/output shapes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) in_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
    pub(crate) params: Option<Params>,
}

impl Layer {
    /// Resolves the output shape of `spec` applied to per-sample `in_shape`.
    pub(crate) fn output_shape(spec: &LayerSpec, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *spec {
            LayerSpec::Dense { inputs, outputs } => {
                if in_shape != [inputs] {
                    return Err(Error::InvalidNetwork(format!(
                        "dense layer expects [{inputs}] input, got {in_shape:?}"
                    )));
                }
                if outputs == 0 {
                    return Err(Error::InvalidNetwork(
                        "dense layer with zero outputs".into(),
                    ));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let [c, h, w] = in_shape else {
                    return Err(Error::InvalidNetwork(format!(
                        "conv2d expects [channels, height, width] input, got {in_shape:?}"
                    )));
                };
                if *c != in_channels || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::InvalidNetwork(format!(
                        "conv2d({in_channels}->{out_channels}, k={kernel}, s={stride}) \
                         incompatible with input {in_shape:?}"
                    )));
                }
                if kernel > *h || kernel > *w {
                    return Err(Error::InvalidNetwork(format!(
                        "kernel {kernel} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerSpec::Flatten => Ok(vec![in_shape.iter().product()]),
            LayerSpec::Activation(_) => Ok(in_shape.to_vec()),
        }
    }

    pub(crate) fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub(crate) fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> Option<&Params> {
        self.params.as_ref()
    }

    /// Maps a `[B, in_len]` batch to `[B, out_len]`.
    pub(crate) fn forward(&self, input: &Tensor) -> Tensor {
        let batch = input.rows();
        let mut out = Tensor::zeros(vec![batch, self.out_len()]);
        match self.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let p = self.params.as_ref().expect("dense layer has params");
                let w = p.weights.data();
                let b = p.bias.data();
                for s in 0..batch {
                    let x = input.row(s);
                    let y = out.row_mut(s);
                    for o in 0..outputs {
                        let wr = &w[o * inputs..(o + 1) * inputs];
                        y[o] = b[o] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let p = self.params.as_ref().expect("conv layer has params");
                let (h, w) = (self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let wt = p.weights.data();
                for s in 0..batch {
                    let x = input.row(s);
                    let y = out.row_mut(s);
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = p.bias.data()[oc];
                                for ic in 0..in_channels {
                                    for ky in 0..kernel {
                                        let xrow =
                                            ic * h * w + (oy * stride + ky) * w + ox * stride;
                                        let wrow = ((oc * in_channels + ic) * kernel + ky) * kernel;
                                        for kx in 0..kernel {
                                            acc += wt[wrow + kx] * x[xrow + kx];
                                        }
                                    }
                                }
                                y[(oc * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                }
            }
            LayerSpec::Flatten => out.data_mut().copy_from_slice(input.data()),
            LayerSpec::Activation(act) => {
                for (y, &x) in out.data_mut().iter_mut().zip(input.data()) {
                    *y = act.apply(x);
                }
            }
        }
        out
    }

    /// Back-propagates `grad_out` (`[B, out_len]`) through the layer.
    ///
    /// Returns the parameter gradient (for trainable layers) and, when
    /// `need_input_grad` is set, the gradient w.r.t. the layer input.
    pub(crate) fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> (Option<Params>, Option<Tensor>) {
        let batch = input.rows();
        match self.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let p = self.params.as_ref().expect("dense layer has params");
                let mut grads = p.zeros_like();
                let mut grad_in = need_input_grad.then(|| Tensor::zeros(vec![batch, inputs]));
                let w = p.weights.data();
                for s in 0..batch {
                    let x = input.row(s);
                    let g = grad_out.row(s);
                    {
                        let dw = grads.weights.data_mut();
                        for o in 0..outputs {
                            if g[o] == 0.0 {
                                continue;
                            }
                            let row = &mut dw[o * inputs..(o + 1) * inputs];
                            for (d, &xi) in row.iter_mut().zip(x) {
                                *d += g[o] * xi;
                            }
                        }
                    }
                    for (db, &go) in grads.bias.data_mut().iter_mut().zip(g) {
                        *db += go;
                    }
                    if let Some(gi) = grad_in.as_mut() {
                        let gi = gi.row_mut(s);
                        for o in 0..outputs {
                            let wr = &w[o * inputs..(o + 1) * inputs];
                            for (d, &wv) in gi.iter_mut().zip(wr) {
                                *d += g[o] * wv;
                            }
                        }
                    }
                }
                (Some(grads), grad_in)
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let p = self.params.as_ref().expect("conv layer has params");
                let mut grads = p.zeros_like();
                let mut grad_in =
                    need_input_grad.then(|| Tensor::zeros(vec![batch, self.in_len()]));
                let (h, w) = (self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let wt = p.weights.data();
                for s in 0..batch {
                    let x = input.row(s);
                    let g = grad_out.row(s);
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[(oc * oh + oy) * ow + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                grads.bias.data_mut()[oc] += go;
                                for ic in 0..in_channels {
                                    for ky in 0..kernel {
                                        let xrow =
                                            ic * h * w + (oy * stride + ky) * w + ox * stride;
                                        let wrow = ((oc * in_channels + ic) * kernel + ky) * kernel;
                                        let dw = grads.weights.data_mut();
                                        for kx in 0..kernel {
                                            dw[wrow + kx] += go * x[xrow + kx];
                                        }
                                        if let Some(gi) = grad_in.as_mut() {
                                            let gi = gi.row_mut(s);
                                            for kx in 0..kernel {
                                                gi[xrow + kx] += go * wt[wrow + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                (Some(grads), grad_in)
            }
            LayerSpec::Flatten => (None, need_input_grad.then(|| grad_out.clone())),
            LayerSpec::Activation(act) => {
                let grad_in = need_input_grad.then(|| {
                    let mut gi = grad_out.clone();
                    for ((d, &x), &y) in gi
                        .data_mut()
                        .iter_mut()
                        .zip(input.data())
                        .zip(output.data())
                    {
                        *d *= act.derivative(x, y);
                    }
                    gi
                });
                (None, grad_in)
            }
        }
    }
}
