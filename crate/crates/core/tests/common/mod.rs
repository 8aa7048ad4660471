#![allow(dead_code)]

use llg_core::data::{synth_generate, ClientDataset, SyntheticSpec};
use llg_core::nn::{Activation, LayerSpec, Network};
use llg_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn synthetic(seed: u64) -> (ClientDataset, ClientDataset) {
    let data = synth_generate(&SyntheticSpec {
        samples_per_class: 100,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    (data.train, data.test)
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape,
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_labels(n: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

/// A random valid network with at most three parameterized layers and at most
/// 200 parameters, together with its per-sample input shape.
pub fn random_small_network(rng: &mut impl Rng) -> (Network, Vec<usize>) {
    loop {
        let act = if rng.random_bool(0.5) {
            Activation::Sigmoid
        } else {
            Activation::Relu
        };
        let n = rng.random_range(2..=4);
        let (shape, specs) = match rng.random_range(0..3) {
            0 => {
                let d = rng.random_range(2..=8);
                let h = rng.random_range(2..=8);
                (
                    vec![d],
                    vec![
                        LayerSpec::Dense {
                            inputs: d,
                            outputs: h,
                        },
                        LayerSpec::Activation(act),
                        LayerSpec::Dense {
                            inputs: h,
                            outputs: n,
                        },
                    ],
                )
            }
            1 => {
                let d = rng.random_range(2..=6);
                let h1 = rng.random_range(2..=6);
                let h2 = rng.random_range(2..=6);
                (
                    vec![d],
                    vec![
                        LayerSpec::Dense {
                            inputs: d,
                            outputs: h1,
                        },
                        LayerSpec::Activation(Activation::Sigmoid),
                        LayerSpec::Dense {
                            inputs: h1,
                            outputs: h2,
                        },
                        LayerSpec::Activation(act),
                        LayerSpec::Dense {
                            inputs: h2,
                            outputs: n,
                        },
                    ],
                )
            }
            _ => {
                let side = rng.random_range(4..=6);
                let channels = rng.random_range(1..=2);
                let stride = rng.random_range(1..=2);
                let k = 3;
                let out = (side - k) / stride + 1;
                (
                    vec![1, side, side],
                    vec![
                        LayerSpec::Conv2d {
                            in_channels: 1,
                            out_channels: channels,
                            kernel: k,
                            stride,
                        },
                        LayerSpec::Activation(act),
                        LayerSpec::Flatten,
                        LayerSpec::Dense {
                            inputs: channels * out * out,
                            outputs: n,
                        },
                    ],
                )
            }
        };
        let net = Network::new(&shape, &specs, rng.random()).unwrap();
        if net.param_count() <= 200 {
            return (net, shape);
        }
    }
}

fn act(a: &Activation, x: f64) -> f64 {
    match a {
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Relu => x.max(0.0),
    }
}

/// Straight-loop forward pass of one sample, independent of the library's
/// batched implementation.
pub fn oracle_forward(net: &Network, sample: &[f64]) -> Vec<f64> {
    let mut x = sample.to_vec();
    let mut shape = net.input_shape().to_vec();
    for layer in net.layers() {
        match *layer.spec() {
            LayerSpec::Dense { inputs, outputs } => {
                let p = layer.params().unwrap();
                let (w, b) = (p.weights.data(), p.bias.data());
                x = (0..outputs)
                    .map(|o| b[o] + (0..inputs).map(|i| w[o * inputs + i] * x[i]).sum::<f64>())
                    .collect();
                shape = vec![outputs];
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let p = layer.params().unwrap();
                let (w, b) = (p.weights.data(), p.bias.data());
                let (h, wd) = (shape[1], shape[2]);
                let (oh, ow) = ((h - kernel) / stride + 1, (wd - kernel) / stride + 1);
                let mut y = vec![0.0; out_channels * oh * ow];
                for oc in 0..out_channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut acc = b[oc];
                            for ic in 0..in_channels {
                                for kr in 0..kernel {
                                    for kc in 0..kernel {
                                        let wi =
                                            ((oc * in_channels + ic) * kernel + kr) * kernel + kc;
                                        let xi = (ic * h + r * stride + kr) * wd + c * stride + kc;
                                        acc += w[wi] * x[xi];
                                    }
                                }
                            }
                            y[(oc * oh + r) * ow + c] = acc;
                        }
                    }
                }
                x = y;
                shape = vec![out_channels, oh, ow];
            }
            LayerSpec::Flatten => shape = vec![x.len()],
            LayerSpec::Activation(a) => x.iter_mut().for_each(|v| *v = act(&a, *v)),
        }
    }
    x
}
