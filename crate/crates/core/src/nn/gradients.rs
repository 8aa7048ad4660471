use crate::error::{Error, Result};
use crate::nn::layer::Params;
use crate::tensor::Tensor;

/// Parameter gradients of a whole network, laid out like its layers
/// (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<Option<Params>>,
}

impl Gradients {
    pub fn layers(&self) -> &[Option<Params>] {
        &self.layers
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| l.as_ref().map(Params::zeros_like))
                .collect(),
        }
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.layers.iter().flatten().map(Params::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Iterates over every scalar in a fixed order: per layer, weights then bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weights.data().iter().chain(p.bias.data()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flatten().flat_map(|p| {
            let Params { weights, bias } = p;
            weights
                .data_mut()
                .iter_mut()
                .chain(bias.data_mut().iter_mut())
        })
    }

    /// Per-tensor mutable views, in the same order as [`Gradients::values`].
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flatten().flat_map(|p| {
            let Params { weights, bias } = p;
            [weights, bias]
        })
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.weights, &p.bias])
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Shape("gradient layouts differ".into()));
        }
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &Gradients) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => {
                        a.weights.shape() == b.weights.shape() && a.bias.shape() == b.bias.shape()
                    }
                    (None, None) => true,
                    _ => false,
                })
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Weights gradient of the final dense layer, `[n, h]`.
    pub fn last_layer_weights(&self) -> &Tensor {
        &self
            .layers
            .iter()
            .rev()
            .flatten()
            .next()
            .expect("network has a final dense layer")
            .weights
    }
}

/// The attack's only input: the final-layer weight gradient and its row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerGradient {
    matrix: Tensor,
    g: Vec<f64>,
    sample_count: usize,
}

impl LastLayerGradient {
    /// Builds from an `[n, h]` matrix; `g_i` is the row sum of row `i`.
    pub fn new(matrix: Tensor, sample_count: usize) -> Result<Self> {
        if matrix.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "last-layer gradient must be [n, h], got {:?}",
                matrix.shape()
            )));
        }
        if sample_count == 0 {
            return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
        }
        let g = (0..matrix.rows())
            .map(|i| matrix.row(i).iter().sum())
            .collect();
        Ok(Self {
            matrix,
            g,
            sample_count,
        })
    }

    pub fn from_gradients(grads: &Gradients, sample_count: usize) -> Result<Self> {
        Self::new(grads.last_layer_weights().clone(), sample_count)
    }

    /// Builds directly from the per-label sums when the full matrix is not needed.
    pub fn from_sums(g: Vec<f64>, sample_count: usize) -> Result<Self> {
        let n = g.len();
        Self::new(Tensor::new(vec![n, 1], g)?, sample_count)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn n_classes(&self) -> usize {
        self.g.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

impl Gradients {
    /// Assembles gradients from per-layer parameter tensors.
    pub fn from_params(layers: Vec<Option<Params>>) -> Self {
        Self { layers }
    }
}
