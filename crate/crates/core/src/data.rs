//! Dataset provisioning: seeded synthetic classes and an IDX (MNIST) loader.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Zero-based class index.
    pub label: usize,
}

/// The local data of one federated client (or any labelled pool).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub n_classes: usize,
    pub samples: Vec<Sample>,
}

impl ClientDataset {
    pub fn new(client_id: usize, n_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        let dim = samples[0].features.len();
        for s in &samples {
            if s.label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    n_classes,
                });
            }
            if s.features.len() != dim {
                return Err(Error::Shape(
                    "samples have different feature lengths".into(),
                ));
            }
        }
        Ok(Self {
            client_id,
            n_classes,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    /// Sample indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.n_classes];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.label].push(i);
        }
        by_class
    }

    /// Classes with at least one sample, ascending.
    pub fn classes_present(&self) -> Vec<usize> {
        self.indices_by_class()
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(c, _)| c)
            .collect()
    }

    /// Stacks the selected samples into a `[B, input_dim]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let dim = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            data.extend_from_slice(&s.features);
            labels.push(s.label);
        }
        Ok((Tensor::new(vec![indices.len(), dim], data)?, labels))
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<(Tensor, Vec<usize>)> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    /// Standard deviation of every cluster.
    pub cluster_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            input_dim: 64,
            samples_per_class: 500,
            cluster_spread: 0.3,
            seed: 0,
        }
    }
}

/// Output of [`synth_generate`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: ClientDataset,
    pub test: ClientDataset,
    /// Cluster centres, one per class.
    pub anchors: Vec<Vec<f64>>,
}

/// Draws class `c` samples from `N(mu_c, spread^2 I)`, with every anchor
/// coordinate uniform in `[0, 1]`, and splits each class 80/20 into train/test.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if spec.samples_per_class == 0 || spec.input_dim == 0 {
        return Err(Error::InvalidArgument(
            "samples_per_class and input_dim must be positive".into(),
        ));
    }
    if !(spec.cluster_spread >= 0.0 && spec.cluster_spread.is_finite()) {
        return Err(Error::InvalidArgument("cluster_spread must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anchors: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..spec.input_dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let noise = Normal::new(0.0, spec.cluster_spread).expect("valid spread");

    let n_train = ((spec.samples_per_class as f64 * 0.8).round() as usize).max(1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, anchor) in anchors.iter().enumerate() {
        for k in 0..spec.samples_per_class {
            let features = anchor
                .iter()
                .map(|&mu| mu + noise.sample(&mut rng))
                .collect();
            let sample = Sample { features, label };
            if k < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    // A single sample per class leaves no test data; fall back to the train split.
    if test.is_empty() {
        test = train.clone();
    }
    Ok(SyntheticData {
        train: ClientDataset::new(0, spec.n_classes, train)?,
        test: ClientDataset::new(0, spec.n_classes, test)?,
        anchors,
    })
}

/// Splits `pool` across `clients` so every sample lands in exactly one client.
///
/// Client `u` first receives up to `dominant_fraction` of its share from class
/// `u mod n`; the rest of its share is dealt from the shuffled leftovers.
pub fn partition_unbalanced(
    pool: &ClientDataset,
    clients: usize,
    dominant_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<ClientDataset>> {
    if clients == 0 || clients > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} samples across {clients} clients",
            pool.len()
        )));
    }
    if !(0.0..=1.0).contains(&dominant_fraction) {
        return Err(Error::InvalidArgument(
            "dominant_fraction must be in [0, 1]".into(),
        ));
    }
    let mut by_class = pool.indices_by_class();
    for v in &mut by_class {
        v.shuffle(rng);
    }
    let base = pool.len() / clients;
    let extra = pool.len() % clients;
    let capacity: Vec<usize> = (0..clients)
        .map(|u| base + usize::from(u < extra))
        .collect();

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for u in 0..clients {
        let class = u % pool.n_classes;
        let want = (capacity[u] as f64 * dominant_fraction).floor() as usize;
        let take = want.min(by_class[class].len());
        let start = by_class[class].len() - take;
        assigned[u].extend(by_class[class].drain(start..));
    }
    let mut rest: Vec<usize> = by_class.into_iter().flatten().collect();
    rest.shuffle(rng);
    let mut rest = rest.into_iter();
    for u in 0..clients {
        while assigned[u].len() < capacity[u] {
            assigned[u].push(rest.next().expect("capacities sum to pool size"));
        }
    }

    assigned
        .into_iter()
        .enumerate()
        .map(|(u, idx)| {
            let samples = idx.iter().map(|&i| pool.samples[i].clone()).collect();
            ClientDataset::new(u, pool.n_classes, samples)
        })
        .collect()
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or(Error::Truncated {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn rest(&self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        self.bytes.get(self.pos..end).ok_or(Error::Truncated {
            expected: end,
            found: self.bytes.len(),
        })
    }
}

/// Parses an IDX3 image file into `(rows, cols, images)` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut r = IdxReader { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::WrongMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty {rows}x{cols} images"
        )));
    }
    let pixels = r.rest(count * rows * cols)?;
    let images = pixels
        .chunks(rows * cols)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok((rows, cols, images))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = IdxReader { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::WrongMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = r.u32()? as usize;
    Ok(r.rest(count)?.to_vec())
}

/// Loads an IDX image/label pair (e.g. MNIST) as one dataset. Raw labels are
/// used as zero-based class indices; the class count is `max(label) + 1`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<ClientDataset> {
    let (_, _, images) = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let n_classes = (labels.iter().copied().max().unwrap_or(0) as usize + 1).max(2);
    let samples = images
        .into_iter()
        .zip(labels)
        .map(|(features, label)| Sample {
            features,
            label: label as usize,
        })
        .collect();
    ClientDataset::new(0, n_classes, samples)
}
