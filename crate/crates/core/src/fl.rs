//! Federated training protocol: batch construction, FedSGD/FedAvg local
//! training, weighted server aggregation and multi-round orchestration.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::defenses::{self, CompressionState, Defense};
use crate::error::{Error, Result};
use crate::labels::LabelMultiset;
use crate::nn::{Gradients, LastLayerGradient, Network};
use crate::seed;
use crate::tensor::Tensor;

pub const MAX_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Balance {
    /// Every sample drawn uniformly from the dataset.
    Balanced,
    /// Half from one label, a quarter from a second, the rest uniform.
    #[default]
    Unbalanced,
}

/// Batch size and label composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    size: usize,
    balance: Balance,
}

impl BatchSpec {
    /// `size` must be a power of two no larger than [`MAX_BATCH_SIZE`].
    pub fn new(size: usize, balance: Balance) -> Result<Self> {
        if !size.is_power_of_two() || size > MAX_BATCH_SIZE {
            return Err(Error::InvalidArgument(format!(
                "batch size must be a power of two in 1..={MAX_BATCH_SIZE}, got {size}"
            )));
        }
        Ok(Self { size, balance })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn balance(&self) -> Balance {
        self.balance
    }
}

/// Label composition of one concrete batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composition {
    Balanced,
    Unbalanced { dominant: usize, secondary: usize },
}

/// A training batch together with its ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub truth: LabelMultiset,
}

/// Draws a batch per `spec`; for unbalanced batches the dominant and secondary
/// labels are picked uniformly among the classes present in `dataset`.
pub fn make_batch(dataset: &ClientDataset, spec: BatchSpec, rng: &mut impl Rng) -> Result<Batch> {
    let composition = draw_composition(dataset, spec.balance, rng)?;
    make_batch_with(dataset, spec.size, composition, rng)
}

/// Picks the label composition for one client's round.
pub fn draw_composition(
    dataset: &ClientDataset,
    balance: Balance,
    rng: &mut impl Rng,
) -> Result<Composition> {
    match balance {
        Balance::Balanced => Ok(Composition::Balanced),
        Balance::Unbalanced => {
            let present = dataset.classes_present();
            if present.len() < 2 {
                return Err(Error::InvalidArgument(
                    "unbalanced batches need at least two distinct labels".into(),
                ));
            }
            let mut pick = present.choose_multiple(rng, 2);
            let dominant = *pick.next().unwrap();
            let secondary = *pick.next().unwrap();
            Ok(Composition::Unbalanced {
                dominant,
                secondary,
            })
        }
    }
}

/// Draws `size` samples with replacement following `composition`:
/// `floor(B/2)` of the dominant label, `floor(B/4)` of the secondary label and
/// the remainder uniformly from the whole dataset.
pub fn make_batch_with(
    dataset: &ClientDataset,
    size: usize,
    composition: Composition,
    rng: &mut impl Rng,
) -> Result<Batch> {
    if size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut indices = Vec::with_capacity(size);
    if let Composition::Unbalanced {
        dominant,
        secondary,
    } = composition
    {
        if dominant == secondary {
            return Err(Error::InvalidArgument(
                "dominant and secondary labels must differ".into(),
            ));
        }
        let by_class = dataset.indices_by_class();
        for (label, count) in [(dominant, size / 2), (secondary, size / 4)] {
            let pool = by_class
                .get(label)
                .filter(|p| !p.is_empty())
                .ok_or(Error::MissingClass(label))?;
            indices.extend((0..count).map(|_| *pool.choose(rng).unwrap()));
        }
    }
    while indices.len() < size {
        indices.push(rng.random_range(0..dataset.len()));
    }
    let (inputs, labels) = dataset.batch(&indices)?;
    let truth = LabelMultiset::from_labels(dataset.n_classes, &labels)?;
    Ok(Batch {
        inputs,
        labels,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// One local batch per round.
    #[default]
    FedSgd,
    /// `gamma` local SGD steps per round.
    FedAvg { gamma: usize },
}

impl Algorithm {
    pub fn local_iterations(self) -> usize {
        match self {
            Algorithm::FedSgd => 1,
            Algorithm::FedAvg { gamma } => gamma,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedSgd => "fedsgd",
            Algorithm::FedAvg { .. } => "fedavg",
        }
    }
}

/// One client's shared gradient for one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdate {
    pub gradients: Gradients,
    pub algorithm: Algorithm,
    /// Number of samples `v_k` behind the update.
    pub sample_count: usize,
}

impl RoundUpdate {
    pub fn last_layer(&self) -> Result<LastLayerGradient> {
        LastLayerGradient::from_gradients(&self.gradients, self.sample_count)
    }
}

/// FedSGD: the gradient of one forward/backward pass on `batch`.
///
/// The model is not advanced; the server applies the aggregated update.
pub fn local_train_fedsgd(net: &Network, batch: &Tensor, labels: &[usize]) -> Result<RoundUpdate> {
    let (_, gradients, _) = net.loss_and_gradients(batch, labels)?;
    Ok(RoundUpdate {
        gradients,
        algorithm: Algorithm::FedSgd,
        sample_count: labels.len(),
    })
}

/// FedAvg over explicit batches: one SGD step per batch on a local copy of
/// `net`. The shared gradient is the sum of the per-step gradients.
pub fn local_train_fedavg_on(net: &Network, batches: &[Batch], eta: f64) -> Result<RoundUpdate> {
    if batches.is_empty() {
        return Err(Error::InvalidArgument("gamma must be >= 1".into()));
    }
    let mut local = net.clone();
    let mut total = net.zero_gradients();
    let mut sample_count = 0;
    for batch in batches {
        let (_, grads, _) = local.loss_and_gradients(&batch.inputs, &batch.labels)?;
        total.add_scaled(1.0, &grads)?;
        local.sgd_step(&grads, eta)?;
        sample_count += batch.labels.len();
    }
    Ok(RoundUpdate {
        gradients: total,
        algorithm: Algorithm::FedAvg {
            gamma: batches.len(),
        },
        sample_count,
    })
}

/// FedAvg: draws `gamma` batches from `dataset` sharing one label composition
/// and trains on them in turn.
/// Returns the update and the ground truth over all `gamma * B` samples.
pub fn local_train_fedavg(
    net: &Network,
    dataset: &ClientDataset,
    spec: BatchSpec,
    gamma: usize,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<(RoundUpdate, LabelMultiset)> {
    if gamma == 0 {
        return Err(Error::InvalidArgument("gamma must be >= 1".into()));
    }
    let composition = draw_composition(dataset, spec.balance, rng)?;
    let batches = (0..gamma)
        .map(|_| make_batch_with(dataset, spec.size, composition, rng))
        .collect::<Result<Vec<_>>>()?;
    let mut truth = LabelMultiset::empty(dataset.n_classes);
    for b in &batches {
        truth.merge(&b.truth)?;
    }
    Ok((local_train_fedavg_on(net, &batches, eta)?, truth))
}

/// Runs one client's local training under `algorithm` and returns its update
/// with the ground-truth labels behind it.
pub fn local_train(
    net: &Network,
    dataset: &ClientDataset,
    spec: BatchSpec,
    algorithm: Algorithm,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<(RoundUpdate, LabelMultiset)> {
    match algorithm {
        Algorithm::FedSgd => {
            let batch = make_batch(dataset, spec, rng)?;
            let update = local_train_fedsgd(net, &batch.inputs, &batch.labels)?;
            Ok((update, batch.truth))
        }
        Algorithm::FedAvg { gamma } => local_train_fedavg(net, dataset, spec, gamma, eta, rng),
    }
}

/// `W <- W - eta * sum_k (v_k / v) grad_k` with `v = sum_k v_k`.
pub fn server_aggregate(updates: &[RoundUpdate], global: &mut Network, eta: f64) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument(
            "no client updates to aggregate".into(),
        ));
    }
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("updates carry no samples".into()));
    }
    let mut combined = global.zero_gradients();
    for u in updates {
        combined.add_scaled(u.sample_count as f64 / total as f64, &u.gradients)?;
    }
    global.sgd_step(&combined, eta)
}

/// Static settings of a multi-round federation.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub batch: BatchSpec,
    pub clients_per_round: usize,
    pub learning_rate: f64,
    pub defense: Defense,
    pub master_seed: u64,
}

/// What the adversary sees in one round: the victim's shared update, plus the
/// ground truth kept for scoring.
#[derive(Debug, Clone)]
pub struct VictimView {
    pub round: usize,
    /// The global model the victim trained on.
    pub model: Network,
    pub update: RoundUpdate,
    pub truth: LabelMultiset,
}

/// Server plus clients. Client 0 is the victim and takes part in every round;
/// the remaining seats are filled uniformly without replacement.
pub struct Federation {
    global: Network,
    clients: Vec<ClientDataset>,
    config: FederationConfig,
    compression: Vec<Option<CompressionState>>,
    round: usize,
}

impl Federation {
    pub fn new(
        global: Network,
        clients: Vec<ClientDataset>,
        config: FederationConfig,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidArgument("federation needs clients".into()));
        }
        if config.clients_per_round == 0 || config.clients_per_round > clients.len() {
            return Err(Error::InvalidArgument(format!(
                "clients_per_round must be in 1..={}",
                clients.len()
            )));
        }
        config.defense.validate()?;
        let compression = vec![None; clients.len()];
        Ok(Self {
            global,
            clients,
            config,
            compression,
            round: 0,
        })
    }

    pub fn global(&self) -> &Network {
        &self.global
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    /// Participants of round `round`: the victim first, then the others.
    fn select(&self, round: usize) -> Vec<usize> {
        let mut rng = seed::rng_for(self.config.master_seed, &[SELECT_STREAM, round as u64]);
        let mut others: Vec<usize> = (1..self.clients.len()).collect();
        others.shuffle(&mut rng);
        std::iter::once(0)
            .chain(others.into_iter().take(self.config.clients_per_round - 1))
            .collect()
    }

    /// Runs one communication round and returns the victim's view of it.
    pub fn step(&mut self) -> Result<VictimView> {
        self.round += 1;
        let round = self.round;
        let participants = self.select(round);
        let cfg = &self.config;
        let global = &self.global;
        let clients = &self.clients;

        let raw = participants
            .par_iter()
            .map(|&cid| {
                let mut rng =
                    seed::rng_for(cfg.master_seed, &[TRAIN_STREAM, cid as u64, round as u64]);
                local_train(
                    global,
                    &clients[cid],
                    cfg.batch,
                    cfg.algorithm,
                    cfg.learning_rate,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut updates = Vec::with_capacity(raw.len());
        let mut victim = None;
        for (&cid, (mut update, truth)) in participants.iter().zip(raw) {
            match cfg.defense {
                Defense::Compression { theta, scope } => {
                    let state = match &mut self.compression[cid] {
                        Some(s) => s,
                        slot => {
                            slot.insert(CompressionState::new(&update.gradients, theta, scope)?)
                        }
                    };
                    update.gradients = state.compress(&update.gradients)?;
                }
                ref other => {
                    let mut rng =
                        seed::rng_for(cfg.master_seed, &[DEFENSE_STREAM, cid as u64, round as u64]);
                    defenses::apply_stateless(other, &mut update.gradients, &mut rng)?;
                }
            }
            if cid == 0 {
                victim = Some((update.clone(), truth));
            }
            updates.push(update);
        }

        let model = self.global.clone();
        server_aggregate(&updates, &mut self.global, cfg.learning_rate)?;
        let (update, truth) = victim.expect("victim participates every round");
        Ok(VictimView {
            round,
            model,
            update,
            truth,
        })
    }
}

const SELECT_STREAM: u64 = 0x5e1ec7;
const TRAIN_STREAM: u64 = 0x7a1;
const DEFENSE_STREAM: u64 = 0xdef;
