use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::attack::{self, AttackKind, AttackParams, DummyKind, ProbeSchedule};
use crate::data::{self, ClientDataset, SyntheticSpec};
use crate::defenses::{self, CompressionState, Defense};
use crate::error::{Error, Result};
use crate::fl::{self, BatchSpec, Federation, FederationConfig};
use crate::labels::LabelMultiset;
use crate::metrics;
use crate::nn::{LastLayerGradient, Network};
use crate::seed::{derive_seed, rng_for};

use super::config::{ExperimentConfig, ExperimentKind};
use super::output::{CalibrationPoint, ResultRow};

// Stream tags for seed derivation.
const DATA: u64 = 1;
const MODEL: u64 = 2;
const VICTIM: u64 = 3;
const DEFENSE: u64 = 4;
const ATTACK: u64 = 5;
const REPLICATE: u64 = 6;
const PARTITION: u64 = 7;
const TRAINING: u64 = 8;

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    /// Only filled by calibration runs.
    pub calibration: Vec<CalibrationPoint>,
}

/// Train/test split used by every trial of a run.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: ClientDataset,
    /// Held out; doubles as the adversary's auxiliary data.
    pub test: ClientDataset,
}

impl Corpus {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let seed = derive_seed(cfg.master_seed, &[DATA]);
        match (&cfg.data.idx_images, &cfg.data.idx_labels) {
            (Some(images), Some(labels)) => {
                let all = data::load_idx(images, labels)?;
                let mut idx: Vec<usize> = (0..all.len()).collect();
                idx.shuffle(&mut rng_for(seed, &[]));
                let cut = ((all.len() as f64) * 0.8).round() as usize;
                let pick = |ids: &[usize]| {
                    ClientDataset::new(
                        0,
                        all.n_classes,
                        ids.iter().map(|&i| all.samples[i].clone()).collect(),
                    )
                };
                Ok(Self {
                    train: pick(&idx[..cut.max(1)])?,
                    test: pick(&idx[cut.min(all.len() - 1)..])?,
                })
            }
            _ => {
                let synth = data::synth_generate(&SyntheticSpec {
                    n_classes: cfg.data.n_classes,
                    input_dim: cfg.data.input_dim,
                    samples_per_class: cfg.data.samples_per_class,
                    cluster_spread: cfg.data.cluster_spread,
                    seed,
                })?;
                Ok(Self {
                    train: synth.train,
                    test: synth.test,
                })
            }
        }
    }
}

/// Runs `cfg` to completion. Output depends only on the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let corpus = Corpus::load(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cfg.experiment {
        ExperimentKind::ConvergenceSweep => run_convergence(cfg, &corpus),
        _ => run_single_round(cfg, &corpus),
    })
}

/// Inputs the adversary holds besides the shared gradient.
pub struct Adversary<'a> {
    /// Shadow copy of the attacked model.
    pub shadow: &'a Network,
    pub aux: &'a ClientDataset,
    pub batch_size: usize,
    pub dummy: DummyKind,
    pub schedule: &'a ProbeSchedule,
}

impl Adversary<'_> {
    pub fn params(
        &self,
        kind: AttackKind,
        g: &LastLayerGradient,
        rng: &mut impl rand::Rng,
    ) -> Result<Option<AttackParams>> {
        let params = match kind {
            AttackKind::Llg => match attack::estimate_params_shared(g) {
                Ok(p) => p,
                Err(Error::NoNegativeGradients) => {
                    AttackParams::uniform_fallback(g.n_classes(), g.sample_count())
                }
                Err(e) => return Err(e),
            },
            AttackKind::LlgStar => attack::estimate_params_whitebox(
                self.shadow,
                self.dummy,
                self.batch_size,
                g.sample_count(),
                self.schedule,
                rng,
            )?,
            AttackKind::LlgPlus => attack::estimate_params_auxiliary(
                self.shadow,
                self.aux,
                self.batch_size,
                g.sample_count(),
                self.schedule,
                rng,
            )?,
            AttackKind::Random => return Ok(None),
        };
        Ok(Some(params))
    }

    /// Runs one attack variant against `g`.
    pub fn attack(
        &self,
        kind: AttackKind,
        g: &LastLayerGradient,
        rng: &mut impl rand::Rng,
    ) -> Result<LabelMultiset> {
        match self.params(kind, g, rng)? {
            Some(p) => attack::llg_extract(g, &p),
            None => Ok(attack::random_guess(g.n_classes(), g.sample_count(), rng)),
        }
    }
}

struct Job {
    defense_idx: usize,
    batch_idx: usize,
    trial: usize,
}

fn run_single_round(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<ExperimentResult> {
    let defenses = cfg.defense_list();
    let accuracy_under_defense: Vec<Option<f64>> = if cfg.experiment == ExperimentKind::DefenseSweep
    {
        defenses
            .iter()
            .enumerate()
            .map(|(i, d)| train_with_defense(cfg, corpus, d, i).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; defenses.len()]
    };

    let mut jobs = Vec::new();
    for defense_idx in 0..defenses.len() {
        for batch_idx in 0..cfg.batch_sizes.len() {
            for trial in 0..cfg.trials {
                jobs.push(Job {
                    defense_idx,
                    batch_idx,
                    trial,
                });
            }
        }
    }
    info!(
        "{}: {} trials across {} defense(s) and {} batch size(s)",
        cfg.experiment.as_str(),
        jobs.len(),
        defenses.len(),
        cfg.batch_sizes.len()
    );

    let outcomes = jobs
        .par_iter()
        .map(|job| single_round_trial(cfg, corpus, &defenses, &accuracy_under_defense, job))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut calibration = Vec::new();
    for (r, c) in outcomes {
        rows.extend(r);
        calibration.extend(c);
    }
    Ok(ExperimentResult { rows, calibration })
}

fn single_round_trial(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    defenses: &[Defense],
    accuracy_under_defense: &[Option<f64>],
    job: &Job,
) -> Result<(Vec<ResultRow>, Vec<CalibrationPoint>)> {
    let kind = cfg.experiment.id();
    let batch_size = cfg.batch_sizes[job.batch_idx];
    let defense = &defenses[job.defense_idx];
    let cell = [kind, job.batch_idx as u64, job.trial as u64];

    // Model and victim batch depend only on (batch size, trial).
    let model_seed = derive_seed(cfg.master_seed, &[MODEL, cell[0], cell[1], cell[2]]);
    let net = Network::build(
        cfg.model,
        corpus.train.input_dim(),
        corpus.train.n_classes,
        model_seed,
    )?;
    let spec = BatchSpec::new(batch_size, cfg.balance)?;
    let mut victim_rng = rng_for(cfg.master_seed, &[VICTIM, cell[0], cell[1], cell[2]]);
    let (mut update, truth) = fl::local_train(
        &net,
        &corpus.train,
        spec,
        cfg.algorithm(),
        cfg.learning_rate,
        &mut victim_rng,
    )?;

    let mut defense_rng = rng_for(
        cfg.master_seed,
        &[DEFENSE, cell[0], cell[1], cell[2], job.defense_idx as u64],
    );
    match *defense {
        Defense::Compression { theta, scope } => {
            let mut state = CompressionState::new(&update.gradients, theta, scope)?;
            update.gradients = state.compress(&update.gradients)?;
        }
        ref other => defenses::apply_stateless(other, &mut update.gradients, &mut defense_rng)?,
    }
    let g = update.last_layer()?;

    let model_accuracy = match accuracy_under_defense[job.defense_idx] {
        Some(acc) => acc,
        None => metrics::test_accuracy(&net, &corpus.test)?,
    };
    let adversary = Adversary {
        shadow: &net,
        aux: &corpus.test,
        batch_size,
        dummy: cfg.dummy,
        schedule: &cfg.probes,
    };

    let mut rows = Vec::with_capacity(cfg.attacks.len());
    for (a_idx, &attack_kind) in cfg.attacks.iter().enumerate() {
        let mut rng = rng_for(
            cfg.master_seed,
            &[
                ATTACK,
                cell[0],
                cell[1],
                cell[2],
                job.defense_idx as u64,
                a_idx as u64,
            ],
        );
        let extracted = adversary.attack(attack_kind, &g, &mut rng)?;
        rows.push(ResultRow {
            experiment: cfg.experiment.as_str().into(),
            algorithm: cfg.algorithm().name().into(),
            attack: attack_kind.as_str().into(),
            model: cfg.model.as_str().into(),
            batch_size,
            defense: defense.to_string(),
            trial: job.trial,
            asr: metrics::attack_success_rate(&extracted, &truth)?,
            hellinger: metrics::hellinger(&extracted, &truth)?,
            model_accuracy,
            seed: model_seed,
        });
    }

    let mut calibration = Vec::new();
    if cfg.experiment == ExperimentKind::CalibrationPlot {
        let mut rng = rng_for(
            cfg.master_seed,
            &[ATTACK, cell[0], cell[1], cell[2], u64::MAX],
        );
        let params = adversary
            .params(AttackKind::LlgPlus, &g, &mut rng)?
            .expect("llg_plus has parameters");
        for (label, (&gi, &si)) in g.g().iter().zip(&params.offsets).enumerate() {
            calibration.push(CalibrationPoint {
                batch_size,
                trial: job.trial,
                label,
                occurrences: truth.count(label),
                gradient: gi,
                calibrated: gi - si,
            });
        }
    }
    Ok((rows, calibration))
}

/// Splits the training pool across the configured clients.
fn federation_clients(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    let f = &cfg.federation;
    data::partition_unbalanced(
        &corpus.train,
        f.clients,
        f.dominant_fraction,
        &mut rng_for(seed, &[PARTITION]),
    )
}

/// Trains a fresh model for the configured rounds with `defense` applied by
/// every client and returns its test accuracy.
fn train_with_defense(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    defense: &Defense,
    idx: usize,
) -> Result<f64> {
    let seed = derive_seed(cfg.master_seed, &[TRAINING, idx as u64]);
    let net = Network::build(
        cfg.model,
        corpus.train.input_dim(),
        corpus.train.n_classes,
        seed,
    )?;
    let clients = federation_clients(cfg, corpus, seed)?;
    let mut fed = Federation::new(
        net,
        clients,
        FederationConfig {
            algorithm: cfg.algorithm(),
            batch: BatchSpec::new(cfg.federation.defense_training_batch_size, cfg.balance)?,
            clients_per_round: cfg.federation.clients_per_round,
            learning_rate: cfg.learning_rate,
            defense: *defense,
            master_seed: seed,
        },
    )?;
    for _ in 0..cfg.federation.defense_training_rounds {
        fed.step()?;
    }
    let acc = metrics::test_accuracy(fed.global(), &corpus.test)?;
    info!("accuracy under {defense}: {acc:.4}");
    Ok(acc)
}

fn run_convergence(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<ExperimentResult> {
    let replicates = (0..cfg.trials)
        .into_par_iter()
        .map(|r| convergence_replicate(cfg, corpus, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        rows: replicates.into_iter().flatten().collect(),
        calibration: Vec::new(),
    })
}

fn convergence_replicate(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    replicate: usize,
) -> Result<Vec<ResultRow>> {
    let seed = derive_seed(cfg.master_seed, &[REPLICATE, replicate as u64]);
    let batch_size = cfg.batch_sizes[0];
    let defense = cfg.defense_list()[0];
    let net = Network::build(
        cfg.model,
        corpus.train.input_dim(),
        corpus.train.n_classes,
        seed,
    )?;
    let clients = federation_clients(cfg, corpus, seed)?;
    let mut fed = Federation::new(
        net,
        clients,
        FederationConfig {
            algorithm: cfg.algorithm(),
            batch: BatchSpec::new(batch_size, cfg.balance)?,
            clients_per_round: cfg.federation.clients_per_round,
            learning_rate: cfg.learning_rate,
            defense,
            master_seed: seed,
        },
    )?;

    let mut rows = Vec::with_capacity(cfg.federation.rounds * cfg.attacks.len());
    let mut accuracy = 0.0;
    for _ in 0..cfg.federation.rounds {
        let view = fed.step()?;
        if (view.round - 1) % cfg.federation.accuracy_every == 0 {
            accuracy = metrics::test_accuracy(&view.model, &corpus.test)?;
            debug!(
                "replicate {replicate} round {}: accuracy {accuracy:.4}",
                view.round
            );
        }
        let g = view.update.last_layer()?;
        let adversary = Adversary {
            shadow: &view.model,
            aux: &corpus.test,
            batch_size,
            dummy: cfg.dummy,
            schedule: &cfg.probes,
        };
        for (a_idx, &kind) in cfg.attacks.iter().enumerate() {
            let mut rng = rng_for(seed, &[ATTACK, view.round as u64, a_idx as u64]);
            let extracted = adversary.attack(kind, &g, &mut rng)?;
            rows.push(ResultRow {
                experiment: cfg.experiment.as_str().into(),
                algorithm: cfg.algorithm().name().into(),
                attack: kind.as_str().into(),
                model: cfg.model.as_str().into(),
                batch_size,
                defense: defense.to_string(),
                trial: view.round,
                asr: metrics::attack_success_rate(&extracted, &view.truth)?,
                hellinger: metrics::hellinger(&extracted, &view.truth)?,
                model_accuracy: accuracy,
                seed,
            });
        }
    }
    info!("replicate {replicate} finished, final accuracy {accuracy:.4}");
    Ok(rows)
}
