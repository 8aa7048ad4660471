use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackKind, DummyKind, ProbeSchedule};
use crate::defenses::Defense;
use crate::error::{Error, Result};
use crate::fl::{Algorithm, Balance, BatchSpec};
use crate::nn::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// One communication round on an untrained model, per batch size.
    AsrVsBatchsize,
    /// Federated training with the victim attacked every round.
    ConvergenceSweep,
    /// Single-round attacks under each configured defense, plus the accuracy
    /// of a model trained with that defense.
    DefenseSweep,
    /// Single-round LLG+ runs that also record raw and calibrated gradients.
    CalibrationPlot,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::AsrVsBatchsize => "asr_vs_batchsize",
            ExperimentKind::ConvergenceSweep => "convergence_sweep",
            ExperimentKind::DefenseSweep => "defense_sweep",
            ExperimentKind::CalibrationPlot => "calibration_plot",
        }
    }

    pub(crate) fn id(self) -> u64 {
        match self {
            ExperimentKind::AsrVsBatchsize => 1,
            ExperimentKind::ConvergenceSweep => 2,
            ExperimentKind::DefenseSweep => 3,
            ExperimentKind::CalibrationPlot => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    #[default]
    Fedsgd,
    Fedavg,
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    /// IDX image/label files; when set they replace the synthetic data.
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            input_dim: 64,
            samples_per_class: 500,
            cluster_spread: 0.3,
            idx_images: None,
            idx_labels: None,
        }
    }
}

/// Settings for multi-round training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationSettings {
    pub clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    /// Share of each client's data drawn from its dominant class.
    pub dominant_fraction: f64,
    /// Test accuracy is measured every this many rounds.
    pub accuracy_every: usize,
    /// Rounds used to train the accuracy-under-defense model of a defense sweep.
    pub defense_training_rounds: usize,
    /// Client batch size while training that model.
    pub defense_training_batch_size: usize,
}

impl Default for FederationSettings {
    fn default() -> Self {
        Self {
            clients: 50,
            clients_per_round: 10,
            rounds: 1000,
            dominant_fraction: 0.5,
            accuracy_every: 10,
            defense_training_rounds: 200,
            defense_training_batch_size: 8,
        }
    }
}

/// Declarative description of one experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub algorithm: AlgorithmName,
    /// Local iterations per round under FedAvg.
    #[serde(default = "default_gamma")]
    pub gamma: usize,
    pub attacks: Vec<AttackKind>,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    pub batch_sizes: Vec<usize>,
    #[serde(default)]
    pub balance: Balance,
    #[serde(default)]
    pub defenses: Vec<Defense>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub dummy: DummyKind,
    /// Worker threads for trials; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub probes: ProbeSchedule,
    #[serde(default)]
    pub federation: FederationSettings,
}

fn default_gamma() -> usize {
    10
}
fn default_model() -> ModelKind {
    ModelKind::Mlp
}
fn default_trials() -> usize {
    100
}
fn default_output() -> PathBuf {
    PathBuf::from("results.csv")
}
fn default_learning_rate() -> f64 {
    0.1
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(
        experiment: ExperimentKind,
        attacks: Vec<AttackKind>,
        batch_sizes: Vec<usize>,
    ) -> Self {
        Self {
            experiment,
            algorithm: AlgorithmName::Fedsgd,
            gamma: default_gamma(),
            attacks,
            model: default_model(),
            batch_sizes,
            balance: Balance::Unbalanced,
            defenses: Vec::new(),
            trials: default_trials(),
            master_seed: 0,
            output: default_output(),
            learning_rate: default_learning_rate(),
            dummy: DummyKind::Zeros,
            workers: 0,
            data: DataConfig::default(),
            probes: ProbeSchedule::default(),
            federation: FederationSettings::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn algorithm(&self) -> Algorithm {
        match self.algorithm {
            AlgorithmName::Fedsgd => Algorithm::FedSgd,
            AlgorithmName::Fedavg => Algorithm::FedAvg { gamma: self.gamma },
        }
    }

    /// The defenses to iterate over; an empty list means no defense.
    pub fn defense_list(&self) -> Vec<Defense> {
        if self.defenses.is_empty() {
            vec![Defense::None]
        } else {
            self.defenses.clone()
        }
    }

    /// Checks every field before any compute happens.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.attacks.is_empty() {
            return bad("at least one attack is required".into());
        }
        if self.batch_sizes.is_empty() {
            return bad("at least one batch size is required".into());
        }
        for &b in &self.batch_sizes {
            BatchSpec::new(b, self.balance).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.algorithm == AlgorithmName::Fedavg && self.gamma == 0 {
            return bad("gamma must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        for d in &self.defenses {
            d.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let data = &self.data;
        if data.idx_images.is_some() != data.idx_labels.is_some() {
            return bad("idx_images and idx_labels must be given together".into());
        }
        if data.idx_images.is_none() {
            if data.n_classes < 2 {
                return bad("data.n_classes must be >= 2".into());
            }
            if data.samples_per_class == 0 || data.input_dim == 0 {
                return bad("data.samples_per_class and data.input_dim must be positive".into());
            }
            if self.model == ModelKind::Cnn {
                let side = (data.input_dim as f64).sqrt().round() as usize;
                if side * side != data.input_dim || side < 5 {
                    return bad(format!(
                        "model = \"cnn\" needs a square input of side >= 5, input_dim = {}",
                        data.input_dim
                    ));
                }
            }
        }
        let p = &self.probes;
        if p.impact_batches == 0
            || p.offset_batches_per_size == 0
            || p.offset_batch_sizes.is_empty()
        {
            return bad("probe schedule must not be empty".into());
        }
        if p.offset_batch_sizes.contains(&0) {
            return bad("probe batch sizes must be positive".into());
        }
        let f = &self.federation;
        if self.experiment == ExperimentKind::ConvergenceSweep {
            if self.batch_sizes.len() != 1 {
                return bad("convergence_sweep takes exactly one batch size".into());
            }
            if self.defenses.len() > 1 {
                return bad("convergence_sweep takes at most one defense".into());
            }
            if f.rounds == 0 {
                return bad("federation.rounds must be >= 1".into());
            }
        }
        if matches!(
            self.experiment,
            ExperimentKind::ConvergenceSweep | ExperimentKind::DefenseSweep
        ) {
            if f.clients == 0 || f.clients_per_round == 0 || f.clients_per_round > f.clients {
                return bad("need 1 <= federation.clients_per_round <= federation.clients".into());
            }
            if !(0.0..=1.0).contains(&f.dominant_fraction) {
                return bad("federation.dominant_fraction must be in [0, 1]".into());
            }
            if self.experiment == ExperimentKind::DefenseSweep {
                BatchSpec::new(f.defense_training_batch_size, self.balance)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            if f.accuracy_every == 0 {
                return bad("federation.accuracy_every must be >= 1".into());
            }
        }
        Ok(())
    }
}
