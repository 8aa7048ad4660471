use crate::attack::AttackKind;
use crate::defenses::{Defense, ThresholdScope};
use crate::nn::ModelKind;

use super::config::{AlgorithmName, ExperimentConfig, ExperimentKind};

/// A named, ready-to-run configuration.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: ExperimentConfig,
}

const ALL_ATTACKS: [AttackKind; 4] = [
    AttackKind::Llg,
    AttackKind::LlgStar,
    AttackKind::LlgPlus,
    AttackKind::Random,
];
const ALL_BATCHES: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];

fn cfg(
    kind: ExperimentKind,
    attacks: &[AttackKind],
    batches: &[usize],
    output: &str,
) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, attacks.to_vec(), batches.to_vec());
    c.output = output.into();
    c
}

/// Every shipped preset.
pub fn catalog() -> Vec<Preset> {
    let mut out = Vec::new();

    let c = cfg(
        ExperimentKind::AsrVsBatchsize,
        &ALL_ATTACKS,
        &ALL_BATCHES,
        "results/asr_fedsgd.csv",
    );
    out.push(Preset {
        name: "asr-fedsgd",
        description: "attack success vs batch size, untrained MLP, FedSGD",
        config: c,
    });

    let mut c = cfg(
        ExperimentKind::AsrVsBatchsize,
        &ALL_ATTACKS,
        &ALL_BATCHES,
        "results/asr_fedavg.csv",
    );
    c.algorithm = AlgorithmName::Fedavg;
    out.push(Preset {
        name: "asr-fedavg",
        description: "attack success vs batch size, untrained MLP, FedAvg with 10 local steps",
        config: c,
    });

    let mut c = cfg(
        ExperimentKind::AsrVsBatchsize,
        &ALL_ATTACKS,
        &ALL_BATCHES,
        "results/asr_cnn.csv",
    );
    c.model = ModelKind::Cnn;
    out.push(Preset {
        name: "asr-cnn",
        description: "attack success vs batch size on the small CNN",
        config: c,
    });

    let mut c = cfg(
        ExperimentKind::ConvergenceSweep,
        &ALL_ATTACKS,
        &[8],
        "results/convergence.csv",
    );
    c.trials = 1;
    out.push(Preset {
        name: "convergence",
        description: "attacks every round during 1000 rounds of FedSGD training",
        config: c,
    });

    let mut c = cfg(
        ExperimentKind::DefenseSweep,
        &ALL_ATTACKS,
        &ALL_BATCHES,
        "results/defense_noise.csv",
    );
    c.defenses = [0.0, 0.01, 0.1, 1.0]
        .map(|sigma| Defense::Noise { sigma })
        .to_vec();
    out.push(Preset {
        name: "defense-noise",
        description: "additive Gaussian noise at several scales",
        config: c,
    });

    let mut c = cfg(
        ExperimentKind::DefenseSweep,
        &ALL_ATTACKS,
        &ALL_BATCHES,
        "results/defense_dp.csv",
    );
    c.defenses = [1.0, 5.0, 10.0]
        .map(|beta| Defense::Dp { beta, sigma: 0.1 })
        .to_vec();
    out.push(Preset {
        name: "defense-dp",
        description: "norm clipping plus noise at several clipping bounds",
        config: c,
    });

    let mut c = cfg(
        ExperimentKind::DefenseSweep,
        &ALL_ATTACKS,
        &ALL_BATCHES,
        "results/defense_compression.csv",
    );
    c.defenses = [0.0, 0.2, 0.4, 0.6, 0.8]
        .map(|theta| Defense::Compression {
            theta,
            scope: ThresholdScope::default(),
        })
        .to_vec();
    out.push(Preset {
        name: "defense-compression",
        description: "gradient compression at several pruning fractions",
        config: c,
    });

    let c = cfg(
        ExperimentKind::CalibrationPlot,
        &[AttackKind::LlgPlus],
        &[2, 8, 32, 128],
        "results/calibration.csv",
    );
    out.push(Preset {
        name: "calibration",
        description: "raw and calibrated gradients vs label counts",
        config: c,
    });

    out
}

/// Looks a preset up by name.
pub fn preset(name: &str) -> Option<Preset> {
    catalog().into_iter().find(|p| p.name == name)
}
