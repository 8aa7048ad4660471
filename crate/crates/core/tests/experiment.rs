use llg_core::attack::AttackKind;
use llg_core::data::{synth_generate, SyntheticSpec};
use llg_core::defenses::Defense;
use llg_core::experiment::{
    emit_csv, read_csv, run_experiment, summarize, ExperimentConfig, ExperimentKind, CSV_HEADER,
};

fn small(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        kind,
        vec![AttackKind::Llg, AttackKind::LlgPlus, AttackKind::Random],
        vec![2, 8],
    );
    cfg.trials = 3;
    cfg.master_seed = 42;
    cfg.data.samples_per_class = 60;
    cfg.federation.clients = 10;
    cfg.federation.clients_per_round = 3;
    cfg.federation.rounds = 4;
    cfg.federation.accuracy_every = 2;
    cfg.federation.defense_training_rounds = 3;
    if kind == ExperimentKind::ConvergenceSweep {
        cfg.batch_sizes = vec![2];
    }
    cfg
}

#[test]
fn identical_seeds_give_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [
        ExperimentKind::AsrVsBatchsize,
        ExperimentKind::ConvergenceSweep,
        ExperimentKind::DefenseSweep,
        ExperimentKind::CalibrationPlot,
    ] {
        let mut cfg = small(kind);
        if kind == ExperimentKind::DefenseSweep {
            cfg.defenses = vec![
                Defense::Noise { sigma: 0.1 },
                Defense::Compression {
                    theta: 0.5,
                    scope: Default::default(),
                },
            ];
        }
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        emit_csv(&run_experiment(&cfg).unwrap().rows, &a).unwrap();
        cfg.workers = 1;
        emit_csv(&run_experiment(&cfg).unwrap().rows, &b).unwrap();
        let (a, b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(a, b, "{}", kind.as_str());
        assert!(String::from_utf8(a).unwrap().starts_with(CSV_HEADER));
    }
}

#[test]
fn different_seeds_give_different_results() {
    let mut cfg = small(ExperimentKind::AsrVsBatchsize);
    let a = run_experiment(&cfg).unwrap().rows;
    cfg.master_seed += 1;
    let b = run_experiment(&cfg).unwrap().rows;
    assert_ne!(a, b);
}

#[test]
fn rows_cover_every_cell_and_round_trip() {
    let cfg = small(ExperimentKind::AsrVsBatchsize);
    let rows = run_experiment(&cfg).unwrap().rows;
    assert_eq!(rows.len(), 3 * 2 * 3);
    assert!(rows
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.asr) && (0.0..=1.0).contains(&r.hellinger)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/out.csv");
    emit_csv(&rows, &path).unwrap();
    assert_eq!(read_csv(&path).unwrap(), rows);
    assert_eq!(summarize(&rows).len(), 3 * 2);
}

#[test]
fn convergence_rows_are_indexed_by_round() {
    let cfg = small(ExperimentKind::ConvergenceSweep);
    let rows = run_experiment(&cfg).unwrap().rows;
    assert_eq!(rows.len(), 3 * 4 * 3);
    let rounds: Vec<usize> = rows
        .iter()
        .filter(|r| r.attack == "llg")
        .map(|r| r.trial)
        .collect();
    assert_eq!(&rounds[..4], &[1, 2, 3, 4]);
    assert!(rows.iter().all(|r| r.batch_size == 2));
}

#[test]
fn calibration_points_cover_every_label() {
    let cfg = small(ExperimentKind::CalibrationPlot);
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.calibration.len(), 2 * 3 * 10);
    for b in [2, 8] {
        let total: usize = result
            .calibration
            .iter()
            .filter(|p| p.batch_size == b)
            .map(|p| p.occurrences)
            .sum();
        assert_eq!(total, b * 3);
    }
}

#[test]
fn synthetic_clusters_are_linearly_separable() {
    // Nearest-centroid is a linear rule; fit on train, score on test.
    let data = synth_generate(&SyntheticSpec::default()).unwrap();
    let n = 10;
    let dim = 64;
    let mut centroids = vec![vec![0.0; dim]; n];
    let mut counts = vec![0.0; n];
    for s in &data.train.samples {
        counts[s.label] += 1.0;
        for (c, x) in centroids[s.label].iter_mut().zip(&s.features) {
            *c += x;
        }
    }
    for (c, k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k);
    }
    let correct = data
        .test
        .samples
        .iter()
        .filter(|s| {
            let best = (0..n)
                .min_by(|&a, &b| {
                    let d = |c: &Vec<f64>| {
                        c.iter()
                            .zip(&s.features)
                            .map(|(p, q)| (p - q).powi(2))
                            .sum::<f64>()
                    };
                    d(&centroids[a]).total_cmp(&d(&centroids[b]))
                })
                .unwrap();
            best == s.label
        })
        .count();
    let acc = correct as f64 / data.test.len() as f64;
    assert!(acc > 0.9, "nearest-centroid accuracy {acc}");
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut cfg = small(ExperimentKind::AsrVsBatchsize);
    cfg.batch_sizes = vec![3];
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = small(ExperimentKind::AsrVsBatchsize);
    cfg.defenses = vec![Defense::Compression {
        theta: 1.0,
        scope: Default::default(),
    }];
    assert!(run_experiment(&cfg).is_err());
    assert!(ExperimentConfig::from_toml_str(
        "experiment = \"asr_vs_batchsize\"\nattacks = [\"llg\"]\nbatch_sizes = [2]\nbogus = 1\n"
    )
    .is_err());
}
