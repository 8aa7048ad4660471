//! `llg-lab`: runs label-leakage experiments described by TOML configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;

use llg_core::experiment::{
    catalog, emit_calibration_csv, emit_csv, preset, run_experiment, summarize, ExperimentConfig,
    ExperimentKind, SummaryTable,
};
use llg_core::metrics;

#[derive(Parser, Debug)]
#[command(
    name = "llg-lab",
    version,
    about = "Label leakage from gradients in federated learning"
)]
struct Cli {
    /// Print the shipped experiment presets and exit.
    #[arg(long)]
    list_experiments: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its CSV.
    Run {
        /// TOML experiment description.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Name of a shipped preset instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the CSV; the file name comes from `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `trials`.
        #[arg(long)]
        trials: Option<usize>,
        /// Overrides `workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print a preset as TOML.
    Show { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> anyhow::Result<()> {
    if cli.list_experiments {
        for p in catalog() {
            println!(
                "{:<20} {:<18} {}",
                p.name,
                p.config.experiment.as_str(),
                p.description
            );
        }
        return Ok(());
    }
    match cli.command {
        None => bail!(
            "nothing to do; try `llg-lab run --config <file>` or `llg-lab --list-experiments`"
        ),
        Some(Command::Show { name }) => {
            let p = preset(&name).with_context(|| format!("unknown preset {name:?}"))?;
            print!("{}", p.config.to_toml_string()?);
            Ok(())
        }
        Some(Command::Run {
            config,
            preset: preset_name,
            seed,
            out,
            trials,
            workers,
        }) => {
            let mut cfg = match (config, preset_name) {
                (Some(path), _) => ExperimentConfig::from_file(&path)
                    .with_context(|| format!("loading {}", path.display()))?,
                (None, Some(name)) => {
                    preset(&name)
                        .with_context(|| format!("unknown preset {name:?}"))?
                        .config
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(dir) = out {
                let name = cfg
                    .output
                    .file_name()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| "results.csv".into());
                cfg.output = dir.join(name);
            }
            cfg.validate()?;
            run(&cfg)
        }
    }
}

fn run(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    info!(
        "running {} ({} / {}) with seed {}",
        cfg.experiment.as_str(),
        cfg.algorithm().name(),
        cfg.model.as_str(),
        cfg.master_seed
    );
    let result = run_experiment(cfg)?;
    emit_csv(&result.rows, &cfg.output)
        .with_context(|| format!("writing {}", cfg.output.display()))?;
    info!(
        "wrote {} rows to {}",
        result.rows.len(),
        cfg.output.display()
    );

    println!("{}", SummaryTable(&summarize(&result.rows)));

    if cfg.experiment == ExperimentKind::CalibrationPlot {
        let side = calibration_path(&cfg.output);
        emit_calibration_csv(&result.calibration, &side)?;
        info!("wrote calibration points to {}", side.display());
        println!("batch_size  pearson_raw  pearson_calibrated");
        for &b in &cfg.batch_sizes {
            let pts: Vec<_> = result
                .calibration
                .iter()
                .filter(|p| p.batch_size == b)
                .collect();
            let counts: Vec<f64> = pts.iter().map(|p| p.occurrences as f64).collect();
            let raw: Vec<f64> = pts.iter().map(|p| p.gradient).collect();
            let cal: Vec<f64> = pts.iter().map(|p| p.calibrated).collect();
            let fmt = |r: Result<f64, _>| {
                r.map(|v: f64| format!("{v:.4}"))
                    .unwrap_or_else(|_: llg_core::Error| "n/a".into())
            };
            println!(
                "{b:>10}  {:>11}  {:>18}",
                fmt(metrics::pearson(&counts, &raw)),
                fmt(metrics::pearson(&counts, &cal))
            );
        }
    }
    Ok(())
}

fn calibration_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    output.with_file_name(format!("{stem}_calibration.csv"))
}
