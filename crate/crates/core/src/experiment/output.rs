use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: &str =
    "experiment,algorithm,attack,model,batch_size,defense,trial,asr,hellinger,model_accuracy,seed";

/// One attacked trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub algorithm: String,
    pub attack: String,
    pub model: String,
    pub batch_size: usize,
    pub defense: String,
    /// Trial index; the round number for convergence sweeps.
    pub trial: usize,
    pub asr: f64,
    pub hellinger: f64,
    pub model_accuracy: f64,
    pub seed: u64,
}

/// One `(label, occurrences, gradient)` point of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub batch_size: usize,
    pub trial: usize,
    pub label: usize,
    pub occurrences: usize,
    pub gradient: f64,
    pub calibrated: f64,
}

fn write_records<T: Serialize>(records: &[T], header: &str, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = File::create(path)?;
    if records.is_empty() {
        writeln!(file, "{header}")?;
        return Ok(());
    }
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes one row per trial under [`CSV_HEADER`].
pub fn emit_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    write_records(rows, CSV_HEADER, path.as_ref())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()?)
}

pub const CALIBRATION_HEADER: &str = "batch_size,trial,label,occurrences,gradient,calibrated";

pub fn emit_calibration_csv(points: &[CalibrationPoint], path: impl AsRef<Path>) -> Result<()> {
    write_records(points, CALIBRATION_HEADER, path.as_ref())
}

/// Mean and spread of one `(attack, batch size, defense)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub attack: String,
    pub batch_size: usize,
    pub defense: String,
    pub trials: usize,
    pub mean_asr: f64,
    pub std_asr: f64,
    pub mean_hellinger: f64,
    pub mean_accuracy: f64,
}

/// Groups rows by cell, preserving first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, usize, String)> = Vec::new();
    for r in rows {
        let key = (r.attack.clone(), r.batch_size, r.defense.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(attack, batch_size, defense)| {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| {
                    r.attack == attack && r.batch_size == batch_size && r.defense == defense
                })
                .collect();
            let n = cell.len() as f64;
            let mean = cell.iter().map(|r| r.asr).sum::<f64>() / n;
            let var = if cell.len() > 1 {
                cell.iter().map(|r| (r.asr - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            CellSummary {
                trials: cell.len(),
                mean_asr: mean,
                std_asr: var.sqrt(),
                mean_hellinger: cell.iter().map(|r| r.hellinger).sum::<f64>() / n,
                mean_accuracy: cell.iter().map(|r| r.model_accuracy).sum::<f64>() / n,
                attack,
                batch_size,
                defense,
            }
        })
        .collect()
}

/// Plain-text table of [`CellSummary`] values.
pub struct SummaryTable<'a>(pub &'a [CellSummary]);

impl fmt::Display for SummaryTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>5} {:<34} {:>6} {:>16} {:>9} {:>8}",
            "attack", "B", "defense", "trials", "asr (mean±std)", "hellinger", "acc"
        )?;
        for c in self.0 {
            writeln!(
                f,
                "{:<10} {:>5} {:<34} {:>6} {:>8.4}±{:<7.4} {:>9.4} {:>8.4}",
                c.attack,
                c.batch_size,
                c.defense,
                c.trials,
                c.mean_asr,
                c.std_asr,
                c.mean_hellinger,
                c.mean_accuracy
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(attack: &str, trial: usize, asr: f64) -> ResultRow {
        ResultRow {
            experiment: "asr_vs_batchsize".into(),
            algorithm: "fedsgd".into(),
            attack: attack.into(),
            model: "mlp".into(),
            batch_size: 4,
            defense: "dp(beta=1;sigma=0.1)".into(),
            trial,
            asr,
            hellinger: 0.125,
            model_accuracy: 0.1,
            seed: u64::MAX,
        }
    }

    #[test]
    fn empty_results_write_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        emit_csv(&[], &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            format!("{CSV_HEADER}\n")
        );
    }

    #[test]
    fn rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        let rows: Vec<ResultRow> = (0..3)
            .flat_map(|t| {
                [
                    row("llg", t, 0.1 * t as f64 + 1.0 / 3.0),
                    row("random", t, 0.25),
                ]
            })
            .collect();
        emit_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("{CSV_HEADER}\n")));
        assert_eq!(text.lines().count(), 7);
        assert!(!text.contains('\r'));
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        std::fs::write(&file, "x").unwrap();
        assert!(emit_csv(&[], file.join("below.csv")).is_err());
    }

    #[test]
    fn summary_groups_cells() {
        let rows = vec![
            row("llg", 0, 1.0),
            row("llg", 1, 0.5),
            row("random", 0, 0.25),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].trials, 2);
        assert!((s[0].mean_asr - 0.75).abs() < 1e-15);
        assert!((s[0].std_asr - 0.125f64.sqrt()).abs() < 1e-12);
    }
}
