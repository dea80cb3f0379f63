//! Experiment reports: CSV emission, JSON sidecars, and exact round-trip
//! parsing.
//!
//! The CSV carries one row per grid cell with the header
//! `model,regime,seed,accuracy,n_test`, LF line endings, and accuracy
//! printed with 6 decimals. Because accuracy is always `correct / n_test`,
//! a parsed row reconstructs the exact value by re-deriving the integer
//! correct count, so emit → parse is lossless. The JSON sidecar (same stem,
//! `.json` extension) records the full configuration, the corpus
//! fingerprint, per-cell wall time, and per-(model, regime) aggregates.

use std::path::{Path, PathBuf};

use fstc_core::tsne::Projection;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, IoContext, Result};

/// One experiment cell: a model (or ablation arm) at a data regime under
/// one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub regime: String,
    pub seed: u64,
    /// Exactly `correct / n_test`.
    pub accuracy: f64,
    pub n_test: usize,
}

/// Wall-clock seconds one cell took (training + evaluation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub model: String,
    pub regime: String,
    pub seed: u64,
    pub seconds: f64,
}

/// Accuracy mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub regime: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Sidecar metadata accompanying the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config: RunConfig,
    pub corpus_fingerprint: String,
    pub cell_seconds: Vec<CellTiming>,
    pub aggregates: Vec<Aggregate>,
}

/// A full experiment result: rows plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMeta,
}

/// Sample standard deviation (n−1 denominator); 0 for fewer than 2 values.
fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Per-(model, regime) aggregates in first-appearance order.
pub fn aggregate_rows(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut order: Vec<(String, String)> = Vec::new();
    for row in rows {
        let key = (row.model.clone(), row.regime.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(model, regime)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.model == model && r.regime == regime)
                .map(|r| r.accuracy)
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            Aggregate { model, regime, mean_accuracy: mean, std_accuracy: sample_std(&values, mean) }
        })
        .collect()
}

impl Report {
    pub fn new(
        rows: Vec<ReportRow>,
        config: RunConfig,
        corpus_fingerprint: String,
        cell_seconds: Vec<CellTiming>,
    ) -> Report {
        let aggregates = aggregate_rows(&rows);
        Report {
            rows,
            metadata: ReportMeta { config, corpus_fingerprint, cell_seconds, aggregates },
        }
    }

    /// The CSV body: exact header, one LF-terminated line per row.
    pub fn csv_string(&self) -> String {
        let mut out = String::from("model,regime,seed,accuracy,n_test\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{}\n",
                row.model, row.regime, row.seed, row.accuracy, row.n_test
            ));
        }
        out
    }

    /// Writes the CSV and its JSON sidecar.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.csv_string()).data_context("writing report", csv_path)?;
        let sidecar = sidecar_path(csv_path);
        let json = serde_json::to_string_pretty(&self.metadata)
            .map_err(|e| CliError::Data(format!("encoding sidecar: {e}")))?;
        std::fs::write(&sidecar, json).data_context("writing sidecar", &sidecar)
    }

    /// Reads a CSV + sidecar pair back into an equal `Report`.
    pub fn read(csv_path: &Path) -> Result<Report> {
        let csv =
            std::fs::read_to_string(csv_path).data_context("reading report", csv_path)?;
        let rows = parse_rows(&csv)?;
        let sidecar = sidecar_path(csv_path);
        let json =
            std::fs::read_to_string(&sidecar).data_context("reading sidecar", &sidecar)?;
        let metadata: ReportMeta = serde_json::from_str(&json)
            .map_err(|e| CliError::Data(format!("decoding sidecar {}: {e}", sidecar.display())))?;
        Ok(Report { rows, metadata })
    }
}

/// The sidecar lives next to the CSV with a `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Parses the CSV body, reconstructing each accuracy exactly from the
/// rounded text via the integer correct count.
pub fn parse_rows(csv: &str) -> Result<Vec<ReportRow>> {
    let mut lines = csv.lines();
    match lines.next() {
        Some("model,regime,seed,accuracy,n_test") => {}
        other => {
            return Err(CliError::Data(format!("unexpected report header {other:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Data(format!(
                "report line {}: expected 5 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| CliError::Data(format!("report line {}: bad {what}", i + 2));
        let seed: u64 = fields[2].parse().map_err(|_| bad("seed"))?;
        let printed: f64 = fields[3].parse().map_err(|_| bad("accuracy"))?;
        let n_test: usize = fields[4].parse().map_err(|_| bad("n_test"))?;
        if n_test == 0 {
            return Err(bad("n_test"));
        }
        let correct = (printed * n_test as f64).round();
        if !(0.0..=n_test as f64).contains(&correct) {
            return Err(bad("accuracy"));
        }
        rows.push(ReportRow {
            model: fields[0].to_string(),
            regime: fields[1].to_string(),
            seed,
            accuracy: correct / n_test as f64,
            n_test,
        });
    }
    Ok(rows)
}

// ── 2-D projection emission ─────────────────────────────────────────────

/// Sidecar content for a projection: the KL divergence trace recorded
/// during optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMeta {
    pub kl_trace: Vec<f64>,
}

/// The projection CSV: header `x,y,label,class_name`, 6-decimal
/// coordinates, one row per projected point.
pub fn projection_csv(proj: &Projection, class_names: &[String]) -> Result<String> {
    let mut out = String::from("x,y,label,class_name\n");
    for (i, &label) in proj.labels.iter().enumerate() {
        let name = class_names.get(label).ok_or_else(|| {
            CliError::Data(format!("projection label {label} has no class name"))
        })?;
        out.push_str(&format!(
            "{:.6},{:.6},{},{}\n",
            proj.points.get(i, 0),
            proj.points.get(i, 1),
            label,
            name
        ));
    }
    Ok(out)
}

/// Writes the projection CSV and its KL-trace sidecar.
pub fn write_projection(proj: &Projection, class_names: &[String], csv_path: &Path) -> Result<()> {
    std::fs::write(csv_path, projection_csv(proj, class_names)?)
        .data_context("writing projection", csv_path)?;
    let sidecar = sidecar_path(csv_path);
    let meta = ProjectionMeta { kl_trace: proj.kl_trace.clone() };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| CliError::Data(format!("encoding sidecar: {e}")))?;
    std::fs::write(&sidecar, json).data_context("writing sidecar", &sidecar)
}

/// One parsed projection row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub class_name: String,
}

/// Parses a projection CSV (coordinates at the emitted 6-decimal precision).
pub fn parse_projection(csv: &str) -> Result<Vec<ProjectionRow>> {
    let mut lines = csv.lines();
    match lines.next() {
        Some("x,y,label,class_name") => {}
        other => {
            return Err(CliError::Data(format!("unexpected projection header {other:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Data(format!(
                "projection line {}: expected 4 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| CliError::Data(format!("projection line {}: bad {what}", i + 2));
        rows.push(ProjectionRow {
            x: fields[0].parse().map_err(|_| bad("x"))?,
            y: fields[1].parse().map_err(|_| bad("y"))?,
            label: fields[2].parse().map_err(|_| bad("label"))?,
            class_name: fields[3].to_string(),
        });
    }
    Ok(rows)
}
