//! CSV and JSON report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{AblationReport, CrossDomainGrid, EvalReport, ZeroShotReport};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One CSV line: accuracy of a domain vector adapted on `source`, scored on `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub target: String,
    pub seed: u64,
    pub accuracy: f64,
    pub config_digest: String,
}

pub trait Report: Serialize {
    fn rows(&self) -> Vec<ReportRow>;
}

impl Report for EvalReport {
    fn rows(&self) -> Vec<ReportRow> {
        self.seeds
            .iter()
            .zip(&self.accuracies)
            .map(|(&seed, &accuracy)| ReportRow {
                source: self.domain.clone(),
                target: self.domain.clone(),
                seed,
                accuracy,
                config_digest: self.config_digest.clone(),
            })
            .collect()
    }
}

impl Report for AblationReport {
    fn rows(&self) -> Vec<ReportRow> {
        self.rows.iter().flat_map(Report::rows).collect()
    }
}

impl Report for CrossDomainGrid {
    fn rows(&self) -> Vec<ReportRow> {
        let mut out = Vec::new();
        for row in &self.cells {
            for cell in row {
                for (&seed, &accuracy) in self.seeds.iter().zip(&cell.per_seed) {
                    out.push(ReportRow {
                        source: cell.source.clone(),
                        target: cell.target.clone(),
                        seed,
                        accuracy,
                        config_digest: self.config_digest.clone(),
                    });
                }
            }
        }
        out
    }
}

impl Report for ZeroShotReport {
    fn rows(&self) -> Vec<ReportRow> {
        self.domains
            .iter()
            .map(|e| ReportRow {
                source: "zero-shot".into(),
                target: e.domain.clone(),
                seed: self.seed,
                accuracy: e.accuracy,
                config_digest: self.weights_digest.clone(),
            })
            .collect()
    }
}

impl<R: Report> Report for Vec<R> {
    fn rows(&self) -> Vec<ReportRow> {
        self.iter().flat_map(Report::rows).collect()
    }
}

pub fn render_csv<R: Report + ?Sized>(report: &R) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in report.rows() {
        w.serialize(row)
            .map_err(|e| Error::Input(format!("csv encoding failed: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Input(format!("csv encoding failed: {e}")))
}

pub fn render_json<R: Report + ?Sized>(report: &R) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn emit_report<R: Report + ?Sized>(report: &R, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ReportFormat::Csv => render_csv(report)?,
        ReportFormat::Json => render_json(report),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
