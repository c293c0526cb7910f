use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::ConstantEstimate;
use crate::error::Result;
use crate::harness::config::Format;
use crate::model::{ModelParams, RegimeTag};

pub const CSV_HEADER: [&str; 8] = ["u", "p_classical", "p_parisian", "ratio", "ci_low", "ci_high", "n_steps", "seconds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub u: f64,
    pub p_classical: f64,
    pub p_parisian: f64,
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_steps: usize,
    pub seconds: f64,
    pub ratio_stderr: f64,
    pub classical_hits: u64,
    pub parisian_hits: u64,
    pub tilt_alpha: f64,
    pub tilt_beta: f64,
    pub windows: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub u: Option<f64>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub regime: RegimeTag,
    pub params: ModelParams,
    pub swapped: bool,
    pub seed: u64,
    pub n_paths: u64,
    pub rows: Vec<ReportRow>,
    pub theoretical_limit: Option<f64>,
    pub theoretical_stderr: Option<f64>,
    pub constants: Vec<ConstantEstimate>,
    pub errors: Vec<ErrorRecord>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    /// Whether the run should end with the simulation-quality exit status.
    pub fn has_quality_failure(&self) -> bool {
        !self.errors.is_empty() || self.constants.iter().any(|c| !c.warnings.is_empty())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.u.to_string(),
                r.p_classical.to_string(),
                r.p_parisian.to_string(),
                r.ratio.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.n_steps.to_string(),
                r.seconds.to_string(),
            ])?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Writes `report.csv` and/or `report.json` into `dir`; returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, Format::Csv | Format::Both) {
        let path = dir.join("report.csv");
        std::fs::write(&path, report.to_csv()?)?;
        written.push(path);
    }
    if matches!(format, Format::Json | Format::Both) {
        let path = dir.join("report.json");
        std::fs::write(&path, report.to_json()?)?;
        written.push(path);
    }
    Ok(written)
}
