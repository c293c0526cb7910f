use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::model::DEFAULT_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowChoice {
    /// Overhanging windows for the dominated regimes, windows inside the horizon otherwise.
    Auto,
    Inside,
    Overhang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            _ => Err(Error::Config(format!("unknown format `{s}` (expected csv, json or both)"))),
        }
    }
}

/// Accepts `true`/`false` or `"on"`/`"off"`.
fn switch<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bool(bool),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Bool(b) => Ok(b),
        Raw::Text(s) => parse_switch(&s).map_err(serde::de::Error::custom),
    }
}

pub fn parse_switch(s: &str) -> Result<bool> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(Error::Config(format!("expected on or off, got `{s}`"))),
    }
}

/// Flat key/value experiment description.
///
/// ```toml
/// a = 0.8
/// rho = 0.1
/// s1 = 1.0
/// s2 = 1.0
/// u_list = [2.0, 3.0, 4.0]
/// n_paths = 100000
/// seed = 7
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    /// Second barrier over first; values above 1 swap the coordinates.
    pub a: f64,
    pub rho: f64,
    #[serde(default)]
    pub s1: f64,
    #[serde(default)]
    pub s2: f64,
    #[serde(default)]
    pub u_list: Vec<f64>,
    #[serde(default = "default_paths")]
    pub n_paths: u64,
    #[serde(default = "default_ppw")]
    pub points_per_window: f64,
    #[serde(default = "yes", deserialize_with = "switch")]
    pub tilt: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default = "default_windows")]
    pub windows: WindowChoice,
    #[serde(default = "yes", deserialize_with = "switch")]
    pub timing: bool,
    #[serde(default = "default_tol")]
    pub boundary_tol: f64,
    #[serde(default = "default_const_samples")]
    pub const_samples: u64,
    #[serde(default)]
    pub const_seed: Option<u64>,
    #[serde(default = "default_horizons")]
    pub const_horizons: Vec<f64>,
    #[serde(default = "default_spans")]
    pub const_spans: Vec<f64>,
    #[serde(default)]
    pub const_delta: Option<f64>,
    #[serde(default = "yes", deserialize_with = "switch")]
    pub const_extrapolate: bool,
    #[serde(default)]
    pub constants_file: Option<PathBuf>,
}

fn default_paths() -> u64 {
    100_000
}
fn default_ppw() -> f64 {
    16.0
}
fn yes() -> bool {
    true
}
fn default_seed() -> u64 {
    1
}
fn default_windows() -> WindowChoice {
    WindowChoice::Auto
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_const_samples() -> u64 {
    50_000
}
fn default_horizons() -> Vec<f64> {
    vec![8.0, 16.0, 32.0]
}
fn default_spans() -> Vec<f64> {
    vec![16.0, 32.0, 64.0]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.u_list.iter().all(|&u| u > 0.0 && u.is_finite()) {
            return Err(Error::Config("u_list: every barrier must be positive and finite".into()));
        }
        if !self.u_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("u_list: barriers must be strictly increasing".into()));
        }
        if self.n_paths < 10_000 {
            return Err(Error::domain("n_paths", self.n_paths as f64, "need at least 10^4 paths"));
        }
        if !(self.points_per_window >= 8.0) {
            return Err(Error::domain("points_per_window", self.points_per_window, "must be >= 8"));
        }
        if self.const_samples < 2 {
            return Err(Error::domain("const_samples", self.const_samples as f64, "need at least 2 samples"));
        }
        if self.workers == Some(0) {
            return Err(Error::domain("workers", 0.0, "must be >= 1"));
        }
        Ok(())
    }

    /// Worker count: explicit setting, else `PARISIAN_WORKERS`, else all cores.
    pub fn resolved_workers(&self) -> usize {
        self.workers
            .or_else(|| std::env::var("PARISIAN_WORKERS").ok().and_then(|v| v.trim().parse().ok()))
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }
}
