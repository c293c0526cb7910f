//! Experiment orchestration: constants, limit assembly and the per-u ratio sweep.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analytics::{required_constants, theoretical_ratio_limit, LimitConstants, Valued};
use crate::constants::{estimate, ConstantEstimate, ConstantKey, Schedule};
use crate::error::{Error, Result};
use crate::model::{classify_regime, ModelParams, Regime};
use crate::pathsim::{default_tilt, estimate_conditional_ratio, GridSpec, RatioConfig, TiltConfig, WindowMode};

pub use config::{ExperimentConfig, Format, WindowChoice};
pub use report::{emit_report, ErrorRecord, ExperimentReport, ReportRow};

/// Constant estimates keyed by constant and schedule, with call counts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstantCache {
    entries: BTreeMap<String, ConstantEstimate>,
    #[serde(skip)]
    calls: BTreeMap<String, u32>,
}

fn schedule_key(key: &ConstantKey, s: &Schedule) -> String {
    format!(
        "{}|levels={:?}|delta={:?}|n={}|seed={}|extrapolate={}|exact={}",
        key.cache_key(),
        s.levels,
        s.delta,
        s.n_samples,
        s.seed,
        s.extrapolate,
        s.use_exact
    )
}

impl ConstantCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        std::fs::write(path, v)?;
        Ok(())
    }

    pub fn get_or_estimate(&mut self, key: &ConstantKey, sched: &Schedule) -> Result<ConstantEstimate> {
        let k = schedule_key(key, sched);
        if let Some(e) = self.entries.get(&k) {
            return Ok(e.clone());
        }
        let e = estimate(key, sched)?;
        *self.calls.entry(k.clone()).or_default() += 1;
        self.entries.insert(k, e.clone());
        Ok(e)
    }

    /// Number of fresh estimations performed for `key` under `sched` by this cache.
    pub fn estimation_calls(&self, key: &ConstantKey, sched: &Schedule) -> u32 {
        self.calls.get(&schedule_key(key, sched)).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Normalized parameters, regime and the multiplier applied to each `u`.
pub struct Setup {
    pub params: ModelParams,
    pub regime: Regime,
    pub barrier_scale: f64,
    pub swapped: bool,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let n = ModelParams::normalized(cfg.c1, cfg.c2, cfg.a, cfg.rho, cfg.s1, cfg.s2)?;
    let regime = classify_regime(&n.params, cfg.boundary_tol)?;
    Ok(Setup {
        params: n.params,
        regime,
        barrier_scale: n.barrier_scale,
        swapped: n.swapped,
    })
}

pub fn constant_schedule(cfg: &ExperimentConfig, key: &ConstantKey, workers: usize) -> Schedule {
    let mut s = Schedule::default_for(key, cfg.const_samples, cfg.const_seed.unwrap_or(cfg.seed));
    s.levels = match key {
        ConstantKey::H { .. } => cfg.const_spans.clone(),
        _ => cfg.const_horizons.clone(),
    };
    s.delta = cfg.const_delta;
    s.extrapolate = cfg.const_extrapolate;
    s.workers = workers;
    s
}

/// Estimates (or fetches) every constant the regime's limit needs.
pub fn limit_constants(
    cfg: &ExperimentConfig,
    st: &Setup,
    cache: &mut ConstantCache,
    workers: usize,
) -> Result<(LimitConstants, Vec<ConstantEstimate>)> {
    let mut lc = LimitConstants::new(st.regime.tag);
    let mut used: Vec<ConstantEstimate> = Vec::new();
    for (role, key) in required_constants(&st.params, &st.regime) {
        let sched = constant_schedule(cfg, &key, workers);
        let e = cache.get_or_estimate(&key, &sched)?;
        lc = lc.with(role, e.valued());
        if !used.iter().any(|u| u.key == e.key) {
            used.push(e);
        }
    }
    Ok((lc, used))
}

fn record(u: Option<f64>, e: &Error) -> ErrorRecord {
    let kind = match e {
        Error::InsufficientSamples { .. } => "insufficient_samples",
        Error::Underflow { .. } => "underflow",
        Error::MissingConstant(_) => "missing_constant",
        Error::Divergent(_) => "divergent",
        Error::Internal(_) => "internal",
        _ => "error",
    };
    ErrorRecord {
        u,
        kind: kind.to_string(),
        message: e.to_string(),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, cache: &mut ConstantCache) -> Result<ExperimentReport> {
    cfg.validate()?;
    let st = setup(cfg)?;
    let p = st.params;
    let workers = cfg.resolved_workers();
    let mut warnings = Vec::new();
    let mut errors = Vec::new();
    if st.swapped {
        warnings.push(format!(
            "barrier ratio {} > 1: coordinates swapped, barriers rescaled by {}",
            cfg.a, st.barrier_scale
        ));
    }

    let (theoretical, constants) = match limit_constants(cfg, &st, cache, workers) {
        Ok((lc, used)) => match theoretical_ratio_limit(&p, &st.regime, &lc) {
            Ok(v) => (Some(v), used),
            Err(e) => {
                errors.push(record(None, &e));
                (None, used)
            }
        },
        Err(e) => {
            errors.push(record(None, &e));
            (None, Vec::new())
        }
    };
    for c in &constants {
        warnings.extend(c.warnings.iter().cloned());
    }

    let windows = match cfg.windows {
        WindowChoice::Inside => WindowMode::Inside,
        WindowChoice::Overhang => WindowMode::Overhang,
        WindowChoice::Auto if st.regime.tag.is_dominated() => WindowMode::Overhang,
        WindowChoice::Auto => WindowMode::Inside,
    };
    let mut rows = Vec::with_capacity(cfg.u_list.len());
    for &u_in in &cfg.u_list {
        let u = u_in * st.barrier_scale;
        let started = Instant::now();
        let run = || -> Result<_> {
            let tilt = if cfg.tilt {
                default_tilt(&p, &st.regime, u)?
            } else {
                TiltConfig::off()
            };
            let rc = RatioConfig {
                grid: GridSpec::for_model(&p, u, cfg.points_per_window)?,
                n_paths: cfg.n_paths,
                tilt,
                seed: cfg.seed,
                workers,
                windows,
            };
            Ok((tilt, estimate_conditional_ratio(&p, u, &rc)?))
        };
        match run() {
            Ok((tilt, est)) => {
                warnings.extend(est.warnings.iter().cloned());
                rows.push(ReportRow {
                    u: u_in,
                    p_classical: est.p_classical,
                    p_parisian: est.p_parisian,
                    ratio: est.ratio,
                    ci_low: est.ci_low,
                    ci_high: est.ci_high,
                    n_steps: est.n_steps,
                    seconds: if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 },
                    ratio_stderr: est.ratio_stderr,
                    classical_hits: est.classical_hits,
                    parisian_hits: est.parisian_hits,
                    tilt_alpha: tilt.alpha,
                    tilt_beta: tilt.beta,
                    windows: match windows {
                        WindowMode::Inside => "inside".into(),
                        WindowMode::Overhang => "overhang".into(),
                    },
                });
            }
            Err(e @ (Error::InsufficientSamples { .. } | Error::Underflow { .. })) => errors.push(record(Some(u_in), &e)),
            Err(e) => return Err(e),
        }
    }

    Ok(ExperimentReport {
        regime: st.regime.tag,
        params: p,
        swapped: st.swapped,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        rows,
        theoretical_limit: theoretical.map(|v: Valued| v.value),
        theoretical_stderr: theoretical.map(|v| v.stderr),
        constants,
        errors,
        warnings,
    })
}
