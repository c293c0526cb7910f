//! Discretized correlated Brownian paths, classical and Parisian ruin
//! detection, and importance-sampled estimators built on them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::quadratic_form;
use crate::error::{Error, Result};
use crate::model::{limiting_t_star, ModelParams, Regime, RegimeTag};
use crate::rng::{with_workers, Streams};

pub const DEFAULT_POINTS_PER_WINDOW: f64 = 16.0;
pub const MIN_STEPS: usize = 4096;
const CHUNK: u64 = 512;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub n_steps: usize,
}

impl GridSpec {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::domain("n_steps", n_steps as f64, "need at least 2 steps"));
        }
        Ok(GridSpec {
            horizon: 1.0,
            n_steps,
        })
    }

    /// `max(ceil(m u^2 / min S), 4096)` over the positive window scales.
    pub fn for_model(p: &ModelParams, u: f64, points_per_window: f64) -> Result<Self> {
        if !(points_per_window >= 8.0) {
            return Err(Error::domain("points_per_window", points_per_window, "must be >= 8"));
        }
        let smin = [p.s1, p.s2].into_iter().filter(|&s| s > 0.0).fold(f64::INFINITY, f64::min);
        let n = if smin.is_finite() {
            ((points_per_window * u * u / smin).ceil() as usize).max(MIN_STEPS)
        } else {
            MIN_STEPS
        };
        GridSpec::new(n)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }
}

/// Where a Parisian window may sit relative to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// The whole window lies in `[0, 1]`.
    Inside,
    /// The window starts in `[0, 1]` and may run past it; the path is extended.
    Overhang,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltConfig {
    pub alpha: f64,
    pub beta: f64,
    pub enabled: bool,
}

impl TiltConfig {
    pub fn off() -> Self {
        TiltConfig {
            alpha: 0.0,
            beta: 0.0,
            enabled: false,
        }
    }

    fn drifts(&self) -> (f64, f64) {
        if self.enabled {
            (self.alpha, self.beta)
        } else {
            (0.0, 0.0)
        }
    }
}

/// `W1 = B1`, `W2 = rho B1 + sqrt(1 - rho^2) B2` at grid indices `0..=len`.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariatePath {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub log_weight: f64,
    /// Index of time 1; entries past it belong to the overhang extension.
    pub horizon_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuinOutcome {
    pub classical1: bool,
    pub classical2: bool,
    pub classical_joint: bool,
    pub parisian_joint: bool,
}

/// Window length `S / u^2` in grid steps, `None` when it does not fit the horizon.
pub fn window_steps(s: f64, u: f64, grid: &GridSpec) -> Option<usize> {
    let h = s / (u * u) / grid.dt();
    let h = (h - 1e-9).ceil().max(0.0) as usize;
    (h <= grid.n_steps).then_some(h)
}

fn normals(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
}

/// Simulates one path of `grid.n_steps + tail_steps` steps; the tilt acts on `[0, 1]` only.
pub fn sample_path(grid: &GridSpec, tail_steps: usize, rho: f64, tilt: &TiltConfig, rng: &mut ChaCha8Rng) -> BivariatePath {
    let n = grid.n_steps;
    let dt = grid.dt();
    let sd = dt.sqrt();
    let rc = (1.0 - rho * rho).sqrt();
    let (alpha, beta) = tilt.drifts();
    let total = n + tail_steps;
    let mut w1 = Vec::with_capacity(total + 1);
    let mut w2 = Vec::with_capacity(total + 1);
    w1.push(0.0);
    w2.push(0.0);
    let (mut b1, mut b2) = (0.0f64, 0.0f64);
    let mut end = (0.0, 0.0);
    for k in 1..=total {
        let (z1, z2) = normals(rng);
        if k <= n {
            b1 += alpha * dt + sd * z1;
            b2 += beta * dt + sd * z2;
        } else {
            b1 += sd * z1;
            b2 += sd * z2;
        }
        if k == n {
            end = (b1, b2);
        }
        w1.push(b1);
        w2.push(rho * b1 + rc * b2);
    }
    let log_weight = if tilt.enabled {
        -alpha * end.0 + 0.5 * alpha * alpha - beta * end.1 + 0.5 * beta * beta
    } else {
        0.0
    };
    BivariatePath {
        w1,
        w2,
        log_weight,
        horizon_index: n,
    }
}

pub fn detect_classical(path: &BivariatePath, u: f64, p: &ModelParams) -> RuinOutcome {
    let n = path.horizon_index;
    let dt = 1.0 / n as f64;
    let over = |w: &[f64], c: f64, b: f64| (0..=n).any(|k| w[k] - c * k as f64 * dt > b);
    let classical1 = over(&path.w1, p.c1, u);
    let classical2 = over(&path.w2, p.c2, p.a * u);
    RuinOutcome {
        classical1,
        classical2,
        classical_joint: classical1 && classical2,
        parisian_joint: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParisianDetection {
    pub parisian_joint: bool,
    /// A window did not fit the available path and the coordinate failed by construction.
    pub window_exceeds_path: bool,
}

/// Whether some run of at least `h + 1` over-barrier points starts at or before `last_start`.
fn has_run(w: &[f64], c: f64, barrier: f64, dt: f64, h: usize, last_start: usize) -> bool {
    let mut run = 0usize;
    for (k, &x) in w.iter().enumerate() {
        if x - c * k as f64 * dt > barrier {
            run += 1;
            if run > h && k + 1 - run <= last_start {
                return true;
            }
        } else {
            if k >= last_start {
                return false;
            }
            run = 0;
        }
    }
    false
}

/// Two-window Parisian ruin; windows are placed independently per coordinate.
pub fn detect_parisian(path: &BivariatePath, u: f64, p: &ModelParams) -> ParisianDetection {
    let n = path.horizon_index;
    let dt = 1.0 / n as f64;
    let avail = path.w1.len() - 1;
    let mut exceeds = false;
    let mut pass = |w: &[f64], c: f64, b: f64, s: f64| -> bool {
        let h = (s / (u * u) / dt - 1e-9).ceil().max(0.0) as usize;
        if h > avail {
            exceeds = true;
            return false;
        }
        has_run(w, c, b, dt, h, n.min(avail - h))
    };
    let p1 = pass(&path.w1, p.c1, u, p.s1);
    let p2 = pass(&path.w2, p.c2, p.a * u, p.s2);
    ParisianDetection {
        parisian_joint: p1 && p2,
        window_exceeds_path: exceeds,
    }
}

/// Constant drifts steering the paths to the limiting optimizer point.
///
/// `alpha` puts the tilted mean of `W1(s) - c1 s` at `u`, `beta` puts that of
/// `W2(t) - c2 t` at `a u`; a negative `beta` is replaced by 0.
pub fn default_tilt(p: &ModelParams, regime: &Regime, u: f64) -> Result<TiltConfig> {
    if !(u > 0.0) {
        return Err(Error::domain("u", u, "must be positive"));
    }
    let t_star = limiting_t_star(p, regime);
    let (s, t) = if regime.tag == RegimeTag::CaseV
        && quadratic_form(p, u, t_star, 1.0)? < quadratic_form(p, u, 1.0, t_star)?
    {
        (t_star, 1.0)
    } else {
        (1.0, t_star)
    };
    if !(s > 0.0 && t > 0.0) {
        return Err(Error::DegenerateTarget(format!("optimizer point ({s}, {t})")));
    }
    let alpha = (u + p.c1 * s) / s;
    let beta = (p.a * u + p.c2 * t - p.rho * alpha * t) / ((1.0 - p.rho * p.rho).sqrt() * t);
    Ok(TiltConfig {
        alpha,
        beta: beta.max(0.0),
        enabled: true,
    })
}

/// Weighted sums over classical-ruin paths, scaled by `exp(-shift)`.
#[derive(Debug, Clone, Copy)]
struct RatioAcc {
    n: u64,
    hits_c: u64,
    hits_p: u64,
    shift: f64,
    sc: f64,
    sp: f64,
    qc: f64,
    qp: f64,
}

impl RatioAcc {
    fn new() -> Self {
        RatioAcc {
            n: 0,
            hits_c: 0,
            hits_p: 0,
            shift: f64::NEG_INFINITY,
            sc: 0.0,
            sp: 0.0,
            qc: 0.0,
            qp: 0.0,
        }
    }

    fn rescale(&mut self, shift: f64) {
        if shift > self.shift {
            let f = (self.shift - shift).exp();
            self.sc *= f;
            self.sp *= f;
            self.qc *= f * f;
            self.qp *= f * f;
            self.shift = shift;
        }
    }

    fn push(&mut self, log_weight: f64, classical: bool, parisian: bool) {
        self.n += 1;
        if !classical {
            return;
        }
        self.rescale(log_weight);
        let w = (log_weight - self.shift).exp();
        self.hits_c += 1;
        self.sc += w;
        self.qc += w * w;
        if parisian {
            self.hits_p += 1;
            self.sp += w;
            self.qp += w * w;
        }
    }

    fn merge(mut self, mut other: RatioAcc) -> RatioAcc {
        let shift = self.shift.max(other.shift);
        if shift == f64::NEG_INFINITY {
            self.n += other.n;
            return self;
        }
        self.rescale(shift);
        other.rescale(shift);
        RatioAcc {
            n: self.n + other.n,
            hits_c: self.hits_c + other.hits_c,
            hits_p: self.hits_p + other.hits_p,
            shift,
            sc: self.sc + other.sc,
            sp: self.sp + other.sp,
            qc: self.qc + other.qc,
            qp: self.qp + other.qp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub grid: GridSpec,
    pub n_paths: u64,
    pub tilt: TiltConfig,
    pub seed: u64,
    pub workers: usize,
    pub windows: WindowMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_classical: f64,
    pub p_classical_stderr: f64,
    pub p_parisian: f64,
    pub p_parisian_stderr: f64,
    pub n_paths: u64,
    pub n_steps: usize,
    pub classical_hits: u64,
    pub parisian_hits: u64,
    pub warnings: Vec<String>,
}

struct Kernel {
    n: usize,
    total: usize,
    dt: f64,
    sd: f64,
    rho: f64,
    rc: f64,
    alpha: f64,
    beta: f64,
    tilted: bool,
    c1: f64,
    c2: f64,
    b1: f64,
    b2: f64,
    h1: Option<usize>,
    h2: Option<usize>,
}

impl Kernel {
    /// One path without storing it: classical flags on `[0, 1]` and windowed runs starting there.
    fn run(&self, rng: &mut ChaCha8Rng) -> (f64, bool, bool) {
        let (mut x1, mut x2) = (0.0f64, 0.0f64);
        let (mut c1, mut c2) = (false, false);
        let (mut pass1, mut pass2) = (false, false);
        let (mut run1, mut run2) = (0usize, 0usize);
        let (mut end1, mut end2) = (0.0, 0.0);
        let h1 = self.h1.unwrap_or(usize::MAX - 1);
        let h2 = self.h2.unwrap_or(usize::MAX - 1);
        for k in 1..=self.total {
            let (z1, z2) = normals(rng);
            if k <= self.n {
                x1 += self.alpha * self.dt + self.sd * z1;
                x2 += self.beta * self.dt + self.sd * z2;
                if k == self.n {
                    end1 = x1;
                    end2 = x2;
                }
            } else {
                if (run1 == 0 || pass1) && (run2 == 0 || pass2) {
                    break;
                }
                x1 += self.sd * z1;
                x2 += self.sd * z2;
            }
            let t = k as f64 * self.dt;
            let y1 = x1 - self.c1 * t > self.b1;
            let y2 = self.rho * x1 + self.rc * x2 - self.c2 * t > self.b2;
            if k <= self.n {
                c1 |= y1;
                c2 |= y2;
            }
            run1 = if y1 { run1 + 1 } else { 0 };
            run2 = if y2 { run2 + 1 } else { 0 };
            pass1 |= run1 > h1 && k + 1 - run1 <= self.n;
            pass2 |= run2 > h2 && k + 1 - run2 <= self.n;
        }
        let lw = if self.tilted {
            -self.alpha * end1 + 0.5 * self.alpha * self.alpha - self.beta * end2 + 0.5 * self.beta * self.beta
        } else {
            0.0
        };
        let classical = c1 && c2;
        (lw, classical, classical && pass1 && pass2)
    }
}

/// Estimates `P(Parisian ruin | classical ruin)` from one set of shared paths.
pub fn estimate_conditional_ratio(p: &ModelParams, u: f64, cfg: &RatioConfig) -> Result<RatioEstimate> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::domain("u", u, "must be positive and finite"));
    }
    if cfg.n_paths < 10_000 {
        return Err(Error::domain("n_paths", cfg.n_paths as f64, "need at least 10^4 paths"));
    }
    let grid = cfg.grid;
    let n = grid.n_steps;
    let mut warnings = Vec::new();
    let raw = |s: f64| (s / (u * u) / grid.dt() - 1e-9).ceil().max(0.0) as usize;
    let (r1, r2) = (raw(p.s1), raw(p.s2));
    let (h1, h2, tail) = match cfg.windows {
        WindowMode::Inside => {
            let fit = |h: usize| (h <= n).then_some(h);
            (fit(r1), fit(r2), 0)
        }
        WindowMode::Overhang => (Some(r1), Some(r2), r1.max(r2)),
    };
    if h1.is_none() || h2.is_none() {
        warnings.push(format!("u={u}: a Parisian window is longer than the horizon; Parisian ruin is impossible"));
    }
    for (s, h) in [(p.s1, r1), (p.s2, r2)] {
        if s > 0.0 && h < 8 {
            warnings.push(format!("u={u}: window of {h} steps is under-resolved"));
        }
    }
    let (alpha, beta) = cfg.tilt.drifts();
    let kernel = Kernel {
        n,
        total: n + tail,
        dt: grid.dt(),
        sd: grid.dt().sqrt(),
        rho: p.rho,
        rc: (1.0 - p.rho * p.rho).sqrt(),
        alpha,
        beta,
        tilted: cfg.tilt.enabled,
        c1: p.c1,
        c2: p.c2,
        b1: u,
        b2: p.a * u,
        h1,
        h2,
    };
    let streams = Streams::new(cfg.seed);
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let parts: Vec<RatioAcc> = with_workers(cfg.workers, || {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = RatioAcc::new();
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(cfg.n_paths);
                for i in lo..hi {
                    let mut rng = streams.stream(i);
                    let (lw, classical, parisian) = kernel.run(&mut rng);
                    acc.push(lw, classical, parisian);
                }
                acc
            })
            .collect()
    });
    let acc = parts.into_iter().fold(RatioAcc::new(), RatioAcc::merge);
    finish(acc, u, n, warnings)
}

fn finish(acc: RatioAcc, u: f64, n_steps: usize, warnings: Vec<String>) -> Result<RatioEstimate> {
    if acc.hits_c == 0 {
        return Err(Error::InsufficientSamples { u, n_paths: acc.n });
    }
    if !(acc.sc > 0.0) {
        return Err(Error::Underflow { u });
    }
    let nf = acc.n as f64;
    let ratio = (acc.sp / acc.sc).clamp(0.0, 1.0);
    let resid = (acc.qp * (1.0 - 2.0 * ratio) + ratio * ratio * acc.qc).max(0.0);
    let ratio_stderr = (resid * nf / (nf - 1.0)).sqrt() / acc.sc;
    let scale = acc.shift.exp();
    let prob = |s: f64, q: f64| -> (f64, f64) {
        let m = s / nf;
        let var = ((q / nf - m * m) * nf / (nf - 1.0)).max(0.0) / nf;
        (m * scale, var.sqrt() * scale)
    };
    let (p_classical, p_classical_stderr) = prob(acc.sc, acc.qc);
    let (p_parisian, p_parisian_stderr) = prob(acc.sp, acc.qp);
    if !(p_classical > 0.0 && p_classical.is_finite()) {
        return Err(Error::Underflow { u });
    }
    Ok(RatioEstimate {
        ratio,
        ratio_stderr,
        ci_low: (ratio - Z95 * ratio_stderr).max(0.0),
        ci_high: (ratio + Z95 * ratio_stderr).min(1.0),
        p_classical,
        p_classical_stderr,
        p_parisian,
        p_parisian_stderr,
        n_paths: acc.n,
        n_steps,
        classical_hits: acc.hits_c,
        parisian_hits: acc.hits_p,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Single-portfolio ruin on a grid of `n_steps` and on every second point of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleRuinEstimate {
    pub fine: Estimate,
    pub coarse: Estimate,
    pub n_steps: usize,
    pub n_paths: u64,
    /// Normals drawn per path on average.
    pub normals_per_path: f64,
}

impl SingleRuinEstimate {
    /// Two-level extrapolation assuming the grid bias scales like `sqrt(dt)`.
    pub fn extrapolated(&self) -> f64 {
        let r = std::f64::consts::SQRT_2;
        (r * self.fine.value - self.coarse.value) / (r - 1.0)
    }
}

/// Bridge pruning threshold: segments whose continuous crossing probability
/// is below `exp(-PRUNE)` are not refined.
const PRUNE: f64 = 40.0;
const COARSE_LEVEL: u32 = 8;

struct Refiner<'a> {
    u: f64,
    max_level: u32,
    hit_fine: bool,
    hit_coarse: bool,
    drawn: u64,
    rng: &'a mut ChaCha8Rng,
}

impl Refiner<'_> {
    /// Refines the segment `[xa, xb]` of length `2^-level` by dyadic Brownian-bridge midpoints.
    fn refine(&mut self, xa: f64, xb: f64, level: u32) {
        let limit = if self.hit_fine { self.max_level - 1 } else { self.max_level };
        if self.hit_coarse || level >= limit {
            return;
        }
        let len = (-(level as f64)).exp2();
        if 2.0 * (self.u - xa) * (self.u - xb) > PRUNE * len {
            return;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        self.drawn += 1;
        let mid = 0.5 * (xa + xb) + 0.5 * len.sqrt() * z;
        if mid > self.u {
            self.hit_fine = true;
            if level + 1 < self.max_level {
                self.hit_coarse = true;
                return;
            }
        }
        self.refine(xa, mid, level + 1);
        self.refine(mid, xb, level + 1);
    }
}

/// Monte Carlo estimate of `P(max_k W(t_k) - c t_k > u)` on a dyadic grid.
///
/// Paths are drawn on 256 steps and refined by Brownian-bridge midpoints
/// only where the bridge can still reach the barrier (crossing probability
/// above `e^-40`), so the law on the full grid is reproduced exactly up to
/// that threshold. Tilting shifts the drift to `u + c`.
pub fn estimate_single_ruin(c: f64, u: f64, n_steps: usize, n_paths: u64, tilt: bool, seed: u64, workers: usize) -> Result<SingleRuinEstimate> {
    if !(n_steps.is_power_of_two() && n_steps >= 2 * (1 << COARSE_LEVEL)) {
        return Err(Error::domain("n_steps", n_steps as f64, "must be a power of two >= 512"));
    }
    if !(u > 0.0) {
        return Err(Error::domain("u", u, "must be positive"));
    }
    if n_paths < 2 {
        return Err(Error::domain("n_paths", n_paths as f64, "need at least 2 paths"));
    }
    let max_level = n_steps.trailing_zeros();
    let alpha = if tilt { u + c } else { 0.0 };
    let streams = Streams::new(seed);
    let n_chunks = n_paths.div_ceil(CHUNK);
    let coarse_n = 1usize << COARSE_LEVEL;
    let coarse_dt = 1.0 / coarse_n as f64;
    let parts: Vec<[f64; 5]> = with_workers(workers, || {
        (0..n_chunks)
            .into_par_iter()
            .map(|ch| {
                let mut s = [0.0f64; 5];
                let mut xs = vec![0.0f64; coarse_n + 1];
                let lo = ch * CHUNK;
                let hi = (lo + CHUNK).min(n_paths);
                for i in lo..hi {
                    let mut rng = streams.stream(i);
                    let mut x = 0.0;
                    let mut hit = false;
                    for slot in xs.iter_mut().skip(1) {
                        let z: f64 = rng.sample(StandardNormal);
                        x += (alpha - c) * coarse_dt + coarse_dt.sqrt() * z;
                        *slot = x;
                        hit |= x > u;
                    }
                    let w1 = x + c;
                    let lw = -alpha * w1 + 0.5 * alpha * alpha;
                    let mut r = Refiner {
                        u,
                        max_level,
                        hit_fine: hit,
                        hit_coarse: hit,
                        drawn: coarse_n as u64,
                        rng: &mut rng,
                    };
                    for k in 0..coarse_n {
                        if r.hit_coarse {
                            break;
                        }
                        r.refine(xs[k], xs[k + 1], COARSE_LEVEL);
                    }
                    let w = lw.exp();
                    if r.hit_fine {
                        s[0] += w;
                        s[1] += w * w;
                    }
                    if r.hit_coarse {
                        s[2] += w;
                        s[3] += w * w;
                    }
                    s[4] += r.drawn as f64;
                }
                s
            })
            .collect()
    });
    let mut s = [0.0f64; 5];
    for part in parts {
        for j in 0..5 {
            s[j] += part[j];
        }
    }
    let nf = n_paths as f64;
    let est = |sum: f64, sq: f64| {
        let m = sum / nf;
        Estimate {
            value: m,
            stderr: ((sq / nf - m * m).max(0.0) / (nf - 1.0)).sqrt(),
        }
    };
    Ok(SingleRuinEstimate {
        fine: est(s[0], s[1]),
        coarse: est(s[2], s[3]),
        n_steps,
        n_paths,
        normals_per_path: s[4] / nf,
    })
}
