//! Monte Carlo estimation of the Pickands-type constants `C_P`, `P`, `H`
//! and `R` through sup-inf functionals of drifted Brownian motion.
//!
//! Every estimator simulates on a grid of step `delta` and, by default,
//! combines it per sample with the same path read on the `4 delta`
//! subgrid (`2 f(delta) - f(4 delta)`), cancelling the leading `sqrt(delta)`
//! grid bias of the supremum.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{with_workers, Streams};

const CHUNK: u64 = 256;
const MAX_LEVELS: usize = 8;
const LEVEL_STREAM_STRIDE: u64 = 1 << 40;

/// Identifies a constant and its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ConstantKey {
    P { w1: f64, w2: f64, s: f64 },
    H { w1: f64, w2: f64, s: f64 },
    R { s1: f64, s2: f64, a: f64, rho: f64, lambda1: f64, lambda2: f64 },
    Cp { s: f64 },
}

impl ConstantKey {
    pub fn name(&self) -> &'static str {
        match self {
            ConstantKey::P { .. } => "P",
            ConstantKey::H { .. } => "H",
            ConstantKey::R { .. } => "R",
            ConstantKey::Cp { .. } => "C_P",
        }
    }

    /// Stable text form used for caching.
    pub fn cache_key(&self) -> String {
        match *self {
            ConstantKey::P { w1, w2, s } => format!("P(w1={w1:e},w2={w2:e},S={s:e})"),
            ConstantKey::H { w1, w2, s } => format!("H(w1={w1:e},w2={w2:e},S={s:e})"),
            ConstantKey::R { s1, s2, a, rho, lambda1, lambda2 } => format!(
                "R(S1={s1:e},S2={s2:e},a={a:e},rho={rho:e},l1={lambda1:e},l2={lambda2:e})"
            ),
            ConstantKey::Cp { s } => format!("C_P(S={s:e})"),
        }
    }

    /// Closed form where one exists (zero windows), `None` otherwise.
    pub fn exact_value(&self) -> Result<Option<f64>> {
        self.validate()?;
        Ok(match *self {
            ConstantKey::P { w1, w2, s } if s == 0.0 => Some(p_zero(w1, w2)),
            ConstantKey::H { w1, w2, s } if s == 0.0 && w2 == 2.0 * w1 => Some(w1),
            ConstantKey::Cp { s } if s == 0.0 => Some(2.0),
            ConstantKey::R { s1, s2, a, rho, lambda1, lambda2 } if s1 == 0.0 && s2 == 0.0 && rho == 0.0 => {
                if lambda1 < 2.0 && lambda2 < 2.0 * a {
                    Some(p_zero(1.0, lambda1) * p_zero(a, lambda2))
                } else {
                    None
                }
            }
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let window = |s: f64| -> Result<()> {
            if s >= 0.0 && s.is_finite() {
                Ok(())
            } else {
                Err(Error::domain("S", s, "window must be finite and >= 0"))
            }
        };
        match *self {
            ConstantKey::P { w1, w2, s } => {
                window(s)?;
                if !(w1 > 0.0 && w1.is_finite()) {
                    return Err(Error::domain("w1", w1, "drift must be positive"));
                }
                if !(w2 > 0.0) {
                    return Err(Error::domain("w2", w2, "weight must be positive"));
                }
                if w2 >= 2.0 * w1 {
                    return Err(Error::Divergent(format!("P({w1}, {w2}, {s}) needs w2 < 2 w1")));
                }
            }
            ConstantKey::H { w1, w2, s } => {
                window(s)?;
                if !(w1 > 0.0 && w1.is_finite()) {
                    return Err(Error::domain("w1", w1, "drift must be positive"));
                }
                if !(w2 > 0.0 && w2.is_finite()) {
                    return Err(Error::domain("w2", w2, "weight must be positive"));
                }
            }
            ConstantKey::R { s1, s2, a, rho, lambda1, lambda2 } => {
                window(s1)?;
                window(s2)?;
                if !(rho > -1.0 && rho < 1.0) {
                    return Err(Error::domain("rho", rho, "must lie strictly inside (-1, 1)"));
                }
                if !(a > rho.max(0.0) && a.is_finite()) {
                    return Err(Error::domain("a", a, "R needs a > max(0, rho)"));
                }
                if !(lambda1 > 0.0 && lambda2 > 0.0) {
                    return Err(Error::domain("lambda", lambda1.min(lambda2), "tilts must be positive"));
                }
            }
            ConstantKey::Cp { s } => window(s)?,
        }
        Ok(())
    }
}

/// `P(w1, w2, 0) = 2 w1 / (w2 (2 w1 - w2))`: the supremum of `B(t) - w1 t` is exponential with rate `2 w1`.
fn p_zero(w1: f64, w2: f64) -> f64 {
    2.0 * w1 / (w2 * (2.0 * w1 - w2))
}

/// Truncation and resolution settings for one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Horizon ladder (`T_max` for P, R, C_P; `Delta` for H) in the
    /// constant's natural time unit, where its drift is 1.
    pub levels: Vec<f64>,
    /// Grid step in natural units; `None` selects `clamp(S/32, 1/4096, 1/256)`.
    pub delta: Option<f64>,
    pub n_samples: u64,
    pub seed: u64,
    pub workers: usize,
    pub extrapolate: bool,
    pub use_exact: bool,
}

impl Schedule {
    pub fn horizon(n_samples: u64, seed: u64) -> Self {
        Schedule {
            levels: vec![8.0, 16.0, 32.0],
            delta: None,
            n_samples,
            seed,
            workers: 0,
            extrapolate: true,
            use_exact: true,
        }
    }

    pub fn window_ladder(n_samples: u64, seed: u64) -> Self {
        Schedule {
            levels: vec![16.0, 32.0, 64.0],
            ..Schedule::horizon(n_samples, seed)
        }
    }

    pub fn default_for(key: &ConstantKey, n_samples: u64, seed: u64) -> Self {
        match key {
            ConstantKey::H { .. } => Schedule::window_ladder(n_samples, seed),
            _ => Schedule::horizon(n_samples, seed),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.len() > MAX_LEVELS {
            return Err(Error::Config(format!("ladder needs 1..={MAX_LEVELS} levels")));
        }
        if !self.levels.windows(2).all(|w| w[0] < w[1]) || !(self.levels[0] > 0.0) {
            return Err(Error::Config("ladder levels must be positive and strictly increasing".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 0.5) {
                return Err(Error::domain("delta", d, "grid step must lie in (0, 0.5]"));
            }
        }
        if self.n_samples < 2 {
            return Err(Error::domain("n_samples", self.n_samples as f64, "need at least 2 samples"));
        }
        Ok(())
    }
}

/// Natural-unit grid step: at least 32 points per window, between 1/4096 and 1/256,
/// adjusted so the window is a whole multiple of four steps.
fn natural_delta(s: f64, requested: Option<f64>) -> f64 {
    let d = match requested {
        Some(d) => d,
        None if s > 0.0 => (s / 32.0).clamp(1.0 / 4096.0, 1.0 / 256.0),
        None => 1.0 / 256.0,
    };
    if s > 0.0 {
        s / (4.0 * (s / (4.0 * d) - 1e-9).ceil())
    } else {
        d
    }
}

fn window_steps(s: f64, delta: f64) -> usize {
    4 * (s / (4.0 * delta)).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelValue {
    pub level: f64,
    pub value: f64,
    pub stderr: f64,
    pub raw_value: f64,
    pub raw_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub key: ConstantKey,
    pub value: f64,
    pub stderr: f64,
    pub exact: bool,
    /// Ladder in natural units.
    pub schedule: Vec<f64>,
    /// Grid step in natural units.
    pub delta: f64,
    pub n_samples: u64,
    pub levels: Vec<LevelValue>,
    pub warnings: Vec<String>,
}

impl ConstantEstimate {
    fn exact(key: ConstantKey, value: f64) -> Self {
        ConstantEstimate {
            key,
            value,
            stderr: 0.0,
            exact: true,
            schedule: Vec::new(),
            delta: 0.0,
            n_samples: 0,
            levels: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn valued(&self) -> crate::analytics::Valued {
        crate::analytics::Valued {
            value: self.value,
            stderr: self.stderr,
        }
    }
}

/// Running maximum over window starts of the windowed minimum.
///
/// Works on the strided sequence `y[0], y[stride], ...` with windows of
/// `h + 1` strided points; `out[k]` is the value over starts whose fine
/// index does not exceed `cutoffs[k]`.
fn sup_inf(y: &[f64], stride: usize, h: usize, cutoffs: &[usize], out: &mut [f64], deque: &mut VecDeque<usize>) {
    deque.clear();
    let last = cutoffs[cutoffs.len() - 1] / stride + h;
    let mut best = f64::NEG_INFINITY;
    let mut level = 0;
    for k in 0..=last {
        let v = y[k * stride];
        while deque.back().is_some_and(|&b| y[b * stride] >= v) {
            deque.pop_back();
        }
        deque.push_back(k);
        if k >= h {
            let start = k - h;
            while deque.front().is_some_and(|&f| f < start) {
                deque.pop_front();
            }
            while level < cutoffs.len() && start * stride > cutoffs[level] {
                out[level] = best;
                level += 1;
            }
            best = best.max(y[deque[0] * stride]);
        }
    }
    while level < cutoffs.len() {
        out[level] = best;
        level += 1;
    }
}

/// Per-sample functional of a simulated path: fine and `4 delta` values per level.
trait Functional: Sync {
    fn levels(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng, scratch: &mut Scratch, fine: &mut [f64], coarse: &mut [f64]);
}

#[derive(Default)]
struct Scratch {
    y: Vec<f64>,
    z: Vec<f64>,
    deque: VecDeque<usize>,
    tmp: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LadderAcc {
    n: u64,
    raw: [f64; MAX_LEVELS],
    raw_sq: [f64; MAX_LEVELS],
    ext: [f64; MAX_LEVELS],
    ext_sq: [f64; MAX_LEVELS],
    diff: f64,
    diff_sq: f64,
}

impl LadderAcc {
    fn new() -> Self {
        LadderAcc {
            n: 0,
            raw: [0.0; MAX_LEVELS],
            raw_sq: [0.0; MAX_LEVELS],
            ext: [0.0; MAX_LEVELS],
            ext_sq: [0.0; MAX_LEVELS],
            diff: 0.0,
            diff_sq: 0.0,
        }
    }

    fn merge(mut self, o: LadderAcc) -> LadderAcc {
        self.n += o.n;
        for k in 0..MAX_LEVELS {
            self.raw[k] += o.raw[k];
            self.raw_sq[k] += o.raw_sq[k];
            self.ext[k] += o.ext[k];
            self.ext_sq[k] += o.ext_sq[k];
        }
        self.diff += o.diff;
        self.diff_sq += o.diff_sq;
        self
    }
}

fn mean_se(sum: f64, sq: f64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let m = sum / nf;
    let var = ((sq / nf - m * m) * nf / (nf - 1.0)).max(0.0);
    (m, (var / nf).sqrt())
}

/// Runs a functional over `n_samples` streams and summarizes each level.
fn run_ladder<F: Functional>(f: &F, sched: &Schedule, stream_offset: u64) -> (Vec<LevelValue>, (f64, f64)) {
    let nl = f.levels();
    let streams = Streams::new(sched.seed);
    let n_chunks = sched.n_samples.div_ceil(CHUNK);
    let extrapolate = sched.extrapolate;
    let parts: Vec<LadderAcc> = with_workers(sched.workers, || {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = LadderAcc::new();
                let mut scratch = Scratch::default();
                let mut fine = [0.0; MAX_LEVELS];
                let mut coarse = [0.0; MAX_LEVELS];
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(sched.n_samples);
                for i in lo..hi {
                    let mut rng = streams.stream(stream_offset + i);
                    f.sample(&mut rng, &mut scratch, &mut fine[..nl], &mut coarse[..nl]);
                    acc.n += 1;
                    let mut last = [0.0; 2];
                    for k in 0..nl {
                        let e = if extrapolate { 2.0 * fine[k] - coarse[k] } else { fine[k] };
                        acc.raw[k] += fine[k];
                        acc.raw_sq[k] += fine[k] * fine[k];
                        acc.ext[k] += e;
                        acc.ext_sq[k] += e * e;
                        last = [last[1], e];
                    }
                    let d = last[1] - last[0];
                    acc.diff += d;
                    acc.diff_sq += d * d;
                }
                acc
            })
            .collect()
    });
    let acc = parts.into_iter().fold(LadderAcc::new(), LadderAcc::merge);
    let levels = (0..nl)
        .map(|k| {
            let (value, stderr) = mean_se(acc.ext[k], acc.ext_sq[k], acc.n);
            let (raw_value, raw_stderr) = mean_se(acc.raw[k], acc.raw_sq[k], acc.n);
            LevelValue {
                level: 0.0,
                value,
                stderr,
                raw_value,
                raw_stderr,
            }
        })
        .collect();
    (levels, mean_se(acc.diff, acc.diff_sq, acc.n))
}

fn plateau_warning(name: &str, prev: f64, last: f64, diff_se: f64) -> Option<String> {
    let diff = last - prev;
    let rel = diff.abs() / last.abs();
    (diff.abs() > 2.0 * diff_se && rel > 0.05).then(|| {
        format!("{name}: ladder has not settled; last two levels differ by {:.1}% ({:.1} stderr)", 100.0 * rel, diff.abs() / diff_se.max(f64::MIN_POSITIVE))
    })
}

fn positivity_warning(name: &str, value: f64, stderr: f64) -> Option<String> {
    (value - 1.96 * stderr <= 0.0).then(|| format!("{name}: confidence interval does not exclude zero"))
}

/// Horizon cutoffs (max window start, fine index) for a ladder in simulation units.
fn cutoffs(levels: &[f64], scale: f64, delta: f64) -> Vec<usize> {
    levels.iter().map(|&t| (t * scale / delta).round() as usize).collect()
}

fn fill_normals(rng: &mut ChaCha8Rng, z: &mut Vec<f64>, n: usize) {
    z.clear();
    z.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
}

/// Sup-inf of `B(t) - w t` with windows of `h` steps starting at or before each cutoff.
struct DriftedSupInf {
    w: f64,
    weight: f64,
    delta: f64,
    h: usize,
    cut: Vec<usize>,
}

impl Functional for DriftedSupInf {
    fn levels(&self) -> usize {
        self.cut.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, sc: &mut Scratch, fine: &mut [f64], coarse: &mut [f64]) {
        let n = self.cut[self.cut.len() - 1] + self.h;
        let sd = self.delta.sqrt();
        let drift = self.w * self.delta;
        sc.y.clear();
        sc.y.push(0.0);
        let mut x = 0.0;
        for _ in 0..n {
            x += sd * rng.sample::<f64, _>(StandardNormal) - drift;
            sc.y.push(x);
        }
        sup_inf(&sc.y, 1, self.h, &self.cut, fine, &mut sc.deque);
        sup_inf(&sc.y, 4, self.h / 4, &self.cut, coarse, &mut sc.deque);
        for v in fine.iter_mut().chain(coarse.iter_mut()) {
            *v = (self.weight * *v).exp() / self.weight;
        }
    }
}

pub fn estimate_p(w1: f64, w2: f64, s: f64, sched: &Schedule) -> Result<ConstantEstimate> {
    let key = ConstantKey::P { w1, w2, s };
    key.validate()?;
    sched.validate()?;
    if sched.use_exact {
        if let Some(v) = key.exact_value()? {
            return Ok(ConstantEstimate::exact(key, v));
        }
    }
    let nat = natural_delta(s * w1 * w1, sched.delta);
    let delta = nat / (w1 * w1);
    let h = window_steps(s, delta);
    let f = DriftedSupInf {
        w: w1,
        weight: w2,
        delta,
        h,
        cut: cutoffs(&sched.levels, 1.0 / (w1 * w1), delta),
    };
    let (levels, diff) = run_ladder(&f, sched, 0);
    Ok(assemble_horizon(key, sched, nat, levels, diff))
}

fn assemble_horizon(key: ConstantKey, sched: &Schedule, delta: f64, mut levels: Vec<LevelValue>, diff: (f64, f64)) -> ConstantEstimate {
    for (l, &t) in levels.iter_mut().zip(&sched.levels) {
        l.level = t;
    }
    let last = *levels.last().expect("non-empty ladder");
    let mut warnings = Vec::new();
    if levels.len() >= 2 {
        let prev = levels[levels.len() - 2].value;
        warnings.extend(plateau_warning(&key.cache_key(), prev, last.value, diff.1));
    }
    warnings.extend(positivity_warning(&key.cache_key(), last.value, last.stderr));
    ConstantEstimate {
        key,
        value: last.value,
        stderr: last.stderr,
        exact: false,
        schedule: sched.levels.clone(),
        delta,
        n_samples: sched.n_samples,
        levels,
        warnings,
    }
}

/// Windowed functional of `B - w t` over starts in `[0, Delta]`, sampled
/// under a mixture of drift changes that end at a uniformly chosen grid point.
///
/// With `exp(2 w Y_i)` the likelihood ratio of the component ending at
/// point `i`, the estimator `(N + 1) exp(2 w X) / sum_i exp(2 w Y_i)` is
/// unbiased for `E exp(2 w X)` and bounded by `N + 1`.
struct MixtureWindow {
    w: f64,
    weight: f64,
    delta: f64,
    h: usize,
    n: usize,
    mixture: bool,
}

impl Functional for MixtureWindow {
    fn levels(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut ChaCha8Rng, sc: &mut Scratch, fine: &mut [f64], coarse: &mut [f64]) {
        let target = if self.mixture { rng.random_range(0..=self.n) } else { 0 };
        let total = self.n + self.h;
        let sd = self.delta.sqrt();
        sc.y.clear();
        sc.y.push(0.0);
        let mut x = 0.0;
        for k in 1..=total {
            let z: f64 = rng.sample(StandardNormal);
            let tilt = if k <= target { 2.0 * self.w } else { 0.0 };
            x += sd * z + (tilt - self.w) * self.delta;
            sc.y.push(x);
        }
        let cut = [self.n];
        sup_inf(&sc.y, 1, self.h, &cut, &mut fine[..1], &mut sc.deque);
        sup_inf(&sc.y, 4, self.h / 4, &cut, &mut coarse[..1], &mut sc.deque);
        let span = self.n as f64 * self.delta;
        if self.mixture {
            let ys = &sc.y[..=self.n];
            let m = ys.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = 2.0 * self.w * m + ys.iter().map(|&v| (2.0 * self.w * (v - m)).exp()).sum::<f64>().ln();
            let k = (self.n + 1) as f64 / (span * self.weight);
            fine[0] = k * (self.weight * fine[0] - lse).exp();
            coarse[0] = k * (self.weight * coarse[0] - lse).exp();
        } else {
            fine[0] = (self.weight * fine[0]).exp() / (span * self.weight);
            coarse[0] = (self.weight * coarse[0]).exp() / (span * self.weight);
        }
    }
}

/// `H(w1, w2, S)`; `allow_general_weight` permits `w2 != 2 w1` with a plain (high-variance) estimator.
pub fn estimate_h(w1: f64, w2: f64, s: f64, sched: &Schedule, allow_general_weight: bool) -> Result<ConstantEstimate> {
    let key = ConstantKey::H { w1, w2, s };
    key.validate()?;
    sched.validate()?;
    let paired = (w2 - 2.0 * w1).abs() <= 1e-12 * w1;
    if !paired && !allow_general_weight {
        return Err(Error::domain("w2", w2, "H is defined here for w2 = 2 w1; pass the override to estimate other weights"));
    }
    if sched.use_exact && paired && s == 0.0 {
        return Ok(ConstantEstimate::exact(key, w1));
    }
    let nat = natural_delta(s * w1 * w1, sched.delta);
    let delta = nat / (w1 * w1);
    let h = window_steps(s, delta);
    let mut levels = Vec::with_capacity(sched.levels.len());
    let mut warnings = Vec::new();
    if !paired {
        warnings.push(format!("{}: w2 != 2 w1 uses the plain estimator; expect a heavy-tailed error", key.cache_key()));
    }
    for (j, &d) in sched.levels.iter().enumerate() {
        let n = 4 * ((d / (w1 * w1) / delta / 4.0).round() as usize).max(1);
        let f = MixtureWindow {
            w: w1,
            weight: w2,
            delta,
            h,
            n,
            mixture: paired,
        };
        let (mut lv, _) = run_ladder(&f, sched, j as u64 * LEVEL_STREAM_STRIDE);
        lv[0].level = d;
        levels.push(lv[0]);
    }
    let (value, stderr) = intercept_in_inverse(&levels);
    if levels.len() >= 2 {
        let (a, b) = (levels[levels.len() - 2], levels[levels.len() - 1]);
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        warnings.extend(plateau_warning(&key.cache_key(), a.value, b.value, se));
    }
    warnings.extend(positivity_warning(&key.cache_key(), value, stderr));
    Ok(ConstantEstimate {
        key,
        value,
        stderr,
        exact: false,
        schedule: sched.levels.clone(),
        delta: nat,
        n_samples: sched.n_samples,
        levels,
        warnings,
    })
}

/// Intercept of a least-squares line through the last three levels against `1 / level`.
fn intercept_in_inverse(levels: &[LevelValue]) -> (f64, f64) {
    let tail = &levels[levels.len().saturating_sub(3)..];
    if tail.len() < 2 {
        return (tail[0].value, tail[0].stderr);
    }
    let xs: Vec<f64> = tail.iter().map(|l| 1.0 / l.level).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    // intercept = sum_k c_k v_k
    let coef: Vec<f64> = xs.iter().map(|x| 1.0 / n - xbar * (x - xbar) / sxx).collect();
    let value = coef.iter().zip(tail).map(|(c, l)| c * l.value).sum();
    let var: f64 = coef.iter().zip(tail).map(|(c, l)| (c * l.stderr).powi(2)).sum();
    (value, var.sqrt())
}

/// Joint sup-inf functionals of `W1(s) - s` and `W2(t) - a t` on correlated paths.
struct JointSupInf {
    a: f64,
    rho: f64,
    lambda1: f64,
    lambda2: f64,
    delta: f64,
    h1: usize,
    h2: usize,
    cut: Vec<usize>,
}

impl Functional for JointSupInf {
    fn levels(&self) -> usize {
        self.cut.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, sc: &mut Scratch, fine: &mut [f64], coarse: &mut [f64]) {
        let n = self.cut[self.cut.len() - 1] + self.h1.max(self.h2);
        let sd = self.delta.sqrt();
        let rc = (1.0 - self.rho * self.rho).sqrt();
        sc.y.clear();
        sc.z.clear();
        sc.y.push(0.0);
        sc.z.push(0.0);
        let (mut b1, mut b2) = (0.0f64, 0.0f64);
        for k in 1..=n {
            b1 += sd * rng.sample::<f64, _>(StandardNormal);
            b2 += sd * rng.sample::<f64, _>(StandardNormal);
            let t = k as f64 * self.delta;
            sc.y.push(b1 - t);
            sc.z.push(self.rho * b1 + rc * b2 - self.a * t);
        }
        let nl = self.cut.len();
        let mut x = [0.0; MAX_LEVELS];
        let mut y = [0.0; MAX_LEVELS];
        let norm = self.lambda1 * self.lambda2;
        for (stride, out) in [(1usize, &mut *fine), (4, &mut *coarse)] {
            sup_inf(&sc.y, stride, self.h1 / stride, &self.cut, &mut x[..nl], &mut sc.deque);
            sup_inf(&sc.z, stride, self.h2 / stride, &self.cut, &mut y[..nl], &mut sc.deque);
            for k in 0..nl {
                out[k] = (self.lambda1 * x[k] + self.lambda2 * y[k]).exp() / norm;
            }
        }
    }
}

pub fn estimate_r(s1: f64, s2: f64, a: f64, rho: f64, lambda1: f64, lambda2: f64, sched: &Schedule) -> Result<ConstantEstimate> {
    let key = ConstantKey::R { s1, s2, a, rho, lambda1, lambda2 };
    key.validate()?;
    sched.validate()?;
    if sched.use_exact {
        if let Some(v) = key.exact_value()? {
            return Ok(ConstantEstimate::exact(key, v));
        }
    }
    let smin = [s1, s2].into_iter().filter(|&s| s > 0.0).fold(f64::INFINITY, f64::min);
    let delta = natural_delta(if smin.is_finite() { smin } else { 0.0 }, sched.delta);
    let f = JointSupInf {
        a,
        rho,
        lambda1,
        lambda2,
        delta,
        h1: window_steps(s1, delta),
        h2: window_steps(s2, delta),
        cut: cutoffs(&sched.levels, 1.0 / (a * a).min(1.0), delta),
    };
    let (levels, diff) = run_ladder(&f, sched, 0);
    Ok(assemble_horizon(key, sched, delta, levels, diff))
}

/// `C_P`: windows of length `S` ending at `e >= 0` over the two-sided path
/// `B(tau) - tau 1(tau > 0)`, time measured so the drift is 1.
struct TwoSidedWindow {
    delta: f64,
    h: usize,
    cut: Vec<usize>,
}

impl Functional for TwoSidedWindow {
    fn levels(&self) -> usize {
        self.cut.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, sc: &mut Scratch, fine: &mut [f64], coarse: &mut [f64]) {
        let n = self.cut[self.cut.len() - 1];
        let sd = self.delta.sqrt();
        // forward part first so paths for different windows share their draws
        fill_normals(rng, &mut sc.z, n);
        fill_normals(rng, &mut sc.tmp, self.h);
        sc.y.clear();
        sc.y.resize(n + self.h + 1, 0.0);
        let mut x = 0.0;
        for k in 1..=self.h {
            x += sd * sc.tmp[k - 1];
            sc.y[self.h - k] = x;
        }
        x = 0.0;
        for k in 1..=n {
            x += sd * sc.z[k - 1] - self.delta;
            sc.y[self.h + k] = x;
        }
        sup_inf(&sc.y, 1, self.h, &self.cut, fine, &mut sc.deque);
        sup_inf(&sc.y, 4, self.h / 4, &self.cut, coarse, &mut sc.deque);
        for v in fine.iter_mut().chain(coarse.iter_mut()) {
            *v = v.exp();
        }
    }
}

/// `C_P(S)` with the window given as `S` in the units where the inner drift is 2 and the noise `sqrt(2) B`.
pub fn estimate_cp(s: f64, sched: &Schedule) -> Result<ConstantEstimate> {
    let key = ConstantKey::Cp { s };
    key.validate()?;
    sched.validate()?;
    if sched.use_exact && s == 0.0 {
        return Ok(ConstantEstimate::exact(key, 2.0));
    }
    // sqrt(2) B(v) - 2 v with v = tau / 2 is B(tau) - tau; the window S/2 in v is S in tau
    let delta = natural_delta(s, sched.delta);
    let f = TwoSidedWindow {
        delta,
        h: window_steps(s, delta),
        cut: cutoffs(&sched.levels, 1.0, delta),
    };
    let (levels, diff) = run_ladder(&f, sched, 0);
    Ok(assemble_horizon(key, sched, delta, levels, diff))
}

pub fn estimate(key: &ConstantKey, sched: &Schedule) -> Result<ConstantEstimate> {
    match *key {
        ConstantKey::P { w1, w2, s } => estimate_p(w1, w2, s, sched),
        ConstantKey::H { w1, w2, s } => estimate_h(w1, w2, s, sched, false),
        ConstantKey::R { s1, s2, a, rho, lambda1, lambda2 } => estimate_r(s1, s2, a, rho, lambda1, lambda2, sched),
        ConstantKey::Cp { s } => estimate_cp(s, sched),
    }
}

/// Raw samples of the sup-inf functional of `B(t) - w t` (windows `S`, starts in `[0, T]`).
pub fn sample_sup_inf(w: f64, s: f64, horizon: f64, delta: f64, n_samples: u64, seed: u64) -> Result<Vec<f64>> {
    if !(w > 0.0 && horizon > 0.0 && delta > 0.0 && s >= 0.0) {
        return Err(Error::domain("w", w, "need w, T, delta > 0 and S >= 0"));
    }
    let h = (s / delta).round() as usize;
    let f = DriftedSupInf {
        w,
        weight: 1.0,
        delta,
        h: 4 * h.div_ceil(4),
        cut: vec![(horizon / delta).round() as usize],
    };
    let streams = Streams::new(seed);
    let mut scratch = Scratch::default();
    let mut out = Vec::with_capacity(n_samples as usize);
    let (mut fine, mut coarse) = ([0.0], [0.0]);
    for i in 0..n_samples {
        let mut rng = streams.stream(i);
        f.sample(&mut rng, &mut scratch, &mut fine, &mut coarse);
        out.push(fine[0].ln());
    }
    Ok(out)
}

/// `int P(X > x) e^{w x} dx` for the empirical law of `samples`, by midpoint quadrature.
///
/// Below the smallest sample the survival function is 1 and that part is
/// integrated exactly.
pub fn tail_integral(samples: &[f64], w: f64, n_nodes: usize) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let dx = (hi - lo) / n_nodes as f64;
    let mut total = (w * lo).exp() / w;
    for k in 0..n_nodes {
        let x = lo + (k as f64 + 0.5) * dx;
        let above = xs.len() - xs.partition_point(|&v| v <= x);
        total += above as f64 / n * (w * x).exp() * dx;
    }
    total
}
