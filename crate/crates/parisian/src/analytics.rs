//! Closed-form probabilities, the quadratic form and its grid minimizer,
//! the drift constants of the `a = 1`, `rho = -1/2` case, and assembly of
//! the limiting conditional Parisian ruin probability for every regime.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::constants::ConstantKey;
use crate::error::{Error, Result};
use crate::model::{limiting_t_star, ModelParams, Regime, RegimeTag};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalValues {
    pub cdf: f64,
    pub sf: f64,
    pub pdf: f64,
}

/// Standard normal cdf, survival function and density.
///
/// Both tails go through `erfc`, which keeps relative accuracy near 1 ulp
/// deep into either tail.
pub fn std_normal(x: f64) -> NormalValues {
    NormalValues {
        cdf: normal_cdf(x),
        sf: normal_cdf(-x),
        pdf: (-0.5 * x * x - LN_SQRT_2PI).exp(),
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln Phi(x)`, finite far below the underflow point of `Phi`.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return normal_cdf(x).ln();
    }
    ln_cdf_asymptotic(x)
}

// Asymptotic series of the Mills ratio.
fn ln_cdf_asymptotic(x: f64) -> f64 {
    let z = 1.0 / (x * x);
    let series = 1.0 - z + 3.0 * z * z - 15.0 * z * z * z + 105.0 * z.powi(4);
    -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
}

/// Ruin probability of one Brownian portfolio with drift `c` and capital `u` over `[0, T]`.
pub fn single_ruin_prob(c: f64, u: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain("T", horizon, "horizon must be positive and finite"));
    }
    if !(u >= 0.0) {
        return Err(Error::domain("u", u, "barrier must be >= 0"));
    }
    if !c.is_finite() {
        return Err(Error::domain("c", c, "drift must be finite"));
    }
    let rt = horizon.sqrt();
    let first = normal_cdf(-u / rt - c * rt);
    let second = (-2.0 * c * u + ln_normal_cdf(-u / rt + c * rt)).exp();
    Ok((first + second).clamp(0.0, 1.0))
}

/// `q(s, t)` without argument checks; callers guarantee `s, t > 0`.
#[inline]
pub(crate) fn q_unchecked(p: &ModelParams, u: f64, s: f64, t: f64) -> f64 {
    let a1 = 1.0 + p.c1 * s / u;
    let a2 = p.a + p.c2 * t / u;
    let m = s.min(t);
    let det = s * t - p.rho * p.rho * m * m;
    (t * a1 * a1 - 2.0 * p.rho * m * a1 * a2 + s * a2 * a2) / det
}

/// `a' Sigma^{-1} a` for the covariance of `(W1(s), W2(t))` and the
/// drift-adjusted barrier vector `(1 + c1 s/u, a + c2 t/u)`.
pub fn quadratic_form(p: &ModelParams, u: f64, s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && t > 0.0) {
        return Err(Error::SingularCovariance { s, t });
    }
    if !(s <= 1.0 && t <= 1.0) {
        return Err(Error::domain("s,t", s.max(t), "time coordinates must lie in (0, 1]"));
    }
    if !(u > 0.0) {
        return Err(Error::domain("u", u, "must be positive"));
    }
    Ok(q_unchecked(p, u, s, t))
}

pub const GRID_EPS: f64 = 1e-6;

fn grid_pass(p: &ModelParams, u: f64, lo: (f64, f64), hi: (f64, f64), step: f64) -> (f64, f64, f64) {
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|i| hi - i as f64 * step).collect();
        if v.last().is_some_and(|&x| x - lo > 1e-12) {
            v.push(lo);
        }
        v
    };
    let ss = axis(lo.0, hi.0);
    let ts = axis(lo.1, hi.1);
    let mut best = (f64::INFINITY, 1.0, 1.0);
    for &s in &ss {
        for &t in &ts {
            let q = q_unchecked(p, u, s, t);
            if q < best.0 {
                best = (q, s, t);
            }
        }
    }
    (best.1, best.2, best.0)
}

/// Brute-force minimizer of `q` over `(eps, 1]^2`: a pass at `grid_step`,
/// then two local passes each ten times finer.
pub fn grid_minimize_q(p: &ModelParams, u: f64, grid_step: f64) -> Result<crate::model::OptimizerPoint> {
    if !(grid_step > 0.0 && grid_step <= 0.01) {
        return Err(Error::domain("grid_step", grid_step, "must lie in (0, 0.01]"));
    }
    if !(u > 0.0) {
        return Err(Error::domain("u", u, "must be positive"));
    }
    let (mut s, mut t, mut q) = grid_pass(p, u, (GRID_EPS, GRID_EPS), (1.0, 1.0), grid_step);
    let mut step = grid_step;
    for _ in 0..2 {
        let lo = ((s - step).max(GRID_EPS), (t - step).max(GRID_EPS));
        let hi = ((s + step).min(1.0), (t + step).min(1.0));
        step /= 10.0;
        (s, t, q) = grid_pass(p, u, lo, hi, step);
    }
    Ok(crate::model::OptimizerPoint {
        s,
        t,
        q_value: q,
        is_pair: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C4Drift {
    pub c41_prime: f64,
    pub c42_prime: f64,
    pub c4: f64,
}

fn drift_term(x: f64, y: f64) -> f64 {
    // e^{-2 (x/2 + y)^2 / 3} Phi(y + x/2)
    let m = 0.5 * x + y;
    (-2.0 * m * m / 3.0).exp() * normal_cdf(m)
}

/// The four printed branch expressions of `C4`, in order, evaluated regardless of their conditions.
pub fn c4_branch_values(c1: f64, c2: f64) -> [f64; 4] {
    let f1 = drift_term(c1, c2);
    let f2 = drift_term(c2, c1);
    [f1 + f2, f1 + 0.5, 0.5 + f2, 1.0]
}

/// Drift constants of the `a = 1`, `rho = -1/2` limit.
///
/// The fallback branch of `C'4,i` is 1/2, the value of the active
/// expression on its boundary; with it `C4 = C'4,1 + C'4,2` on every branch.
pub fn c4_drift_constants(c1: f64, c2: f64) -> C4Drift {
    let c41_prime = if c2 > -0.5 * c1 { drift_term(c1, c2) } else { 0.5 };
    let c42_prime = if c1 > -0.5 * c2 { drift_term(c2, c1) } else { 0.5 };
    let b = c4_branch_values(c1, c2);
    let c4 = if c2 > (-0.5 * c1).max(-2.0 * c1) {
        b[0]
    } else if -0.5 * c1 < c2 && c2 <= -2.0 * c1 {
        b[1]
    } else if -2.0 * c1 < c2 && c2 <= -0.5 * c1 {
        b[2]
    } else {
        b[3]
    };
    C4Drift {
        c41_prime,
        c42_prime,
        c4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valued {
    pub value: f64,
    pub stderr: f64,
}

impl Valued {
    pub fn exact(value: f64) -> Self {
        Valued { value, stderr: 0.0 }
    }

    fn rel(&self) -> f64 {
        self.stderr / self.value
    }
}

/// The place a constant takes in a regime's limit formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cp,
    RWindow,
    RZero,
    PFirst,
    HSecond,
    P22S1,
    H12S2,
    P22S2,
    H12S1,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Cp => "C_P",
            Role::RWindow => "R_{S1,S2}",
            Role::RZero => "R_{0,0}",
            Role::PFirst => "P",
            Role::HSecond => "H",
            Role::P22S1 => "P(2,2,S1)",
            Role::H12S2 => "H(1,2,S2)",
            Role::P22S2 => "P(2,2,S2)",
            Role::H12S1 => "H(1,2,S1)",
        }
    }
}

/// Which constants each regime's limit needs, keyed by role.
pub fn required_constants(p: &ModelParams, regime: &Regime) -> Vec<(Role, ConstantKey)> {
    let (a, rho) = (p.a, p.rho);
    let r2 = rho * rho;
    match regime.tag {
        RegimeTag::DomALtRho | RegimeTag::DomAEqRho => vec![(Role::Cp, ConstantKey::Cp { s: p.s1 })],
        RegimeTag::CaseI => {
            let l1 = (1.0 - a * rho) / (1.0 - r2);
            let l2 = (a - rho) / (1.0 - r2);
            let r = |s1, s2| ConstantKey::R {
                s1,
                s2,
                a,
                rho,
                lambda1: l1,
                lambda2: l2,
            };
            vec![(Role::RWindow, r(p.s1, p.s2)), (Role::RZero, r(0.0, 0.0))]
        }
        RegimeTag::CaseII => {
            let w = (1.0 - a * rho) / (1.0 - r2);
            vec![
                (Role::PFirst, ConstantKey::P { w1: w, w2: w, s: p.s1 }),
                (Role::HSecond, ConstantKey::H { w1: a, w2: 2.0 * a, s: p.s2 }),
            ]
        }
        RegimeTag::CaseIII => vec![
            (Role::P22S1, ConstantKey::P { w1: 2.0, w2: 2.0, s: p.s1 }),
            (Role::H12S2, ConstantKey::H { w1: 1.0, w2: 2.0, s: p.s2 }),
            (Role::P22S2, ConstantKey::P { w1: 2.0, w2: 2.0, s: p.s2 }),
            (Role::H12S1, ConstantKey::H { w1: 1.0, w2: 2.0, s: p.s1 }),
        ],
        RegimeTag::CaseIV | RegimeTag::CaseV => {
            let t = limiting_t_star(p, regime);
            let w = (1.0 - a * rho) / (1.0 - r2 * t);
            let (sp, sh) = if regime.tag == RegimeTag::CaseV && p.c1 > p.c2 {
                (p.s2, p.s1)
            } else {
                (p.s1, p.s2)
            };
            vec![
                (Role::PFirst, ConstantKey::P { w1: w, w2: w, s: sp }),
                (Role::HSecond, ConstantKey::H { w1: a / t, w2: 2.0 * (a / t), s: sh }),
            ]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub regime: RegimeTag,
    pub values: BTreeMap<Role, Valued>,
}

impl LimitConstants {
    pub fn new(regime: RegimeTag) -> Self {
        LimitConstants {
            regime,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, role: Role, v: Valued) -> Self {
        self.values.insert(role, v);
        self
    }

    fn get(&self, role: Role) -> Result<Valued> {
        let v = self.values.get(&role).copied().ok_or(Error::MissingConstant(role.name()))?;
        if !(v.value > 0.0 && v.value.is_finite()) {
            return Err(Error::Internal(format!("constant {} = {} is not positive and finite", role.name(), v.value)));
        }
        Ok(v)
    }
}

fn product(xs: &[Valued]) -> Valued {
    let value: f64 = xs.iter().map(|x| x.value).product();
    let rel2: f64 = xs.iter().map(|x| x.rel().powi(2)).sum();
    Valued {
        value,
        stderr: value * rel2.sqrt(),
    }
}

fn scaled(x: Valued, k: f64) -> Valued {
    Valued {
        value: x.value * k,
        stderr: x.stderr * k.abs(),
    }
}

/// Limit of the conditional Parisian ruin probability as `u -> infinity`.
///
/// The standard error treats the supplied constants as independent estimates.
pub fn theoretical_ratio_limit(p: &ModelParams, regime: &Regime, consts: &LimitConstants) -> Result<Valued> {
    if consts.regime != regime.tag {
        return Err(Error::Internal(format!(
            "constants were assembled for {} but the regime is {}",
            consts.regime, regime.tag
        )));
    }
    let (a, rho) = (p.a, p.rho);
    let r2 = rho * rho;
    let out = match regime.tag {
        RegimeTag::DomALtRho | RegimeTag::DomAEqRho => scaled(consts.get(Role::Cp)?, 0.5),
        RegimeTag::CaseI => {
            let num = consts.get(Role::RWindow)?;
            let den = consts.get(Role::RZero)?;
            if num == den {
                // one estimate in both places: the ratio is exactly 1
                return Ok(Valued::exact(1.0));
            }
            let value = num.value / den.value;
            Valued {
                value,
                stderr: value * (num.rel().powi(2) + den.rel().powi(2)).sqrt(),
            }
        }
        RegimeTag::CaseII => {
            let ph = product(&[consts.get(Role::PFirst)?, consts.get(Role::HSecond)?]);
            scaled(ph, (1.0 - a * rho) / (2.0 * a * (1.0 - r2)))
        }
        RegimeTag::CaseIII => {
            let d = c4_drift_constants(p.c1, p.c2);
            let x = product(&[consts.get(Role::P22S1)?, consts.get(Role::H12S2)?]);
            let y = product(&[consts.get(Role::P22S2)?, consts.get(Role::H12S1)?]);
            let value = (x.value * d.c41_prime + y.value * d.c42_prime) / d.c4;
            let stderr = ((x.stderr * d.c41_prime).powi(2) + (y.stderr * d.c42_prime).powi(2)).sqrt() / d.c4;
            Valued { value, stderr }
        }
        RegimeTag::CaseIV | RegimeTag::CaseV => {
            if rho == 0.0 {
                return Err(Error::Internal("rho = 0 inside an interior-optimizer regime".into()));
            }
            let ph = product(&[consts.get(Role::PFirst)?, consts.get(Role::HSecond)?]);
            scaled(ph, -1.0 / (2.0 * rho))
        }
    };
    Ok(out)
}
