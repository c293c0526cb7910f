//! Problem instances, regime classification and the closed-form scalars
//! (critical correlation, optimizers, local exponents) the limits dispatch on.

use serde::{Deserialize, Serialize};

use crate::analytics::quadratic_form;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;

/// One instance of the bivariate model: drifts, barrier ratio, correlation and window scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub c1: f64,
    pub c2: f64,
    pub a: f64,
    pub rho: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Result of putting a raw instance into the `a <= 1` orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub params: ModelParams,
    /// Multiply every first-coordinate barrier `u` by this to get the normalized `u`.
    pub barrier_scale: f64,
    pub swapped: bool,
}

impl ModelParams {
    pub fn new(c1: f64, c2: f64, a: f64, rho: f64, s1: f64, s2: f64) -> Result<Self> {
        let p = ModelParams {
            c1,
            c2,
            a,
            rho,
            s1,
            s2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c1.is_finite() {
            return Err(Error::domain("c1", self.c1, "must be finite"));
        }
        if !self.c2.is_finite() {
            return Err(Error::domain("c2", self.c2, "must be finite"));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::domain("rho", self.rho, "must lie strictly inside (-1, 1)"));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::domain("a", self.a, "must lie in (0, 1]; swap coordinates first"));
        }
        if !(self.s1 >= 0.0 && self.s1.is_finite()) {
            return Err(Error::domain("s1", self.s1, "must be finite and >= 0"));
        }
        if !(self.s2 >= 0.0 && self.s2.is_finite()) {
            return Err(Error::domain("s2", self.s2, "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Accepts any positive barrier ratio and swaps coordinates when `a > 1`.
    ///
    /// Windows are fixed in time (`S_i / u^2`), so after the swap the window
    /// scales are re-expressed against the new first barrier `a * u`.
    pub fn normalized(c1: f64, c2: f64, a: f64, rho: f64, s1: f64, s2: f64) -> Result<Normalized> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::domain("a", a, "barrier ratio must be positive and finite"));
        }
        if a <= 1.0 {
            return Ok(Normalized {
                params: ModelParams::new(c1, c2, a, rho, s1, s2)?,
                barrier_scale: 1.0,
                swapped: false,
            });
        }
        let a2 = a * a;
        Ok(Normalized {
            params: ModelParams::new(c2, c1, 1.0 / a, rho, s2 * a2, s1 * a2)?,
            barrier_scale: a,
            swapped: true,
        })
    }

    /// Builds the instance from the two barriers `(u, v)`; returns it with the first barrier.
    pub fn from_barriers(c1: f64, c2: f64, u: f64, v: f64, rho: f64, s1: f64, s2: f64) -> Result<(Self, f64)> {
        if !(u > 0.0 && u.is_finite()) {
            return Err(Error::domain("u", u, "barrier must be positive and finite"));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain("v", v, "barrier must be positive and finite"));
        }
        let n = Self::normalized(c1, c2, v / u, rho, s1, s2)?;
        Ok((n.params, u * n.barrier_scale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegimeTag {
    DomALtRho,
    DomAEqRho,
    CaseI,
    CaseII,
    CaseIII,
    CaseIV,
    CaseV,
}

impl RegimeTag {
    pub fn is_dominated(self) -> bool {
        matches!(self, RegimeTag::DomALtRho | RegimeTag::DomAEqRho)
    }

    pub fn name(self) -> &'static str {
        match self {
            RegimeTag::DomALtRho => "DOM_A_LT_RHO",
            RegimeTag::DomAEqRho => "DOM_A_EQ_RHO",
            RegimeTag::CaseI => "CASE_I",
            RegimeTag::CaseII => "CASE_II",
            RegimeTag::CaseIII => "CASE_III",
            RegimeTag::CaseIV => "CASE_IV",
            RegimeTag::CaseV => "CASE_V",
        }
    }
}

impl std::fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub tag: RegimeTag,
    pub boundary_tol: f64,
}

/// `A_a = (1 - sqrt(8a^2 + 1)) / (4a)`.
pub fn critical_rho(a: f64) -> Result<f64> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::domain("a", a, "must lie in (0, 1]"));
    }
    // Rationalized form, stable as a -> 0.
    Ok(-2.0 * a / (1.0 + (8.0 * a * a + 1.0).sqrt()))
}

pub fn classify_regime(p: &ModelParams, tol: f64) -> Result<Regime> {
    p.validate()?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::domain("tol", tol, "must be finite and >= 0"));
    }
    let (a, rho) = (p.a, p.rho);
    let tag = if a <= rho {
        if rho - a <= tol {
            RegimeTag::DomAEqRho
        } else {
            RegimeTag::DomALtRho
        }
    } else {
        let crit = critical_rho(a)?;
        let a_is_one = 1.0 - a <= tol;
        if rho > crit + tol {
            RegimeTag::CaseI
        } else if (rho - crit).abs() <= tol {
            if a_is_one {
                RegimeTag::CaseIII
            } else {
                RegimeTag::CaseII
            }
        } else if a_is_one {
            RegimeTag::CaseV
        } else {
            RegimeTag::CaseIV
        }
    };
    Ok(Regime {
        tag,
        boundary_tol: tol,
    })
}

/// Limiting (u -> infinity) optimizer time of the second coordinate.
pub fn limiting_t_star(p: &ModelParams, regime: &Regime) -> f64 {
    match regime.tag {
        RegimeTag::CaseIV => p.a / (p.rho * (2.0 * p.a * p.rho - 1.0)),
        RegimeTag::CaseV => 1.0 / (p.rho * (2.0 * p.rho - 1.0)),
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerPoint {
    pub s: f64,
    pub t: f64,
    pub q_value: f64,
    pub is_pair: bool,
}

/// Closed-form minimizer of `q` at finite `u`; `mirror` is set when two
/// candidate points exist (`a = 1`, `rho <= -1/2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerPoints {
    pub primary: OptimizerPoint,
    pub mirror: Option<OptimizerPoint>,
}

impl OptimizerPoints {
    /// The candidate with the smaller quadratic form; the primary wins ties.
    pub fn best(&self) -> OptimizerPoint {
        match self.mirror {
            Some(m) if m.q_value < self.primary.q_value => m,
            _ => self.primary,
        }
    }
}

/// Interior time from `numerator / denominator`, or 1 when it leaves (0, 1].
fn interior_time(numerator: f64, denominator: f64) -> f64 {
    if denominator <= 0.0 {
        return 1.0;
    }
    let t = numerator / denominator;
    if t > 0.0 && t <= 1.0 {
        t
    } else {
        1.0
    }
}

pub fn optimizer_point(p: &ModelParams, regime: &Regime, u: f64) -> Result<OptimizerPoints> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::domain("u", u, "must be positive and finite"));
    }
    let (a, rho, c1, c2) = (p.a, p.rho, p.c1, p.c2);
    let point = |s: f64, t: f64, is_pair: bool| -> Result<OptimizerPoint> {
        Ok(OptimizerPoint {
            s,
            t,
            q_value: quadratic_form(p, u, s, t)?,
            is_pair,
        })
    };
    match regime.tag {
        RegimeTag::DomALtRho
        | RegimeTag::DomAEqRho
        | RegimeTag::CaseI
        | RegimeTag::CaseII
        | RegimeTag::CaseIV => {
            let t = interior_time(a, rho * (2.0 * a * rho - 1.0) + (c2 - rho * c1) / u);
            Ok(OptimizerPoints {
                primary: point(1.0, t, false)?,
                mirror: None,
            })
        }
        RegimeTag::CaseIII | RegimeTag::CaseV => {
            let base = rho * (2.0 * rho - 1.0);
            let t = interior_time(1.0, base + (c2 - rho * c1) / u);
            let s = interior_time(1.0, base + (c1 - rho * c2) / u);
            let is_pair = regime.tag == RegimeTag::CaseV;
            Ok(OptimizerPoints {
                primary: point(1.0, t, is_pair)?,
                mirror: Some(point(s, 1.0, is_pair)?),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Diagonal,
    LGtK,
    LLtK,
}

impl Relation {
    pub fn name(self) -> &'static str {
        match self {
            Relation::Diagonal => "diagonal",
            Relation::LGtK => "l_gt_k",
            Relation::LLtK => "l_lt_k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalExponents {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau1: Option<f64>,
    pub tau4: Option<f64>,
}

/// Local exponential tilts at the limiting optimizer, plus the Taylor
/// coefficients of `q` around it in the boundary and interior cases.
pub fn local_exponents(p: &ModelParams, regime: &Regime, relation: Relation) -> Result<LocalExponents> {
    let (a, rho) = (p.a, p.rho);
    let t = limiting_t_star(p, regime);
    let r2 = rho * rho;
    let (lambda1, lambda2) = match relation {
        Relation::Diagonal => {
            if (t - 1.0).abs() > regime.boundary_tol {
                return Err(Error::InconsistentBranch {
                    relation: relation.name(),
                    t_star: t,
                });
            }
            ((1.0 - a * rho) / ((1.0 - r2) * t), (a - rho) / ((1.0 - r2) * t))
        }
        Relation::LGtK => ((t - a * rho) / (t - r2), (a - rho) / (t - r2)),
        Relation::LLtK => ((1.0 - a * rho) / (1.0 - r2 * t), (a - rho * t) / (t - r2 * t * t)),
    };
    let (tau1, tau4) = match regime.tag {
        RegimeTag::CaseII | RegimeTag::CaseIII => {
            let d = (1.0 - r2) * (1.0 - r2);
            (
                Some((1.0 - a * rho).powi(2) / d),
                Some((r2 - 2.0 * a * rho * r2 + a * a * r2) / d),
            )
        }
        RegimeTag::CaseIV | RegimeTag::CaseV => {
            if rho == 0.0 {
                return Err(Error::Internal("rho = 0 inside an interior-optimizer regime".into()));
            }
            let k = 1.0 - 2.0 * a * rho;
            (
                Some(k * k),
                Some(-rho * r2 * k.powi(4) / (a * (1.0 - a * rho))),
            )
        }
        _ => (None, None),
    };
    Ok(LocalExponents {
        lambda1,
        lambda2,
        tau1,
        tau4,
    })
}
