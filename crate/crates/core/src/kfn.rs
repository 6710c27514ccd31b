//! Symbolic class-K∞ functions.
//!
//! Gains, comparison bounds and Lipschitz moduli are kept in a closed algebra
//! (linear maps, power laws, composition and pointwise maximum) so that
//! inverses and cycle comparisons against the identity can be decided
//! analytically whenever the shape allows it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KfnError {
    #[error("representation cannot be inverted symbolically (contains a max node)")]
    NotInvertibleRepresentation,
    #[error("invalid K-infinity parameter: {0}")]
    InvalidParameter(String),
}

/// A class-K∞ function `R≥0 → R≥0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KFn {
    /// `s ↦ slope · s`
    Linear { slope: f64 },
    /// `s ↦ coeff · s^exponent`
    Power { coeff: f64, exponent: f64 },
    /// `s ↦ outer(inner(s))`
    Compose { outer: Box<KFn>, inner: Box<KFn> },
    /// `s ↦ max_k f_k(s)`
    Max { terms: Vec<KFn> },
}

fn check_positive(name: &str, v: f64) -> Result<(), KfnError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(KfnError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl KFn {
    pub fn linear(slope: f64) -> Result<Self, KfnError> {
        check_positive("slope", slope)?;
        Ok(KFn::Linear { slope })
    }

    pub fn identity() -> Self {
        KFn::Linear { slope: 1.0 }
    }

    pub fn power(coeff: f64, exponent: f64) -> Result<Self, KfnError> {
        check_positive("coeff", coeff)?;
        check_positive("exponent", exponent)?;
        Ok(KFn::Power { coeff, exponent })
    }

    /// `outer ∘ inner`, folded to a single linear map when both sides are linear.
    pub fn compose(outer: KFn, inner: KFn) -> Self {
        match (&outer, &inner) {
            (KFn::Linear { slope: a }, KFn::Linear { slope: b }) => KFn::Linear { slope: a * b },
            _ => KFn::Compose { outer: Box::new(outer), inner: Box::new(inner) },
        }
    }

    /// Pointwise maximum; folded to one linear map when every term is linear.
    pub fn max(terms: Vec<KFn>) -> Result<Self, KfnError> {
        if terms.is_empty() {
            return Err(KfnError::InvalidParameter("max of an empty list".into()));
        }
        if terms.len() == 1 {
            return Ok(terms.into_iter().next().unwrap());
        }
        if let Some(slopes) = terms.iter().map(KFn::linear_slope).collect::<Option<Vec<_>>>() {
            let slope = slopes.into_iter().fold(f64::NEG_INFINITY, f64::max);
            return Ok(KFn::Linear { slope });
        }
        Ok(KFn::Max { terms })
    }

    /// `factor · self`.
    pub fn scaled(self, factor: f64) -> Result<Self, KfnError> {
        check_positive("factor", factor)?;
        Ok(KFn::compose(KFn::Linear { slope: factor }, self))
    }

    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0, "K-infinity functions are defined on s >= 0");
        match self {
            KFn::Linear { slope } => slope * s,
            KFn::Power { coeff, exponent } => {
                if s == 0.0 {
                    0.0
                } else {
                    coeff * s.powf(*exponent)
                }
            }
            KFn::Compose { outer, inner } => outer.eval(inner.eval(s)),
            KFn::Max { terms } => terms.iter().map(|t| t.eval(s)).fold(0.0, f64::max),
        }
    }

    /// Slope when the function is a linear map (possibly a chain of them).
    pub fn linear_slope(&self) -> Option<f64> {
        match self.power_form()? {
            (c, 1.0) => Some(c),
            _ => None,
        }
    }

    /// Reduces Linear/Power/Compose chains to `c · s^e`.
    pub fn power_form(&self) -> Option<(f64, f64)> {
        match self {
            KFn::Linear { slope } => Some((*slope, 1.0)),
            KFn::Power { coeff, exponent } => Some((*coeff, *exponent)),
            KFn::Compose { outer, inner } => {
                let (co, eo) = outer.power_form()?;
                let (ci, ei) = inner.power_form()?;
                // co · (ci · s^ei)^eo
                Some((co * ci.powf(eo), eo * ei))
            }
            KFn::Max { .. } => None,
        }
    }

    pub fn inverse(&self) -> Result<KFn, KfnError> {
        match self {
            KFn::Linear { slope } => Ok(KFn::Linear { slope: 1.0 / slope }),
            KFn::Power { coeff, exponent } => Ok(KFn::Power {
                coeff: coeff.powf(-1.0 / exponent),
                exponent: 1.0 / exponent,
            }),
            KFn::Compose { outer, inner } => Ok(KFn::compose(inner.inverse()?, outer.inverse()?)),
            KFn::Max { .. } => Err(KfnError::NotInvertibleRepresentation),
        }
    }

    /// Compares against the identity on samples and, for power-law chains,
    /// analytically.
    pub fn lt_identity(&self, samples: &SampleSpec) -> LtIdentity {
        if let Some((c, e)) = self.power_form() {
            // c·s^e < s for all s > 0 iff e = 1 and c < 1; otherwise the curves
            // meet at s* = c^(-1/(e-1)).
            if e == 1.0 {
                if c >= 1.0 {
                    return LtIdentity { holds: false, witness: Some(1.0) };
                }
            } else {
                let crossing = c.powf(-1.0 / (e - 1.0));
                let witness = if crossing.is_finite() && crossing > 0.0 { crossing } else { 1.0 };
                return LtIdentity { holds: false, witness: Some(witness) };
            }
        }
        for s in samples.points() {
            if self.eval(s) >= s {
                return LtIdentity { holds: false, witness: Some(s) };
            }
        }
        LtIdentity { holds: true, witness: None }
    }
}

/// Outcome of a `f < Id` comparison; `witness` is an `s > 0` with `f(s) ≥ s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LtIdentity {
    pub holds: bool,
    pub witness: Option<f64>,
}

/// Log-spaced sample points on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { min: 1e-6, max: 1e6, count: 241 }
    }
}

impl SampleSpec {
    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.count.max(2);
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (0..n).map(move |k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp())
    }
}
