//! Learning losses, their Fenchel conjugates and smoothness constants.
//!
//! Conjugates are expressed in terms of the dual variable `a` attached to an
//! example, i.e. `conjugate(kind, a, y)` returns `l*(-a)`:
//!
//! * logistic: `a ln a + (1 - a) ln(1 - a)` on `[0, 1]`, with `0 ln 0 = 0`;
//! * squared: `a^2 / 2 - a y` on the whole line.

use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{Result, TeachError};
use crate::vecops::{dot, norm_sq};

/// Clamp width used inside iterative solvers, where the logistic conjugate
/// gradient is unbounded at 0 and 1.
pub const BOUNDARY_EPS: f64 = 1e-6;

/// Arguments this far outside `[0, 1]` are snapped back before evaluation.
pub const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateDomain {
    pub lower: f64,
    pub upper: f64,
    pub boundary_eps: f64,
}

impl ConjugateDomain {
    pub fn contains(&self, a: f64) -> bool {
        a >= self.lower && a <= self.upper
    }

    /// Projection onto the closed domain.
    pub fn project(&self, a: f64) -> f64 {
        a.clamp(self.lower, self.upper)
    }

    /// Projection onto the shrunken interior used for gradient evaluation.
    pub fn interior(&self, a: f64) -> f64 {
        if self.lower.is_finite() || self.upper.is_finite() {
            a.clamp(self.lower + self.boundary_eps, self.upper - self.boundary_eps)
        } else {
            a
        }
    }
}

impl LossKind {
    pub fn domain(self) -> ConjugateDomain {
        match self {
            LossKind::Logistic => ConjugateDomain {
                lower: 0.0,
                upper: 1.0,
                boundary_eps: BOUNDARY_EPS,
            },
            LossKind::Squared => ConjugateDomain {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                boundary_eps: BOUNDARY_EPS,
            },
        }
    }

    /// Maps a dual value into its domain, tolerating `DOMAIN_SLACK` of
    /// round-off outside it.
    fn admit(self, a: f64) -> Result<f64> {
        if !a.is_finite() {
            return Err(TeachError::numeric(format!("non-finite dual value {a}")));
        }
        match self {
            LossKind::Squared => Ok(a),
            LossKind::Logistic => {
                if (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&a) {
                    Ok(a.clamp(0.0, 1.0))
                } else {
                    Err(TeachError::Domain {
                        value: a,
                        lower: 0.0,
                        upper: 1.0,
                    })
                }
            }
        }
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Loss as a function of the prediction `p = <theta, x>`.
#[inline]
pub fn loss_at(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Logistic => softplus(-y * p),
        LossKind::Squared => 0.5 * (p - y) * (p - y),
    }
}

/// `ln(1 + e^t)` without overflow.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn loss(kind: LossKind, theta: &[f64], x: &[f64], y: f64) -> f64 {
    loss_at(kind, dot(theta, x), y)
}

/// Derivative of the loss with respect to the prediction.
#[inline]
pub fn loss_dp(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Logistic => -y * sigmoid(-y * p),
        LossKind::Squared => p - y,
    }
}

/// Second derivative of the loss with respect to the prediction.
#[inline]
pub fn loss_dpp(kind: LossKind, p: f64, y: f64) -> f64 {
    match kind {
        LossKind::Logistic => {
            let s = sigmoid(y * p);
            s * (1.0 - s)
        }
        LossKind::Squared => 1.0,
    }
}

/// `l*(-a)`.
pub fn conjugate(kind: LossKind, a: f64, y: f64) -> Result<f64> {
    let a = kind.admit(a)?;
    Ok(match kind {
        LossKind::Logistic => xlogx(a) + xlogx(1.0 - a),
        LossKind::Squared => 0.5 * a * a - a * y,
    })
}

/// `d/da l*(-a)`, evaluated at the interior clamp of `a` for the logistic
/// loss.
pub fn conjugate_grad(kind: LossKind, a: f64, y: f64) -> Result<f64> {
    let a = kind.admit(a)?;
    Ok(match kind {
        LossKind::Logistic => {
            let a = kind.domain().interior(a);
            (a / (1.0 - a)).ln()
        }
        LossKind::Squared => a - y,
    })
}

/// `d^2/da^2 l*(-a)` at the interior clamp.
pub fn conjugate_curvature(kind: LossKind, a: f64) -> f64 {
    match kind {
        LossKind::Logistic => {
            let a = kind.domain().interior(a);
            1.0 / (a * (1.0 - a))
        }
        LossKind::Squared => 1.0,
    }
}

/// Lipschitz constant of the gradient of `sum_j l(theta; x_j, y_j)`.
pub fn smoothness_bound(kind: LossKind, examples: &[Example]) -> f64 {
    let total: f64 = examples.iter().map(|e| norm_sq(&e.features)).sum();
    match kind {
        LossKind::Logistic => total / 4.0,
        LossKind::Squared => total,
    }
}
