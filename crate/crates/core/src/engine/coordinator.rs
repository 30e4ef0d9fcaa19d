//! Parameter-server side. Its inputs are aggregates only: `d`-vectors and
//! `d x d` Gram matrices, whose sizes do not depend on how many examples a
//! teacher holds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TeachError};

/// `sum_j a_j z_j` over one teacher's block (or a change thereof).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAggregate(Vec<f64>);

impl LocalAggregate {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of reals this message carries.
    pub fn reals(&self) -> usize {
        self.0.len()
    }
}

/// `sum_j z_j z_j^T` over one teacher's block, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGram {
    dim: usize,
    values: Vec<f64>,
}

impl LocalGram {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), dim * dim);
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reals(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    dim: usize,
    lambda: f64,
}

impl Coordinator {
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self { dim, lambda }
    }

    /// Solves `(Z Z^T + eps I) v = theta_star` with
    /// `eps = ols_eps * trace(Z Z^T) / d`. Each teacher then recovers its part
    /// of the minimum-norm least-squares estimate as `lambda * Z_i^T v`.
    pub fn warm_start_direction(&self, grams: &[LocalGram], theta_star: &[f64], ols_eps: f64) -> Result<Vec<f64>> {
        let d = self.dim;
        if theta_star.len() != d {
            return Err(TeachError::param(format!(
                "target has dimension {}, expected {d}",
                theta_star.len()
            )));
        }
        let mut total = DMatrix::<f64>::zeros(d, d);
        for g in grams {
            if g.dim != d {
                return Err(TeachError::param("Gram aggregate has the wrong dimension"));
            }
            for r in 0..d {
                for c in 0..d {
                    total[(r, c)] += g.values[r * d + c];
                }
            }
        }
        let trace = total.trace();
        let eps = if trace > 0.0 { ols_eps * trace / d as f64 } else { ols_eps };
        for i in 0..d {
            total[(i, i)] += eps;
        }
        let rhs = DVector::from_column_slice(theta_star);
        let v = total
            .cholesky()
            .ok_or_else(|| TeachError::numeric("warm-start Gram system is not positive definite"))?
            .solve(&rhs);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(TeachError::numeric("warm-start direction is not finite"));
        }
        Ok(v.iter().copied().collect())
    }

    /// `theta_tilde + (1/lambda) * sum_i change_i`, summed in the given
    /// (ascending teacher id) order.
    pub fn reduce(&self, theta_tilde: &[f64], changes: &[LocalAggregate]) -> Result<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        for c in changes {
            if c.0.len() != self.dim {
                return Err(TeachError::param("aggregate has the wrong dimension"));
            }
            for (s, v) in sum.iter_mut().zip(&c.0) {
                *s += v;
            }
        }
        Ok(theta_tilde
            .iter()
            .zip(&sum)
            .map(|(t, s)| t + s / self.lambda)
            .collect())
    }

    /// `(1/lambda) * sum_i aggregate_i` from scratch.
    pub fn assemble(&self, aggregates: &[LocalAggregate]) -> Result<Vec<f64>> {
        self.reduce(&vec![0.0; self.dim], aggregates)
    }
}
