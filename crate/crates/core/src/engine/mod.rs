//! Consensus block-coordinate descent on the regularized dual teaching
//! objective
//!
//! ```text
//! F(a) = c * sum_ij l*(-a_ij) + (lambda/2) |theta(a)|^2
//!        + lambda_theta |theta_star - theta(a)|^2 + lambda_alpha * sum_ij w_ij |a_ij|
//! theta(a) = (1/lambda) * sum_ij a_ij z_ij
//! ```
//!
//! with `z = y x` for classification and `z = x` for regression, and `c = 1`
//! unless [`TeachingConfig::normalize_conjugate`] is set (then `c = 1/N`).
//!
//! Teacher-side work lives in [`teacher`], the parameter-server side in
//! [`coordinator`]; [`session`] wires them into bulk-synchronous rounds.

pub mod coordinator;
pub mod select;
pub mod session;
pub mod snapshot;
pub mod teacher;
pub mod trace;

use crate::dataset::Task;
use crate::error::{Result, TeachError};
use crate::par::Execution;

pub use coordinator::{Coordinator, LocalAggregate, LocalGram};
pub use select::{
    budget_for, evaluate_selection, full_fit, rank_by_magnitude, select_subset, sweep_budgets, SelectionResult, SweepRow,
    SweepTable,
};
pub use session::{apply_and_reduce, objective, run_teaching, Session, TeachingRun};
pub use teacher::{LocalSurrogate, Teacher, WeightVector};
pub use trace::{RoundRecord, RunTrace};

/// Default learner regularization. Small enough that a few percent of the
/// data can carry a model as large as the full-data fit.
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TeachingConfig {
    /// Learner regularization weight.
    pub lambda: f64,
    /// Weight of the adaptive l1 penalty on the dual variables.
    pub lambda_alpha: f64,
    /// Weight of the quadratic pull of `theta(a)` towards the target.
    pub lambda_theta: f64,
    /// Per-teacher step scale in `[1, K]`. Empty means 1 for everyone.
    pub beta: Vec<f64>,
    pub rounds: usize,
    pub inner_max_iter: usize,
    pub inner_tol: f64,
    /// Stop early once the relative objective change drops below this.
    /// Zero runs exactly `rounds` rounds.
    pub outer_tol: f64,
    pub w_max: f64,
    pub ols_eps: f64,
    pub seed: u64,
    /// Scale the conjugate term by `1/N`.
    pub normalize_conjugate: bool,
    pub block_solver: BlockSolver,
    pub execution: Execution,
}

/// How a teacher solves its block each round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BlockSolver {
    /// Diagonally scaled proximal gradient with backtracking.
    #[default]
    ProxGrad,
    /// Damped Newton on the `d`-dimensional dual of the block problem; an
    /// exact block minimizer.
    DualNewton,
}

impl BlockSolver {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DualNewton => "dual_newton",
            Self::ProxGrad => "prox_grad",
        }
    }
}

impl std::str::FromStr for BlockSolver {
    type Err = TeachError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual_newton" => Ok(Self::DualNewton),
            "prox_grad" => Ok(Self::ProxGrad),
            other => Err(TeachError::param(format!("unknown block solver `{other}`"))),
        }
    }
}

impl TeachingConfig {
    pub fn for_task(task: Task) -> Self {
        let (lambda_alpha, lambda_theta) = match task {
            Task::Classification => (0.1, 1000.0),
            Task::Regression => (1.0, 2000.0),
        };
        Self {
            lambda: DEFAULT_LAMBDA,
            lambda_alpha,
            lambda_theta,
            beta: Vec::new(),
            rounds: 100,
            inner_max_iter: 200,
            inner_tol: 1e-8,
            outer_tol: 0.0,
            w_max: 1e6,
            ols_eps: 1e-8,
            seed: 0,
            normalize_conjugate: false,
            block_solver: BlockSolver::default(),
            execution: Execution::default(),
        }
    }

    pub fn beta_for(&self, teacher: usize) -> f64 {
        self.beta.get(teacher).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, teachers: usize) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(TeachError::param(what.to_string()))
            }
        };
        check(self.lambda > 0.0 && self.lambda.is_finite(), "lambda must be positive")?;
        check(self.lambda_alpha >= 0.0, "lambda_alpha must be non-negative")?;
        check(self.lambda_theta >= 0.0, "lambda_theta must be non-negative")?;
        check(self.inner_max_iter >= 1, "inner_max_iter must be at least 1")?;
        check(self.inner_tol > 0.0, "inner_tol must be positive")?;
        check(self.outer_tol >= 0.0, "outer_tol must be non-negative")?;
        check(self.w_max > 0.0, "w_max must be positive")?;
        check(self.ols_eps > 0.0, "ols_eps must be positive")?;
        if !self.beta.is_empty() && self.beta.len() != teachers {
            return Err(TeachError::param(format!(
                "beta has {} entries for {teachers} teachers",
                self.beta.len()
            )));
        }
        for (i, b) in self.beta.iter().enumerate() {
            if !(1.0..=teachers as f64).contains(b) {
                return Err(TeachError::param(format!(
                    "beta[{i}] = {b} outside [1, {teachers}]"
                )));
            }
        }
        Ok(())
    }
}

/// All dual variables, blocked by teacher, plus the broadcast aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub alpha: Vec<Vec<f64>>,
    /// `(1/lambda) * sum_ij alpha_ij z_ij`, maintained incrementally.
    pub theta_tilde: Vec<f64>,
    pub round: usize,
}

impl DualState {
    pub fn zeros(block_sizes: &[usize], dim: usize) -> Self {
        Self {
            alpha: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            theta_tilde: vec![0.0; dim],
            round: 0,
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.alpha.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.alpha.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `sign(v) * max(|v| - t, 0)`
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-0.5, 0.0), -0.5);
    }

    #[test]
    fn config_bounds() {
        let mut cfg = TeachingConfig::for_task(Task::Classification);
        assert!(cfg.validate(5).is_ok());
        cfg.beta = vec![1.0, 2.0, 5.0, 1.0, 1.0];
        assert!(cfg.validate(5).is_ok());
        cfg.beta[2] = 6.0;
        assert!(cfg.validate(5).is_err());
        cfg.beta = vec![1.0];
        assert!(cfg.validate(5).is_err());
        let cfg = TeachingConfig {
            lambda: 0.0,
            ..TeachingConfig::for_task(Task::Regression)
        };
        assert!(cfg.validate(1).is_err());
    }
}
