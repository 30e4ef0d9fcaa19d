//! The student: l2-regularized logistic or ridge regression fitted on a
//! subset, and the teaching-quality metrics computed from its fit.
//!
//! Losses are summed (not averaged) over the subset:
//! `sum_j l(theta; x_j, y_j) + (lambda / 2) |theta|^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example, Task};
use crate::error::{Result, TeachError};
use crate::losses::{loss_at, loss_dp, loss_dpp, LossKind};
use crate::vecops::{dist, dot, norm, norm_sq};

impl AsRef<Example> for Example {
    fn as_ref(&self) -> &Example {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop once the gradient norm of the primal objective is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    /// Gradient norm of the primal objective at `theta`.
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Hessians with a larger condition estimate than this get a gradient step.
const NEWTON_COND_LIMIT: f64 = 1e12;

/// Fits the learner on `subset` (which may be empty, giving `theta = 0`).
///
/// Squared loss is solved in closed form through the regularized normal
/// equations; logistic loss uses damped Newton iterations.
pub fn fit_primal<E: AsRef<Example>>(
    kind: LossKind,
    subset: &[E],
    lambda: f64,
    opts: &FitOptions,
) -> Result<ModelParams> {
    if !(lambda > 0.0) {
        return Err(TeachError::param("lambda must be positive"));
    }
    let Some(first) = subset.first() else {
        return Err(TeachError::param(
            "cannot infer dimension of an empty subset; use fit_primal_dim",
        ));
    };
    let d = first.as_ref().features.len();
    fit_primal_dim(kind, subset, d, lambda, opts)
}

pub fn fit_primal_dim<E: AsRef<Example>>(
    kind: LossKind,
    subset: &[E],
    dim: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<ModelParams> {
    if !(lambda > 0.0) {
        return Err(TeachError::param("lambda must be positive"));
    }
    if let Some(bad) = subset.iter().find(|e| e.as_ref().features.len() != dim) {
        return Err(TeachError::param(format!(
            "example has {} features, expected {dim}",
            bad.as_ref().features.len()
        )));
    }
    if subset.is_empty() {
        return Ok(ModelParams {
            theta: vec![0.0; dim],
            grad_norm: 0.0,
            iterations: 0,
        });
    }
    match kind {
        LossKind::Squared => fit_ridge(subset, dim, lambda),
        LossKind::Logistic => fit_logistic(subset, dim, lambda, opts),
    }
}

fn gram<E: AsRef<Example>>(subset: &[E], dim: usize, weight: impl Fn(&Example) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for e in subset {
        let e = e.as_ref();
        let w = weight(e);
        if w == 0.0 {
            continue;
        }
        let x = &e.features;
        for c in 0..dim {
            let wc = w * x[c];
            for r in c..dim {
                g[(r, c)] += wc * x[r];
            }
        }
    }
    g.fill_upper_triangle_with_lower_triangle();
    g
}

fn fit_ridge<E: AsRef<Example>>(subset: &[E], dim: usize, lambda: f64) -> Result<ModelParams> {
    let mut a = gram(subset, dim, |_| 1.0);
    for i in 0..dim {
        a[(i, i)] += lambda;
    }
    let mut b = DVector::<f64>::zeros(dim);
    for e in subset {
        let e = e.as_ref();
        for (bi, xi) in b.iter_mut().zip(&e.features) {
            *bi += xi * e.label;
        }
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| TeachError::numeric("regularized Gram matrix is not positive definite"))?;
    let theta = chol.solve(&b);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(TeachError::numeric("ridge solution is not finite"));
    }
    let residual = (&a * &theta - &b).norm();
    Ok(ModelParams {
        theta: theta.iter().copied().collect(),
        grad_norm: residual,
        iterations: 1,
    })
}

fn primal_value<E: AsRef<Example>>(kind: LossKind, subset: &[E], lambda: f64, theta: &[f64]) -> f64 {
    let data: f64 = subset
        .iter()
        .map(|e| {
            let e = e.as_ref();
            loss_at(kind, dot(theta, &e.features), e.label)
        })
        .sum();
    data + 0.5 * lambda * norm_sq(theta)
}

fn primal_grad<E: AsRef<Example>>(kind: LossKind, subset: &[E], lambda: f64, theta: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
    for e in subset {
        let e = e.as_ref();
        let s = loss_dp(kind, dot(theta, &e.features), e.label);
        for (gi, xi) in g.iter_mut().zip(&e.features) {
            *gi += s * xi;
        }
    }
    g
}

fn fit_logistic<E: AsRef<Example>>(
    subset: &[E],
    dim: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<ModelParams> {
    let kind = LossKind::Logistic;
    let mut theta = vec![0.0; dim];
    let mut value = primal_value(kind, subset, lambda, &theta);
    let mut grad = primal_grad(kind, subset, lambda, &theta);
    let mut grad_norm = norm(&grad);

    for iter in 0..opts.max_iter {
        if grad_norm <= opts.tol {
            return Ok(ModelParams {
                theta,
                grad_norm,
                iterations: iter,
            });
        }
        let mut hess = gram(subset, dim, |e| loss_dpp(kind, dot(&theta, &e.features), e.label));
        for i in 0..dim {
            hess[(i, i)] += lambda;
        }
        let g = DVector::from_column_slice(&grad);
        let direction: Vec<f64> = match newton_direction(hess, &g) {
            Some(d) => d,
            None => grad.iter().map(|v| -v / lambda).collect(),
        };

        let slope = dot(&grad, &direction);
        // Once the predicted decrease is at round-off level the Armijo test
        // is meaningless; Newton is in its quadratic regime there.
        let tiny = -slope <= 1e-12 * (1.0 + value.abs());
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t + step * d).collect();
            let v = primal_value(kind, subset, lambda, &cand);
            if tiny || v <= value + 1e-4 * step * slope {
                accepted = Some((cand, v));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            break;
        };
        theta = cand;
        value = v;
        grad = primal_grad(kind, subset, lambda, &theta);
        grad_norm = norm(&grad);
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(TeachError::numeric("logistic fit diverged"));
        }
    }
    if grad_norm <= opts.tol {
        return Ok(ModelParams {
            theta,
            grad_norm,
            iterations: opts.max_iter,
        });
    }
    Err(TeachError::Convergence {
        iterations: opts.max_iter,
        grad_norm,
    })
}

fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<Vec<f64>> {
    let chol = hess.cholesky()?;
    let l = chol.l_dirty();
    let diag = l.diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo <= 0.0 || (hi / lo).powi(2) > NEWTON_COND_LIMIT {
        return None;
    }
    let d = chol.solve(grad);
    Some(d.iter().map(|v| -v).collect())
}

/// Euclidean teaching risk and its half-squared form.
pub fn teaching_risk(theta_hat: &[f64], theta_star: &[f64]) -> (f64, f64) {
    let r = dist(theta_hat, theta_star);
    (r, 0.5 * r * r)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Fraction of examples on which the two models predict the same label.
/// A zero margin counts as +1.
pub fn consistency_clf(theta_hat: &[f64], theta_star: &[f64], dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(TeachError::param("consistency needs a non-empty dataset"));
    }
    let agree = dataset
        .examples()
        .iter()
        .filter(|e| sign(dot(theta_hat, &e.features)) == sign(dot(theta_star, &e.features)))
        .count();
    Ok(agree as f64 / dataset.len() as f64)
}

/// Coefficient of determination of `candidate` against `reference`.
pub fn rsquare(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    if reference.len() < 2 || reference.len() != candidate.len() {
        return Err(TeachError::UndefinedMetric(
            "r-square needs at least two paired predictions".into(),
        ));
    }
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean) * (r - mean)).sum();
    if ss_tot == 0.0 {
        return Err(TeachError::UndefinedMetric(
            "reference predictions have zero variance".into(),
        ));
    }
    let ss_res: f64 = reference
        .iter()
        .zip(candidate)
        .map(|(r, c)| (r - c) * (r - c))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// r-square between the target model's and the learned model's predictions.
pub fn rsquare_reg(theta_hat: &[f64], theta_star: &[f64], dataset: &Dataset) -> Result<f64> {
    let reference: Vec<f64> = dataset
        .examples()
        .iter()
        .map(|e| dot(theta_star, &e.features))
        .collect();
    let candidate: Vec<f64> = dataset
        .examples()
        .iter()
        .map(|e| dot(theta_hat, &e.features))
        .collect();
    rsquare(&reference, &candidate)
}

pub fn rho(task: Task, theta_hat: &[f64], theta_star: &[f64], dataset: &Dataset) -> Result<f64> {
    match task {
        Task::Classification => consistency_clf(theta_hat, theta_star, dataset),
        Task::Regression => rsquare_reg(theta_hat, theta_star, dataset),
    }
}

/// `risk_subset / risk_full`; at most 1 means the subset taught better.
pub fn super_teaching_ratio(risk_subset: f64, risk_full: f64) -> Result<f64> {
    if !(risk_full > 0.0) {
        return Err(TeachError::UndefinedMetric(
            "full-data risk is zero; the ratio is undefined".into(),
        ));
    }
    Ok(risk_subset / risk_full)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub risk_euclid: f64,
    pub risk_half_sq: f64,
    pub rho: f64,
    pub teaching_ratio: f64,
    pub runtime_seconds: f64,
}

impl Metrics {
    /// Scores `theta_hat` against the goal on `dataset`; `risk_full` is the
    /// Euclidean risk of the full-data fit.
    pub fn evaluate(
        theta_hat: &[f64],
        theta_star: &[f64],
        dataset: &Dataset,
        risk_full: f64,
        runtime_seconds: f64,
    ) -> Result<Self> {
        let (risk_euclid, risk_half_sq) = teaching_risk(theta_hat, theta_star);
        Ok(Self {
            risk_euclid,
            risk_half_sq,
            rho: rho(dataset.task(), theta_hat, theta_star, dataset)?,
            teaching_ratio: super_teaching_ratio(risk_euclid, risk_full)?,
            runtime_seconds,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics are plain numbers")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SyntheticSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_examples(rng: &mut ChaCha8Rng, n: usize, d: usize, clf: bool) -> Vec<Example> {
        (0..n)
            .map(|_| {
                let f: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y = if clf {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    rng.random_range(-3.0..3.0)
                };
                Example::new(f, y)
            })
            .collect()
    }

    #[test]
    fn one_point_ridge() {
        let ex = [Example::new(vec![1.0, 0.0], 1.0)];
        let fit = fit_primal(LossKind::Squared, &ex, 1.0, &FitOptions::default()).unwrap();
        assert!((fit.theta[0] - 0.5).abs() < 1e-15);
        assert_eq!(fit.theta[1], 0.0);
    }

    #[test]
    fn symmetric_logistic_pair_gives_zero() {
        let x = vec![0.3, -1.2, 2.0];
        let ex = [Example::new(x.clone(), 1.0), Example::new(x, -1.0)];
        let fit = fit_primal(LossKind::Logistic, &ex, 0.5, &FitOptions::default()).unwrap();
        assert!(fit.theta.iter().all(|t| t.abs() < 1e-12), "{:?}", fit.theta);
    }

    #[test]
    fn empty_subset_fits_zero() {
        let none: [Example; 0] = [];
        let fit = fit_primal_dim(LossKind::Logistic, &none, 4, 1.0, &FitOptions::default()).unwrap();
        assert_eq!(fit.theta, vec![0.0; 4]);
    }

    #[test]
    fn ridge_matches_gradient_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let ex = random_examples(&mut rng, 20, 3, false);
        let lambda = 0.7;
        let fit = fit_primal(LossKind::Squared, &ex, lambda, &FitOptions::default()).unwrap();

        // plain gradient descent with step 1/L, L = sum |x|^2 + lambda
        let l: f64 = ex.iter().map(|e| norm_sq(&e.features)).sum::<f64>() + lambda;
        let mut theta = vec![0.0; 3];
        for _ in 0..200_000 {
            let mut g: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
            for e in &ex {
                let r = dot(&theta, &e.features) - e.label;
                for (gi, xi) in g.iter_mut().zip(&e.features) {
                    *gi += r * xi;
                }
            }
            if norm(&g) < 1e-12 {
                break;
            }
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t -= gi / l;
            }
        }
        for (a, b) in fit.theta.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn logistic_reaches_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = random_examples(&mut rng, 60, 4, true);
        let opts = FitOptions::default();
        let fit = fit_primal(LossKind::Logistic, &ex, 0.1, &opts).unwrap();
        assert!(fit.grad_norm <= opts.tol);
        let g = primal_grad(LossKind::Logistic, &ex, 0.1, &fit.theta);
        assert!(norm(&g) <= opts.tol);
    }

    #[test]
    fn logistic_convergence_error_reports_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = random_examples(&mut rng, 60, 4, true);
        let opts = FitOptions {
            tol: 1e-300,
            max_iter: 2,
        };
        match fit_primal(LossKind::Logistic, &ex, 0.1, &opts) {
            Err(TeachError::Convergence { grad_norm, .. }) => assert!(grad_norm > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separable_logistic_stays_finite() {
        let ds = gen_synthetic(&SyntheticSpec::new(Task::Classification, 400, 10, 4, 1)).unwrap();
        let fit = fit_primal(LossKind::Logistic, ds.examples(), 1e-3, &FitOptions::default()).unwrap();
        assert!(fit.theta.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn risk_conventions() {
        assert_eq!(teaching_risk(&[1.0, 2.0], &[1.0, 2.0]), (0.0, 0.0));
        assert_eq!(teaching_risk(&[1.0, 0.0], &[0.0, 0.0]), (1.0, 0.5));
    }

    #[test]
    fn consistency_extremes() {
        let ds = gen_synthetic(&SyntheticSpec::new(Task::Classification, 100, 3, 2, 4)).unwrap();
        let theta = [0.3, -0.7, 1.1];
        assert_eq!(consistency_clf(&theta, &theta, &ds).unwrap(), 1.0);
        let flipped: Vec<f64> = theta.iter().map(|t| -t).collect();
        assert_eq!(consistency_clf(&flipped, &theta, &ds).unwrap(), 0.0);
        let empty = Dataset::with_dim(Task::Classification, 3, vec![]).unwrap();
        assert!(consistency_clf(&theta, &theta, &empty).is_err());
    }

    #[test]
    fn rsquare_extremes() {
        let ds = gen_synthetic(&SyntheticSpec::new(Task::Regression, 50, 3, 2, 4)).unwrap();
        let theta = [0.3, -0.7, 1.1];
        assert_eq!(rsquare_reg(&theta, &theta, &ds).unwrap(), 1.0);
        let reference = [1.0, 2.0, 3.0, 6.0];
        assert_eq!(rsquare(&reference, &[3.0; 4]).unwrap(), 0.0);
        assert!(matches!(
            rsquare(&[2.0, 2.0], &[1.0, 3.0]),
            Err(TeachError::UndefinedMetric(_))
        ));
        assert!(rsquare_reg(&theta, &[0.0; 3], &ds).is_err());
    }

    #[test]
    fn teaching_ratio_cases() {
        assert_eq!(super_teaching_ratio(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(super_teaching_ratio(0.0, 2.0).unwrap(), 0.0);
        assert!(super_teaching_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn metrics_json_keys() {
        let m = Metrics {
            risk_euclid: 1.0,
            risk_half_sq: 0.5,
            rho: 0.9,
            teaching_ratio: 0.8,
            runtime_seconds: 0.0,
        };
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["rho", "risk_euclid", "risk_half_sq", "runtime_seconds", "teaching_ratio"]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ridge_satisfies_normal_equations(seed in 0u64..1000, lambda in 0.01f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ex = random_examples(&mut rng, 15, 4, false);
            let fit = fit_primal(LossKind::Squared, &ex, lambda, &FitOptions::default()).unwrap();
            let g = primal_grad(LossKind::Squared, &ex, lambda, &fit.theta);
            let scale: f64 = ex.iter().map(|e| norm(&e.features) * e.label.abs()).sum::<f64>().max(1.0);
            prop_assert!(norm(&g) <= 1e-8 * scale);
        }

        #[test]
        fn larger_lambda_shrinks_model(seed in 0u64..1000, clf in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ex = random_examples(&mut rng, 25, 3, clf);
            let kind = if clf { LossKind::Logistic } else { LossKind::Squared };
            let small = fit_primal(kind, &ex, 0.5, &FitOptions::default()).unwrap();
            let large = fit_primal(kind, &ex, 5.0, &FitOptions::default()).unwrap();
            prop_assert!(norm(&large.theta) <= norm(&small.theta) + 1e-12);
        }

        #[test]
        fn consistency_is_scale_invariant(seed in 0u64..1000, c in 0.01f64..100.0) {
            let ds = gen_synthetic(&SyntheticSpec::new(Task::Classification, 40, 3, 2, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ca: Vec<f64> = a.iter().map(|v| c * v).collect();
            let cb: Vec<f64> = b.iter().map(|v| c * v).collect();
            prop_assert_eq!(
                consistency_clf(&a, &b, &ds).unwrap(),
                consistency_clf(&ca, &cb, &ds).unwrap()
            );
        }
    }
}
