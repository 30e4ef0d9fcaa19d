//! Teacher-side state and the per-block subproblem.
//!
//! A [`Teacher`] owns its shard. Everything it sends out is either a
//! `d`-vector ([`LocalAggregate`]) or, once during warm start, a `d x d`
//! Gram matrix ([`LocalGram`]).

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Task, TeacherShard};
use crate::engine::coordinator::{LocalAggregate, LocalGram};
use crate::engine::{soft_threshold, BlockSolver, TeachingConfig};
use crate::error::{Result, TeachError};
use crate::losses::{conjugate, conjugate_curvature, conjugate_grad, sigmoid, softplus, ConjugateDomain, LossKind};
use crate::vecops::{axpy, dot, norm_sq};

/// Adaptive l1 weights, one per dual variable of a block.
pub type WeightVector = Vec<f64>;

#[derive(Debug, Clone)]
pub struct Teacher {
    id: usize,
    dim: usize,
    kind: LossKind,
    /// Row-major `n x d`; row `j` is `y_j x_j` (classification) or `x_j`.
    z: Vec<f64>,
    labels: Vec<f64>,
    z_sq: Vec<f64>,
    global_offsets: Vec<usize>,
}

impl Teacher {
    pub fn new(shard: &TeacherShard, task: Task, dim: usize) -> Result<Self> {
        let n = shard.len();
        let mut z = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for e in &shard.examples {
            if e.features.len() != dim {
                return Err(TeachError::param(format!(
                    "teacher {} holds an example with {} features, expected {dim}",
                    shard.teacher_id,
                    e.features.len()
                )));
            }
            match task {
                Task::Classification => z.extend(e.features.iter().map(|v| v * e.label)),
                Task::Regression => z.extend_from_slice(&e.features),
            }
            labels.push(e.label);
        }
        let z_sq = z.chunks_exact(dim.max(1)).map(norm_sq).collect();
        Ok(Self {
            id: shard.teacher_id,
            dim,
            kind: task.loss(),
            z,
            labels,
            z_sq,
            global_offsets: shard.global_offsets.clone(),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn global_offsets(&self) -> &[usize] {
        &self.global_offsets
    }

    #[inline]
    pub(crate) fn row(&self, j: usize) -> &[f64] {
        &self.z[j * self.dim..(j + 1) * self.dim]
    }

    pub fn domain(&self) -> ConjugateDomain {
        self.kind.domain()
    }

    /// `sum_j z_j z_j^T`.
    pub fn local_gram(&self) -> LocalGram {
        let d = self.dim;
        let mut g = vec![0.0; d * d];
        for j in 0..self.len() {
            let z = self.row(j);
            for r in 0..d {
                let zr = z[r];
                for c in 0..d {
                    g[r * d + c] += zr * z[c];
                }
            }
        }
        LocalGram::new(d, g)
    }

    /// Adaptive weights from the broadcast warm-start direction `v`, where
    /// the least-squares estimate is `alpha_hat_j = lambda * <z_j, v>`.
    pub fn warm_weights(&self, v: &[f64], lambda: f64, w_max: f64) -> Result<WeightVector> {
        (0..self.len())
            .map(|j| {
                let a_hat = lambda * dot(self.row(j), v);
                if !a_hat.is_finite() {
                    return Err(TeachError::numeric(format!(
                        "teacher {}: non-finite warm-start estimate",
                        self.id
                    )));
                }
                Ok((1.0 / a_hat.abs()).min(w_max))
            })
            .collect()
    }

    /// `sum_j alpha_j z_j`.
    pub fn aggregate(&self, alpha: &[f64]) -> LocalAggregate {
        let mut s = vec![0.0; self.dim];
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                axpy(a, self.row(j), &mut s);
            }
        }
        LocalAggregate::new(s)
    }

    /// Scales the block step by `step`, projects onto the conjugate domain
    /// and returns the new block with its aggregate change
    /// `sum_j (new_j - old_j) z_j`.
    pub fn apply(&self, alpha: &[f64], delta: &[f64], step: f64) -> (Vec<f64>, LocalAggregate) {
        let domain = self.domain();
        let mut next = Vec::with_capacity(alpha.len());
        let mut change = vec![0.0; self.dim];
        for (j, (&a, &d)) in alpha.iter().zip(delta).enumerate() {
            let b = domain.project(a + step * d);
            let moved = b - a;
            if moved != 0.0 {
                axpy(moved, self.row(j), &mut change);
            }
            next.push(b);
        }
        (next, LocalAggregate::new(change))
    }

    /// `(c * sum_j l*(-a_j), sum_j w_j |a_j|)` for the objective.
    pub fn local_terms(&self, alpha: &[f64], weights: &[f64], conj_scale: f64) -> Result<(f64, f64)> {
        let mut conj = 0.0;
        let mut l1 = 0.0;
        for ((&a, &y), &w) in alpha.iter().zip(&self.labels).zip(weights) {
            conj += conjugate(self.kind, a, y)?;
            l1 += w * a.abs();
        }
        Ok((conj_scale * conj, l1))
    }

    pub fn surrogate<'a>(
        &'a self,
        alpha: &'a [f64],
        weights: &'a [f64],
        theta_tilde: &'a [f64],
        theta_star: &'a [f64],
        cfg: &TeachingConfig,
        conj_scale: f64,
    ) -> LocalSurrogate<'a> {
        LocalSurrogate {
            teacher: self,
            alpha,
            weights,
            theta_tilde,
            theta_star,
            lambda: cfg.lambda,
            lambda_alpha: cfg.lambda_alpha,
            lambda_theta: cfg.lambda_theta,
            conj_scale,
        }
    }
}

/// The block objective `F_i` seen by one teacher, as a function of the new
/// block value `a = alpha + delta`; every other block is frozen inside
/// `theta_tilde`:
///
/// ```text
/// u(a)  = theta_tilde + (1/lambda) sum_j (a_j - alpha_j) z_j
/// F_i(a) = c sum_j l*(-a_j) + (lambda/2)|u|^2 + lambda_theta |u - theta_star|^2
///          + lambda_alpha sum_j w_j |a_j|
/// ```
pub struct LocalSurrogate<'a> {
    teacher: &'a Teacher,
    alpha: &'a [f64],
    weights: &'a [f64],
    theta_tilde: &'a [f64],
    theta_star: &'a [f64],
    lambda: f64,
    lambda_alpha: f64,
    lambda_theta: f64,
    conj_scale: f64,
}

/// Outcome of [`LocalSurrogate::minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub delta: Vec<f64>,
    pub value_before: f64,
    pub value_after: f64,
    pub iterations: usize,
}

impl LocalSurrogate<'_> {
    fn model_point(&self, a: &[f64]) -> Vec<f64> {
        let t = self.teacher;
        let mut u = self.theta_tilde.to_vec();
        let inv = 1.0 / self.lambda;
        for (j, (&aj, &oj)) in a.iter().zip(self.alpha).enumerate() {
            let moved = aj - oj;
            if moved != 0.0 {
                axpy(moved * inv, t.row(j), &mut u);
            }
        }
        u
    }

    fn quad_value(&self, u: &[f64]) -> f64 {
        let gap: f64 = u
            .iter()
            .zip(self.theta_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        0.5 * self.lambda * norm_sq(u) + self.lambda_theta * gap
    }

    fn conj_value(&self, a: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (&aj, &y) in a.iter().zip(&self.teacher.labels) {
            s += conjugate(self.teacher.kind, aj, y)?;
        }
        Ok(self.conj_scale * s)
    }

    /// Conjugate plus both quadratic terms.
    pub fn smooth_value(&self, a: &[f64]) -> Result<f64> {
        let u = self.model_point(a);
        Ok(self.conj_value(a)? + self.quad_value(&u))
    }

    pub fn penalty(&self, a: &[f64]) -> f64 {
        self.lambda_alpha
            * a.iter()
                .zip(self.weights)
                .map(|(v, w)| w * v.abs())
                .sum::<f64>()
    }

    pub fn value(&self, a: &[f64]) -> Result<f64> {
        Ok(self.smooth_value(a)? + self.penalty(a))
    }

    /// Gradient of [`Self::smooth_value`]. For the logistic loss the
    /// conjugate part is evaluated at the interior clamp.
    pub fn smooth_grad(&self, a: &[f64]) -> Result<Vec<f64>> {
        let u = self.model_point(a);
        self.smooth_grad_at(a, &u)
    }

    fn smooth_grad_at(&self, a: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let t = self.teacher;
        let pull = 2.0 * self.lambda_theta / self.lambda;
        // direction r with d/da_j (quadratics) = <z_j, r>
        let r: Vec<f64> = u
            .iter()
            .zip(self.theta_star)
            .map(|(ui, si)| ui + pull * (ui - si))
            .collect();
        let mut g = Vec::with_capacity(a.len());
        for (j, (&aj, &y)) in a.iter().zip(&t.labels).enumerate() {
            g.push(self.conj_scale * conjugate_grad(t.kind, aj, y)? + dot(t.row(j), &r));
        }
        Ok(g)
    }

    /// Variable-metric proximal gradient with backtracking, started at
    /// `delta = 0`. The metric is diagonal: conjugate curvature plus the
    /// per-example curvature of the quadratic terms. The prox is a
    /// soft-threshold followed by projection onto the conjugate domain.
    ///
    /// Returns a step whose surrogate value never exceeds the value at zero.
    pub fn minimize(&self, max_iter: usize, tol: f64) -> Result<BlockSolution> {
        let t = self.teacher;
        let n = t.len();
        let domain = t.domain();
        let quad_curv = (1.0 + 2.0 * self.lambda_theta / self.lambda) / self.lambda;

        let mut a = self.alpha.to_vec();
        let mut u = self.model_point(&a);
        let mut smooth = self.conj_value(&a)? + self.quad_value(&u);
        let mut total = smooth + self.penalty(&a);
        let value_before = total;

        let mut metric = vec![0.0; n];
        let mut cand = vec![0.0; n];
        let mut scale: f64 = 1.0;
        let mut iterations = 0;

        for _ in 0..max_iter {
            iterations += 1;
            let grad = self.smooth_grad_at(&a, &u)?;
            for j in 0..n {
                metric[j] = self.conj_scale * conjugate_curvature(t.kind, a[j]) + quad_curv * t.z_sq[j];
                if !(metric[j] > 0.0) {
                    metric[j] = 1.0;
                }
            }

            let mut accepted = false;
            let mut step = (2.0 * scale).min(1.0);
            while step > 1e-20 {
                let mut lin = 0.0;
                let mut prox = 0.0;
                for j in 0..n {
                    let h = step / metric[j];
                    let v = soft_threshold(a[j] - h * grad[j], h * self.lambda_alpha * self.weights[j]);
                    cand[j] = domain.project(v);
                    let p = cand[j] - a[j];
                    lin += grad[j] * p;
                    prox += metric[j] * p * p;
                }
                let cu = self.model_point(&cand);
                let cs = self.conj_value(&cand)? + self.quad_value(&cu);
                if !cs.is_finite() {
                    return Err(TeachError::numeric(format!(
                        "teacher {}: non-finite surrogate value",
                        t.id
                    )));
                }
                if cs <= smooth + lin + prox / (2.0 * step) + 1e-12 * smooth.abs().max(1.0) {
                    let ctotal = cs + self.penalty(&cand);
                    if ctotal <= total {
                        let decrease = total - ctotal;
                        std::mem::swap(&mut a, &mut cand);
                        u = cu;
                        smooth = cs;
                        total = ctotal;
                        scale = step;
                        accepted = true;
                        if decrease <= tol * total.abs().max(1.0) {
                            return Ok(self.solution(a, value_before, total, iterations));
                        }
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(self.solution(a, value_before, total, iterations))
    }

    /// Solves the block with the chosen method. Both keep the value at or
    /// below the value at `delta = 0`.
    pub fn solve(&self, solver: BlockSolver, max_iter: usize, tol: f64) -> Result<BlockSolution> {
        match solver {
            BlockSolver::ProxGrad => self.minimize(max_iter, tol),
            BlockSolver::DualNewton => self.solve_dual_newton(max_iter, tol),
        }
    }

    /// Exact block solve through the `d`-dimensional Fenchel dual.
    ///
    /// Writing `phi_j(a) = c l*(-a) + lambda_alpha w_j |a|` (restricted to the
    /// conjugate domain) and `u = b0 + (1/lambda) sum_j a_j z_j`, the block
    /// problem is `sum_j phi_j(a_j) + (m/2)|u - p|^2 + const` with
    /// `m = lambda + 2 lambda_theta` and `p = (2 lambda_theta / m) theta_star`.
    /// Its dual
    ///
    /// ```text
    /// Q(v) = sum_j phi_j*(-<z_j, v> / lambda) + <v, p - b0> + |v|^2 / (2m)
    /// ```
    ///
    /// is smooth and strongly convex in `v`, so damped Newton converges in a
    /// handful of `d x d` solves. The block is recovered coordinatewise as
    /// `a_j = phi_j*'(s_j)`. If round-off leaves the result above the value at
    /// zero, the proximal-gradient solver takes over.
    pub fn solve_dual_newton(&self, max_iter: usize, tol: f64) -> Result<BlockSolution> {
        let t = self.teacher;
        let n = t.len();
        let d = t.dim;
        let value_before = self.value(self.alpha)?;
        if n == 0 {
            return Ok(self.solution(self.alpha.to_vec(), value_before, value_before, 0));
        }
        let m = self.lambda + 2.0 * self.lambda_theta;
        let p: Vec<f64> = self.theta_star.iter().map(|s| 2.0 * self.lambda_theta / m * s).collect();
        let zero = vec![0.0; n];
        let b0 = self.model_point(&zero);
        let shift: Vec<f64> = p.iter().zip(&b0).map(|(p, b)| p - b).collect();
        let inv = 1.0 / self.lambda;

        let q_value = |v: &[f64]| -> f64 {
            let mut s = dot(v, &shift) + norm_sq(v) / (2.0 * m);
            for j in 0..n {
                s += self.phi_star(j, -inv * dot(t.row(j), v)).0;
            }
            s
        };
        // gradient, Hessian
        let q_derivs = |v: &[f64]| -> (Vec<f64>, DMatrix<f64>) {
            let mut g: Vec<f64> = shift.iter().zip(v).map(|(s, vi)| s + vi / m).collect();
            let mut h = DMatrix::<f64>::identity(d, d) / m;
            for j in 0..n {
                let z = t.row(j);
                let (_, d1, d2) = self.phi_star(j, -inv * dot(z, v));
                axpy(-inv * d1, z, &mut g);
                if d2 > 0.0 {
                    let c = d2 * inv * inv;
                    for r in 0..d {
                        let zr = c * z[r];
                        for col in 0..=r {
                            h[(r, col)] += zr * z[col];
                        }
                    }
                }
            }
            for r in 0..d {
                for col in 0..r {
                    h[(col, r)] = h[(r, col)];
                }
            }
            (g, h)
        };

        // start from the dual point consistent with the current block
        let u0 = self.model_point(self.alpha);
        let mut v: Vec<f64> = u0.iter().zip(&p).map(|(u, p)| m * (u - p)).collect();
        let mut q = q_value(&v);
        let mut iterations = 0;
        while iterations < max_iter {
            iterations += 1;
            let (g, h) = q_derivs(&v);
            let gnorm = norm_sq(&g).sqrt();
            if !gnorm.is_finite() || !q.is_finite() {
                return Err(TeachError::numeric(format!("teacher {}: non-finite block dual", t.id)));
            }
            if gnorm <= tol * (1.0 + norm_sq(&v).sqrt() / m) {
                break;
            }
            let step_dir = match h.cholesky() {
                Some(ch) => ch.solve(&DVector::from_iterator(d, g.iter().map(|x| -x))),
                None => DVector::from_iterator(d, g.iter().map(|x| -x * m)),
            };
            let slope: f64 = step_dir.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-12 {
                let cand: Vec<f64> = v.iter().zip(step_dir.iter()).map(|(a, b)| a + step * b).collect();
                let cq = q_value(&cand);
                if cq <= q + 1e-4 * step * slope || (cq - q).abs() <= 1e-15 * q.abs().max(1.0) {
                    moved = cq < q || step == 1.0;
                    v = cand;
                    q = cq;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }

        let domain = t.domain();
        let a: Vec<f64> = (0..n)
            .map(|j| domain.project(self.phi_star(j, -inv * dot(t.row(j), &v)).1))
            .collect();
        let value_after = self.value(&a)?;
        if value_after <= value_before {
            Ok(self.solution(a, value_before, value_after, iterations))
        } else {
            let fallback = self.minimize(max_iter, tol)?;
            Ok(BlockSolution {
                iterations: fallback.iterations + iterations,
                ..fallback
            })
        }
    }

    /// `(phi_j*(s), phi_j*'(s), phi_j*''(s))` for the coordinate function
    /// `phi_j(a) = c l*(-a) + lambda_alpha w_j |a|`.
    fn phi_star(&self, j: usize, s: f64) -> (f64, f64, f64) {
        let c = self.conj_scale;
        let thr = self.lambda_alpha * self.weights[j];
        match self.teacher.kind {
            // a in [0, 1], so |a| = a and the penalty just shifts s
            LossKind::Logistic => {
                let x = (s - thr) / c;
                let sg = sigmoid(x);
                (c * softplus(x), sg, sg * (1.0 - sg) / c)
            }
            LossKind::Squared => {
                let y = self.teacher.labels[j];
                let r = soft_threshold(s + c * y, thr);
                let d2 = if r != 0.0 { 1.0 / c } else { 0.0 };
                (r * r / (2.0 * c), r / c, d2)
            }
        }
    }

    fn solution(&self, a: Vec<f64>, value_before: f64, value_after: f64, iterations: usize) -> BlockSolution {
        let delta = a.iter().zip(self.alpha).map(|(x, o)| x - o).collect();
        BlockSolution {
            delta,
            value_before,
            value_after,
            iterations,
        }
    }
}
