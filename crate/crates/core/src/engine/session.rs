//! Bulk-synchronous rounds: every teacher solves its block against the
//! round-(t-1) aggregate, then the coordinator folds the changes in
//! ascending teacher order and broadcasts the new aggregate.

use std::time::Instant;

use crate::dataset::{Task, TeacherShard};
use crate::engine::coordinator::{Coordinator, LocalAggregate};
use crate::engine::teacher::{Teacher, WeightVector};
use crate::engine::trace::{RoundRecord, RunTrace};
use crate::engine::{DualState, TeachingConfig};
use crate::error::{Result, TeachError};
use crate::vecops::dist;

/// Reals moved per round in each direction: one `d`-vector per teacher.
pub fn reals_per_round(teachers: usize, dim: usize) -> usize {
    teachers * dim
}

pub struct Session {
    task: Task,
    dim: usize,
    teachers: Vec<Teacher>,
    coordinator: Coordinator,
    theta_star: Vec<f64>,
    cfg: TeachingConfig,
    weights: Vec<WeightVector>,
    state: DualState,
    conj_scale: f64,
    trace: RunTrace,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TeachingRun {
    pub state: DualState,
    pub trace: RunTrace,
    pub weights: Vec<WeightVector>,
    /// Wall clock of the round loop (warm start included, I/O excluded).
    pub runtime_seconds: f64,
}

impl Session {
    /// Builds the teachers and computes the adaptive warm-start weights.
    pub fn new(shards: &[TeacherShard], theta_star: &[f64], task: Task, cfg: &TeachingConfig) -> Result<Self> {
        let dim = theta_star.len();
        let sizes: Vec<usize> = shards.iter().map(TeacherShard::len).collect();
        Self::resume(shards, theta_star, task, cfg, DualState::zeros(&sizes, dim))
    }

    /// Continues from a saved state.
    pub fn resume(
        shards: &[TeacherShard],
        theta_star: &[f64],
        task: Task,
        cfg: &TeachingConfig,
        state: DualState,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(TeachError::param("need at least one teacher shard"));
        }
        cfg.validate(shards.len())?;
        let dim = theta_star.len();
        if dim == 0 {
            return Err(TeachError::param("target has dimension zero"));
        }
        if state.alpha.len() != shards.len()
            || state.theta_tilde.len() != dim
            || state.block_sizes() != shards.iter().map(TeacherShard::len).collect::<Vec<_>>()
        {
            return Err(TeachError::param("dual state does not match the shards"));
        }
        let teachers = shards
            .iter()
            .map(|s| Teacher::new(s, task, dim))
            .collect::<Result<Vec<_>>>()?;
        let coordinator = Coordinator::new(dim, cfg.lambda);

        let grams = cfg.execution.map(&teachers, Teacher::local_gram);
        let direction = coordinator.warm_start_direction(&grams, theta_star, cfg.ols_eps)?;
        let weights = cfg
            .execution
            .map(&teachers, |t| t.warm_weights(&direction, cfg.lambda, cfg.w_max))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let n: usize = teachers.iter().map(Teacher::len).sum();
        let conj_scale = if cfg.normalize_conjugate && n > 0 {
            1.0 / n as f64
        } else {
            1.0
        };
        let mut session = Self {
            task,
            dim,
            teachers,
            coordinator,
            theta_star: theta_star.to_vec(),
            cfg: cfg.clone(),
            weights,
            state,
            conj_scale,
            trace: RunTrace::default(),
        };
        let initial = session.objective_value()?;
        session.trace = RunTrace::with_capacity(initial, cfg.rounds);
        Ok(session)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn teachers(&self) -> &[Teacher] {
        &self.teachers
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn state(&self) -> &DualState {
        &self.state
    }

    pub fn weights(&self) -> &[WeightVector] {
        &self.weights
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn config(&self) -> &TeachingConfig {
        &self.cfg
    }

    /// `(1/lambda) sum alpha z` rebuilt from the teachers' aggregates.
    pub fn theta_from_scratch(&self) -> Result<Vec<f64>> {
        let state = &self.state;
        let aggs = self
            .cfg
            .execution
            .map_range(self.teachers.len(), |i| self.teachers[i].aggregate(&state.alpha[i]));
        self.coordinator.assemble(&aggs)
    }

    /// Objective of the current state.
    pub fn objective_value(&self) -> Result<f64> {
        let theta = self.theta_from_scratch()?;
        self.objective_with_theta(&theta)
    }

    fn objective_with_theta(&self, theta: &[f64]) -> Result<f64> {
        let state = &self.state;
        let terms = self.cfg.execution.map_range(self.teachers.len(), |i| {
            self.teachers[i].local_terms(&state.alpha[i], &self.weights[i], self.conj_scale)
        });
        let mut conj = 0.0;
        let mut l1 = 0.0;
        for t in terms {
            let (c, w) = t?;
            conj += c;
            l1 += w;
        }
        let gap = dist(theta, &self.theta_star);
        let norm_sq: f64 = theta.iter().map(|v| v * v).sum();
        Ok(conj
            + 0.5 * self.cfg.lambda * norm_sq
            + self.cfg.lambda_theta * gap * gap
            + self.cfg.lambda_alpha * l1)
    }

    /// Teacher-side block solves for the next round, in teacher order.
    pub fn block_deltas(&self) -> Result<Vec<Vec<f64>>> {
        let round = self.state.round + 1;
        let state = &self.state;
        let cfg = &self.cfg;
        self.cfg
            .execution
            .map_range(self.teachers.len(), |i| {
                let t = &self.teachers[i];
                t.surrogate(
                    &state.alpha[i],
                    &self.weights[i],
                    &state.theta_tilde,
                    &self.theta_star,
                    cfg,
                    self.conj_scale,
                )
                .solve(cfg.block_solver, cfg.inner_max_iter, cfg.inner_tol)
                .map(|s| s.delta)
                .map_err(|e| TeachError::Block {
                    round,
                    teacher: t.id(),
                    source: Box::new(e),
                })
            })
            .into_iter()
            .collect()
    }

    /// Runs one round and appends its record to the trace.
    pub fn step(&mut self) -> Result<&RoundRecord> {
        let deltas = self.block_deltas()?;
        let (next, up, down) = apply_and_reduce(&self.state, &self.teachers, &self.coordinator, &deltas, &self.cfg)?;
        self.state = next;
        let theta = self.theta_from_scratch()?;
        let objective = self.objective_with_theta(&theta)?;
        if !objective.is_finite() {
            return Err(TeachError::numeric(format!(
                "objective is not finite after round {}",
                self.state.round
            )));
        }
        self.trace.records.push(RoundRecord {
            round: self.state.round,
            objective,
            risk: Some(dist(&theta, &self.theta_star)),
            reals_up: up,
            reals_down: down,
        });
        Ok(self.trace.records.last().expect("just pushed"))
    }

    /// Runs up to `cfg.rounds` rounds, stopping early on `outer_tol`.
    /// `observe` sees every finished round.
    pub fn run_with(&mut self, mut observe: impl FnMut(&Session)) -> Result<()> {
        let mut prev = self.trace.final_objective();
        for _ in 0..self.cfg.rounds {
            let round = self.state.round + 1;
            let objective = match self.step() {
                Ok(r) => r.objective,
                Err(e) => {
                    return Err(TeachError::RunAborted {
                        round,
                        trace: Box::new(self.trace.clone()),
                        source: Box::new(e),
                    })
                }
            };
            observe(self);
            if self.cfg.outer_tol > 0.0 && (prev - objective).abs() <= self.cfg.outer_tol * prev.abs().max(1.0) {
                break;
            }
            prev = objective;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TeachingRun> {
        let start = Instant::now();
        self.run_with(|_| {})?;
        Ok(self.finish(start.elapsed().as_secs_f64()))
    }

    pub fn finish(self, runtime_seconds: f64) -> TeachingRun {
        TeachingRun {
            state: self.state,
            trace: self.trace,
            weights: self.weights,
            runtime_seconds,
        }
    }
}

/// Applies `alpha_i <- P(alpha_i + (beta_i / K) delta_i)` on every teacher and
/// folds the aggregate changes into `theta_tilde`. Returns the new state and
/// the reals sent up and down this round.
pub fn apply_and_reduce(
    state: &DualState,
    teachers: &[Teacher],
    coordinator: &Coordinator,
    deltas: &[Vec<f64>],
    cfg: &TeachingConfig,
) -> Result<(DualState, usize, usize)> {
    let k = teachers.len();
    if deltas.len() != k || state.alpha.len() != k {
        return Err(TeachError::param(format!(
            "expected {k} delta blocks, got {}",
            deltas.len()
        )));
    }
    for (i, (d, a)) in deltas.iter().zip(&state.alpha).enumerate() {
        if d.len() != a.len() || a.len() != teachers[i].len() {
            return Err(TeachError::param(format!("delta block {i} has the wrong length")));
        }
    }
    let applied: Vec<(Vec<f64>, LocalAggregate)> = cfg.execution.map_range(k, |i| {
        let step = cfg.beta_for(i) / k as f64;
        teachers[i].apply(&state.alpha[i], &deltas[i], step)
    });
    let mut alpha = Vec::with_capacity(k);
    let mut changes = Vec::with_capacity(k);
    for (a, c) in applied {
        alpha.push(a);
        changes.push(c);
    }
    let up: usize = changes.iter().map(LocalAggregate::reals).sum();
    let theta_tilde = coordinator.reduce(&state.theta_tilde, &changes)?;
    let down = k * theta_tilde.len();
    Ok((
        DualState {
            alpha,
            theta_tilde,
            round: state.round + 1,
        },
        up,
        down,
    ))
}

/// Evaluates the teaching objective for an arbitrary dual state.
pub fn objective(
    alpha: &[Vec<f64>],
    shards: &[TeacherShard],
    theta_star: &[f64],
    task: Task,
    cfg: &TeachingConfig,
    weights: &[WeightVector],
) -> Result<f64> {
    if alpha.len() != shards.len() || weights.len() != shards.len() {
        return Err(TeachError::param("alpha, weights and shards disagree"));
    }
    let dim = theta_star.len();
    let n: usize = shards.iter().map(TeacherShard::len).sum();
    let conj_scale = if cfg.normalize_conjugate && n > 0 {
        1.0 / n as f64
    } else {
        1.0
    };
    let coordinator = Coordinator::new(dim, cfg.lambda);
    let mut aggs = Vec::with_capacity(shards.len());
    let mut conj = 0.0;
    let mut l1 = 0.0;
    for ((s, a), w) in shards.iter().zip(alpha).zip(weights) {
        let t = Teacher::new(s, task, dim)?;
        if a.len() != t.len() || w.len() != t.len() {
            return Err(TeachError::param("block sizes disagree with shard sizes"));
        }
        let (c, p) = t.local_terms(a, w, conj_scale)?;
        conj += c;
        l1 += p;
        aggs.push(t.aggregate(a));
    }
    let theta = coordinator.assemble(&aggs)?;
    let gap = dist(&theta, theta_star);
    let norm_sq: f64 = theta.iter().map(|v| v * v).sum();
    Ok(conj + 0.5 * cfg.lambda * norm_sq + cfg.lambda_theta * gap * gap + cfg.lambda_alpha * l1)
}

/// Warm start, then up to `cfg.rounds` rounds from `alpha = 0`.
pub fn run_teaching(
    shards: &[TeacherShard],
    theta_star: &[f64],
    task: Task,
    cfg: &TeachingConfig,
) -> Result<TeachingRun> {
    let start = Instant::now();
    let mut session = Session::new(shards, theta_star, task, cfg)?;
    session.run_with(|_| {})?;
    Ok(session.finish(start.elapsed().as_secs_f64()))
}
