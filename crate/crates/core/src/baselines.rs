//! Comparison strategies and exactness oracles: oblivious per-teacher
//! teaching, random selection, exhaustive subset search at tiny `N`, and the
//! aggregation-bound checker for independently chosen subsets.

use itertools::Itertools;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example, Task, TeacherShard};
use crate::engine::{rank_by_magnitude, run_teaching, SelectionResult, TeachingConfig};
use crate::error::{Result, TeachError};
use crate::learner::{fit_primal_dim, teaching_risk, FitOptions};
use crate::losses::smoothness_bound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Oblivious,
    Random,
    Bruteforce,
}

impl std::str::FromStr for BaselineKind {
    type Err = TeachError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oblivious" => Ok(Self::Oblivious),
            "random" => Ok(Self::Random),
            "bruteforce" => Ok(Self::Bruteforce),
            other => Err(TeachError::param(format!("unknown baseline `{other}`"))),
        }
    }
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Oblivious => "oblivious",
            Self::Random => "random",
            Self::Bruteforce => "bruteforce",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObliviousRun {
    pub selection: SelectionResult,
    /// Longest local run.
    pub rounds_used: usize,
    /// Summed over the private local runs; nothing crosses between teachers.
    pub reals_communicated: usize,
}

/// Local rankings from teachers that never talk to each other.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliviousRankings {
    /// Per teacher, its global indices most important first.
    pub local: Vec<Vec<usize>>,
    pub rounds_used: usize,
    pub reals_communicated: usize,
}

impl ObliviousRankings {
    /// Every teacher keeps its own top `per_teacher_budget` (or its whole
    /// shard if smaller).
    pub fn select(&self, shards: &[TeacherShard], per_teacher_budget: usize) -> Result<ObliviousRun> {
        let k = shards.len();
        let n: usize = shards.iter().map(TeacherShard::len).sum();
        if self.local.len() != k {
            return Err(TeachError::param("rankings and shards disagree on teacher count"));
        }
        if per_teacher_budget == 0 || per_teacher_budget * k > n {
            return Err(TeachError::param(format!(
                "per-teacher budget {per_teacher_budget} x {k} teachers exceeds {n} examples"
            )));
        }
        let selected: Vec<usize> = self
            .local
            .iter()
            .flat_map(|r| r[..per_teacher_budget.min(r.len())].iter().copied())
            .collect();
        // interleave the local rankings: every teacher's first pick, then seconds, ...
        let mut keyed: Vec<(usize, usize)> = self
            .local
            .iter()
            .flat_map(|r| r.iter().enumerate().map(|(rank, &g)| (rank, g)))
            .collect();
        keyed.sort_unstable();
        let ranking = keyed.into_iter().map(|(_, g)| g).collect();
        Ok(ObliviousRun {
            selection: SelectionResult::from_global(shards, &selected, ranking),
            rounds_used: self.rounds_used,
            reals_communicated: self.reals_communicated,
        })
    }
}

/// Each teacher runs the engine alone on its shard with regularization
/// `lambda / K`. No information crosses between teachers.
pub fn oblivious_rankings(
    shards: &[TeacherShard],
    theta_star: &[f64],
    task: Task,
    cfg: &TeachingConfig,
) -> Result<ObliviousRankings> {
    let k = shards.len();
    let local_cfg = TeachingConfig {
        lambda: cfg.lambda / k as f64,
        beta: Vec::new(),
        ..cfg.clone()
    };
    let runs = cfg
        .execution
        .map(shards, |s| -> Result<(Vec<usize>, usize, usize)> {
            let solo = std::slice::from_ref(s);
            let run = run_teaching(solo, theta_star, task, &local_cfg)?;
            let ranking = rank_by_magnitude(&run.state, solo)?;
            Ok((ranking, run.trace.rounds(), run.trace.reals_communicated()))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ObliviousRankings {
        rounds_used: runs.iter().map(|r| r.1).max().unwrap_or(0),
        reals_communicated: runs.iter().map(|r| r.2).sum(),
        local: runs.into_iter().map(|r| r.0).collect(),
    })
}

/// [`oblivious_rankings`], then every teacher keeps its own top
/// `per_teacher_budget` examples; the union goes to the learner.
pub fn oblivious_teach(
    shards: &[TeacherShard],
    theta_star: &[f64],
    task: Task,
    cfg: &TeachingConfig,
    per_teacher_budget: usize,
) -> Result<ObliviousRun> {
    let k = shards.len();
    let n: usize = shards.iter().map(TeacherShard::len).sum();
    if per_teacher_budget == 0 || per_teacher_budget * k > n {
        return Err(TeachError::param(format!(
            "per-teacher budget {per_teacher_budget} x {k} teachers exceeds {n} examples"
        )));
    }
    oblivious_rankings(shards, theta_star, task, cfg)?.select(shards, per_teacher_budget)
}

/// Uniform selection without replacement.
pub fn random_select(shards: &[TeacherShard], budget: usize, seed: u64) -> Result<SelectionResult> {
    let n: usize = shards.iter().map(TeacherShard::len).sum();
    if budget > n {
        return Err(TeachError::param(format!("budget {budget} exceeds {n} examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranking: Vec<usize> = index::sample(&mut rng, n, n).into_vec();
    let selected = ranking[..budget].to_vec();
    Ok(SelectionResult::from_global(shards, &selected, ranking))
}

/// Largest number of subsets [`brute_force_select`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    /// Global indices, ascending.
    pub subset: Vec<usize>,
    pub risk: f64,
    pub theta: Vec<f64>,
    pub evaluated: usize,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exhaustive search over all subsets of exactly `budget` examples for the
/// one whose fit is closest to the target. Ties go to the lexicographically
/// smallest index set.
pub fn brute_force_select(dataset: &Dataset, theta_star: &[f64], lambda: f64, budget: usize) -> Result<BruteForceResult> {
    let n = dataset.len();
    if budget > n {
        return Err(TeachError::param(format!("budget {budget} exceeds {n} examples")));
    }
    let count = binomial(n, budget);
    if count > BRUTE_FORCE_LIMIT {
        return Err(TeachError::Refused {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let kind = dataset.task().loss();
    let opts = FitOptions::default();
    let mut best: Option<BruteForceResult> = None;
    let mut evaluated = 0;
    for combo in (0..n).combinations(budget) {
        let picked: Vec<&Example> = combo.iter().map(|&i| dataset.get(i)).collect();
        let fit = fit_primal_dim(kind, &picked, dataset.dim(), lambda, &opts)?;
        let risk = teaching_risk(&fit.theta, theta_star).0;
        evaluated += 1;
        if best.as_ref().is_none_or(|b| risk < b.risk) {
            best = Some(BruteForceResult {
                subset: combo,
                risk,
                theta: fit.theta,
                evaluated: 0,
            });
        }
    }
    let mut best = best.expect("at least the empty combination is enumerated");
    best.evaluated = evaluated;
    Ok(best)
}

/// Outcome of checking
/// `R(theta_S) <= (tau / (lambda K) + 1 / K^2) * sum_i R(theta_{S_i})`
/// with `R = |theta - theta_star|^2 / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationBoundReport {
    pub lhs: f64,
    pub rhs_factor: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
    pub tau: f64,
    /// Largest gradient norm among all fits, to tell an unconverged fit
    /// from a genuine violation.
    pub max_fit_residual: f64,
}

/// `subsets[i]` holds local indices into shard `i`. Each `S_i` is fitted with
/// `lambda / K`, the union with `lambda`, and `tau` is the largest additive
/// smoothness bound over the `S_i`.
pub fn check_aggregation_bound(
    shards: &[TeacherShard],
    theta_star: &[f64],
    task: Task,
    lambda: f64,
    subsets: &[Vec<usize>],
) -> Result<AggregationBoundReport> {
    let k = shards.len();
    if k == 0 || subsets.len() != k {
        return Err(TeachError::param("need one subset per shard"));
    }
    let dim = theta_star.len();
    let kind = task.loss();
    let opts = FitOptions::default();
    let mut picked_all: Vec<&Example> = Vec::new();
    let mut sum_local = 0.0;
    let mut tau: f64 = 0.0;
    let mut max_fit_residual: f64 = 0.0;
    for (s, sub) in shards.iter().zip(subsets) {
        let picked = sub
            .iter()
            .map(|&j| {
                s.examples
                    .get(j)
                    .ok_or_else(|| TeachError::param(format!("local index {j} outside shard {}", s.teacher_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let owned: Vec<Example> = picked.iter().map(|e| (*e).clone()).collect();
        tau = tau.max(smoothness_bound(kind, &owned));
        let fit = fit_primal_dim(kind, &picked, dim, lambda / k as f64, &opts)?;
        max_fit_residual = max_fit_residual.max(fit.grad_norm);
        sum_local += teaching_risk(&fit.theta, theta_star).1;
        picked_all.extend(picked);
    }
    let joint = fit_primal_dim(kind, &picked_all, dim, lambda, &opts)?;
    max_fit_residual = max_fit_residual.max(joint.grad_norm);
    let lhs = teaching_risk(&joint.theta, theta_star).1;
    let kf = k as f64;
    let rhs_factor = tau / (lambda * kf) + 1.0 / (kf * kf);
    let rhs = rhs_factor * sum_local;
    let slack = rhs - lhs;
    Ok(AggregationBoundReport {
        lhs,
        rhs_factor,
        rhs,
        holds: slack >= 0.0,
        slack,
        tau,
        max_fit_residual,
    })
}
