//! Ranking by dual magnitude, budgeted selection, and budget sweeps.

use std::time::Instant;

use crate::dataset::{union_of_shards, Dataset, Example, Task, TeacherShard};
use crate::engine::session::{run_teaching, TeachingRun};
use crate::engine::{DualState, TeachingConfig};
use crate::error::{Result, TeachError};
use crate::learner::{self, FitOptions, Metrics};

/// Per-teacher selection masks under a global budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub masks: Vec<Vec<bool>>,
    pub budget: usize,
    /// Every global index, most important first.
    pub global_ranking: Vec<usize>,
}

impl SelectionResult {
    /// Builds masks from a set of global indices.
    pub fn from_global(shards: &[TeacherShard], selected: &[usize], global_ranking: Vec<usize>) -> Self {
        // shards may be a subset of a larger partition, so size by the largest offset
        let n = shards
            .iter()
            .flat_map(|s| s.global_offsets.iter().map(|&g| g + 1))
            .chain(selected.iter().map(|&g| g + 1))
            .max()
            .unwrap_or(0);
        let mut chosen = vec![false; n];
        for &g in selected {
            chosen[g] = true;
        }
        let masks = shards
            .iter()
            .map(|s| s.global_offsets.iter().map(|&g| chosen[g]).collect())
            .collect();
        Self {
            masks,
            budget: selected.len(),
            global_ranking,
        }
    }

    /// Selected global indices, ascending.
    pub fn selected_global(&self, shards: &[TeacherShard]) -> Vec<usize> {
        let mut out: Vec<usize> = shards
            .iter()
            .zip(&self.masks)
            .flat_map(|(s, m)| {
                s.global_offsets
                    .iter()
                    .zip(m)
                    .filter(|(_, &keep)| keep)
                    .map(|(&g, _)| g)
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Selected examples in ascending global order, so a full selection
    /// presents the learner exactly the original dataset.
    pub fn selected_examples<'a>(&self, shards: &'a [TeacherShard]) -> Vec<&'a Example> {
        let mut keyed: Vec<(usize, &Example)> = shards
            .iter()
            .zip(&self.masks)
            .flat_map(|(s, m)| {
                s.global_offsets
                    .iter()
                    .zip(&s.examples)
                    .zip(m)
                    .filter(|(_, &k)| k)
                    .map(|((&g, e), _)| (g, e))
            })
            .collect();
        keyed.sort_unstable_by_key(|(g, _)| *g);
        keyed.into_iter().map(|(_, e)| e).collect()
    }

    pub fn count(&self) -> usize {
        self.masks.iter().flatten().filter(|&&b| b).count()
    }
}

/// `round(fraction * n)`, at least 1.
pub fn budget_for(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Global ranking by `|alpha|` descending, ties by ascending global index.
pub fn rank_by_magnitude(state: &DualState, shards: &[TeacherShard]) -> Result<Vec<usize>> {
    if state.alpha.len() != shards.len() {
        return Err(TeachError::param("state and shards disagree on teacher count"));
    }
    let mut entries: Vec<(f64, usize)> = Vec::with_capacity(state.len());
    for (block, s) in state.alpha.iter().zip(shards) {
        if block.len() != s.len() {
            return Err(TeachError::param("state block size differs from shard size"));
        }
        entries.extend(block.iter().zip(&s.global_offsets).map(|(a, &g)| (a.abs(), g)));
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(entries.into_iter().map(|(_, g)| g).collect())
}

/// Marks the `budget` largest-magnitude dual variables.
pub fn select_subset(state: &DualState, shards: &[TeacherShard], budget: usize) -> Result<SelectionResult> {
    let n = state.len();
    if budget == 0 || budget > n {
        return Err(TeachError::param(format!("budget {budget} outside [1, {n}]")));
    }
    let ranking = rank_by_magnitude(state, shards)?;
    let top = ranking[..budget].to_vec();
    Ok(SelectionResult::from_global(shards, &top, ranking))
}

/// Fits the learner on a selection and scores it on the whole dataset.
pub fn evaluate_selection(
    selection: &SelectionResult,
    shards: &[TeacherShard],
    dataset: &Dataset,
    theta_star: &[f64],
    lambda: f64,
    risk_full: f64,
    runtime_seconds: f64,
) -> Result<(Vec<f64>, Metrics)> {
    let chosen = selection.selected_examples(shards);
    let fit = learner::fit_primal_dim(
        dataset.task().loss(),
        &chosen,
        dataset.dim(),
        lambda,
        &FitOptions::default(),
    )?;
    let metrics = Metrics::evaluate(&fit.theta, theta_star, dataset, risk_full, runtime_seconds)?;
    Ok((fit.theta, metrics))
}

/// Full-data fit and its Euclidean risk.
pub fn full_fit(dataset: &Dataset, theta_star: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let fit = learner::fit_primal_dim(
        dataset.task().loss(),
        dataset.examples(),
        dataset.dim(),
        lambda,
        &FitOptions::default(),
    )?;
    let risk = learner::teaching_risk(&fit.theta, theta_star).0;
    Ok((fit.theta, risk))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub budget: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub run: TeachingRun,
    pub rows: Vec<SweepRow>,
    pub risk_full: f64,
}

impl SweepTable {
    /// Row with the smallest Euclidean risk (first one on ties).
    pub fn best(&self) -> &SweepRow {
        self.rows
            .iter()
            .min_by(|a, b| a.metrics.risk_euclid.total_cmp(&b.metrics.risk_euclid))
            .expect("sweep has at least one row")
    }

    pub fn best_fraction(&self) -> f64 {
        self.best().fraction
    }
}

/// One teaching run, then select / fit / score for every budget fraction.
pub fn sweep_budgets(
    shards: &[TeacherShard],
    theta_star: &[f64],
    task: Task,
    cfg: &TeachingConfig,
    fractions: &[f64],
) -> Result<SweepTable> {
    if fractions.is_empty() {
        return Err(TeachError::param("no budget fractions given"));
    }
    for w in fractions.windows(2) {
        if w[0] > w[1] {
            return Err(TeachError::param("budget fractions must be sorted"));
        }
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(TeachError::param(format!("budget fraction {f} outside (0, 1]")));
    }
    let dataset = union_of_shards(task, theta_star.len(), shards)?;
    let start = Instant::now();
    let run = run_teaching(shards, theta_star, task, cfg)?;
    let ranking = rank_by_magnitude(&run.state, shards)?;
    let teach_seconds = start.elapsed().as_secs_f64();
    let (_, risk_full) = full_fit(&dataset, theta_star, cfg.lambda)?;

    let n = dataset.len();
    let rows = cfg
        .execution
        .map(fractions, |&fraction| -> Result<SweepRow> {
            let budget = budget_for(fraction, n);
            let sel = SelectionResult::from_global(shards, &ranking[..budget], ranking.clone());
            let (_, metrics) = evaluate_selection(&sel, shards, &dataset, theta_star, cfg.lambda, risk_full, teach_seconds)?;
            Ok(SweepRow {
                fraction,
                budget,
                metrics,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        run,
        rows,
        risk_full,
    })
}
