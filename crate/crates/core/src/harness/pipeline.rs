//! Subcommand pipelines. Every stage error is tagged with the stage name, and
//! every artifact is a pure function of the config (runtimes aside, which
//! `report_runtime = false` pins to zero).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::baselines::{brute_force_select, oblivious_rankings, random_select, BaselineKind, ObliviousRankings};
use crate::checks::{run_check, CheckReport, Property};
use crate::dataset::{gen_synthetic, load_csv, make_target, shard, Dataset, TeacherShard, TeachingGoal};
use crate::engine::{
    budget_for, evaluate_selection, full_fit, rank_by_magnitude, run_teaching, sweep_budgets, DualState, RunTrace,
    SelectionResult, TeachingRun,
};
use crate::error::{Result, TeachError};
use crate::learner::Metrics;

use super::config::{DataSource, ExperimentConfig};

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub n: usize,
    pub k: usize,
    pub budget_fraction: f64,
    pub risk_euclid: f64,
    pub rho: f64,
    pub teaching_ratio: f64,
    pub rounds_used: usize,
    pub runtime_seconds: f64,
    pub reals_communicated: usize,
}

pub const RESULT_HEADER: &str =
    "method,N,K,budget_fraction,risk_euclid,rho,teaching_ratio,rounds_used,runtime_seconds,reals_communicated";

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n,
            r.k,
            r.budget_fraction,
            r.risk_euclid,
            r.rho,
            r.teaching_ratio,
            r.rounds_used,
            r.runtime_seconds,
            r.reals_communicated
        );
    }
    s
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
    /// Human-readable one-liner for the terminal.
    pub summary: String,
    /// False only for a failed property check.
    pub passed: bool,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Output directory plus the files written so far and a run log.
struct Sink {
    dir: PathBuf,
    files: Vec<PathBuf>,
    log: String,
}

impl Sink {
    fn open(dir: &Path) -> Result<Self> {
        stage(
            "write",
            fs::create_dir_all(dir).map_err(|e| TeachError::Io {
                path: dir.to_path_buf(),
                source: e,
            }),
        )?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            log: String::new(),
        })
    }

    fn log(&mut self, line: impl AsRef<str>) {
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        stage(
            "write",
            fs::write(&path, contents).map_err(|e| TeachError::Io {
                path: path.clone(),
                source: e,
            }),
        )?;
        self.files.push(path.clone());
        Ok(path)
    }

    /// Writes `<stem>.log`, recording the error too when there is one.
    fn finish<T>(mut self, stem: &str, result: Result<T>) -> Result<(T, Vec<PathBuf>)> {
        match result {
            Ok(v) => {
                self.log("status=ok");
                let log = std::mem::take(&mut self.log);
                self.write(&format!("{stem}.log"), &log)?;
                Ok((v, self.files))
            }
            Err(e) => {
                self.log(format!("status=error\nerror={e}"));
                let log = std::mem::take(&mut self.log);
                // best effort: the original error matters more than a log failure
                let _ = self.write(&format!("{stem}.log"), &log);
                Err(e)
            }
        }
    }
}

fn runtime(cfg: &ExperimentConfig, seconds: f64) -> f64 {
    if cfg.report_runtime {
        seconds
    } else {
        0.0
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    stage(
        "data",
        match &cfg.data {
            DataSource::Synthetic => gen_synthetic(&cfg.synthetic),
            DataSource::Csv(path) => load_csv(path, cfg.task, &cfg.label_column, cfg.remap_labels),
        },
    )
}

/// Reads the target file, or derives the target from the data.
pub fn load_goal(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<TeachingGoal> {
    let goal = match &cfg.target {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| TeachError::io(path, e));
            stage("target", text.and_then(|t| TeachingGoal::from_text(&t)))?
        }
        None => stage(
            "target",
            make_target(dataset, cfg.teaching.lambda, cfg.target_noise, cfg.seed),
        )?,
    };
    if goal.theta_star.len() != dataset.dim() {
        return Err(TeachError::param(format!(
            "target has dimension {} but the data has {}",
            goal.theta_star.len(),
            dataset.dim()
        ))
        .in_stage("target"));
    }
    Ok(goal)
}

fn load_all(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(Dataset, TeachingGoal, Vec<TeacherShard>)> {
    let ds = load_dataset(cfg)?;
    sink.log(format!("data task={} n={} d={}", ds.task(), ds.len(), ds.dim()));
    let goal = load_goal(cfg, &ds)?;
    sink.log(format!(
        "target source={} noise_ratio={}",
        if cfg.target.is_some() { "file" } else { "derived" },
        goal.noise_ratio
    ));
    let shards = stage("shard", shard(&ds, cfg.teachers, cfg.seed))?;
    sink.log(format!(
        "shard k={} sizes={}",
        shards.len(),
        shards.iter().map(|s| s.len().to_string()).collect::<Vec<_>>().join(",")
    ));
    Ok((ds, goal, shards))
}

/// Runs the engine; an aborted run still leaves its partial trace behind.
fn teach_stage(
    cfg: &ExperimentConfig,
    sink: &mut Sink,
    stem: &str,
    shards: &[TeacherShard],
    goal: &TeachingGoal,
) -> Result<TeachingRun> {
    match run_teaching(shards, &goal.theta_star, cfg.task, &cfg.teaching) {
        Ok(run) => Ok(run),
        Err(e) => {
            if let TeachError::RunAborted { trace, .. } = &e {
                sink.write(&format!("{stem}_trace.csv"), &trace.to_csv())?;
            }
            Err(e.in_stage("teach"))
        }
    }
}

fn log_trace(sink: &mut Sink, trace: &RunTrace) {
    sink.log(format!(
        "teach rounds={} initial_objective={} final_objective={} max_increase={} reals={}",
        trace.rounds(),
        trace.initial_objective,
        trace.final_objective(),
        trace.max_increase(),
        trace.reals_communicated()
    ));
}

fn row(cfg: &ExperimentConfig, method: &str, n: usize, fraction: f64, m: &Metrics, rounds: usize, reals: usize) -> ResultRow {
    ResultRow {
        method: method.to_string(),
        n,
        k: cfg.teachers,
        budget_fraction: fraction,
        risk_euclid: m.risk_euclid,
        rho: m.rho,
        teaching_ratio: m.teaching_ratio,
        rounds_used: rounds,
        runtime_seconds: m.runtime_seconds,
        reals_communicated: reals,
    }
}

/// `rank,global_index,teacher,local_index,alpha` for every selected example.
fn manifest(sel: &SelectionResult, shards: &[TeacherShard], state: Option<&DualState>) -> String {
    let n = shards.iter().flat_map(|s| s.global_offsets.iter().map(|&g| g + 1)).max().unwrap_or(0);
    let mut where_is = vec![(0usize, 0usize); n];
    for (t, s) in shards.iter().enumerate() {
        for (local, &g) in s.global_offsets.iter().enumerate() {
            where_is[g] = (t, local);
        }
    }
    let chosen = sel.selected_global(shards);
    let mut out = String::from("rank,global_index,teacher,local_index,alpha\n");
    let mut rank = 0;
    for &g in &sel.global_ranking {
        if g >= n || chosen.binary_search(&g).is_err() {
            continue;
        }
        let (t, l) = where_is[g];
        let alpha = state.map(|st| st.alpha[t][l].to_string()).unwrap_or_default();
        let _ = writeln!(out, "{rank},{g},{t},{l},{alpha}");
        rank += 1;
    }
    out
}

/// `generate`: writes `data.csv` and its `.meta` sidecar.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.data != DataSource::Synthetic {
        return Err(TeachError::Config {
            key: "data".into(),
            message: "generate needs data=synthetic".into(),
        }
        .in_stage("config"));
    }
    let mut sink = Sink::open(&cfg.out)?;
    let result = (|| {
        let ds = load_dataset(cfg)?;
        let path = sink.dir.join("data.csv");
        stage("write", ds.write_csv(&path, Some(cfg.seed)))?;
        sink.files.push(path.clone());
        sink.files.push(crate::dataset::sidecar_path(&path));
        sink.log(format!("generate task={} n={} d={}", ds.task(), ds.len(), ds.dim()));
        Ok(format!("wrote {} examples to {}", ds.len(), path.display()))
    })();
    let (summary, files) = sink.finish("generate", result)?;
    Ok(Outcome {
        files,
        rows: Vec::new(),
        summary,
        passed: true,
    })
}

/// `make-target`: fits the full data and writes the perturbed target.
pub fn cmd_make_target(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut sink = Sink::open(&cfg.out)?;
    let result = (|| {
        let ds = load_dataset(cfg)?;
        let goal = stage(
            "target",
            make_target(&ds, cfg.teaching.lambda, cfg.target_noise, cfg.seed),
        )?;
        let path = sink.write("target.txt", &goal.to_text())?;
        sink.log(format!("target d={} noise_ratio={}", ds.dim(), goal.noise_ratio));
        Ok(format!("wrote target to {}", path.display()))
    })();
    let (summary, files) = sink.finish("make_target", result)?;
    Ok(Outcome {
        files,
        rows: Vec::new(),
        summary,
        passed: true,
    })
}

/// `teach`: shard, run the engine, select the budget, refit, score.
pub fn cmd_teach(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut sink = Sink::open(&cfg.out)?;
    sink.write("teach_config.txt", &cfg.to_text())?;
    let result = (|| {
        let (ds, goal, shards) = load_all(cfg, &mut sink)?;
        let start = Instant::now();
        let run = teach_stage(cfg, &mut sink, "teach", &shards, &goal)?;
        let ranking = stage("select", rank_by_magnitude(&run.state, &shards))?;
        let seconds = runtime(cfg, start.elapsed().as_secs_f64());
        log_trace(&mut sink, &run.trace);

        let n = ds.len();
        let budget = budget_for(cfg.budget, n);
        let top = ranking[..budget].to_vec();
        let sel = SelectionResult::from_global(&shards, &top, ranking);
        let (_, risk_full) = stage("fit", full_fit(&ds, &goal.theta_star, cfg.teaching.lambda))?;
        let (theta_hat, metrics) = stage(
            "fit",
            evaluate_selection(&sel, &shards, &ds, &goal.theta_star, cfg.teaching.lambda, risk_full, seconds),
        )?;
        sink.log(format!(
            "select budget={budget} risk={} ratio={} rho={}",
            metrics.risk_euclid, metrics.teaching_ratio, metrics.rho
        ));
        let rows = vec![row(
            cfg,
            "collaborative",
            n,
            cfg.budget,
            &metrics,
            run.trace.rounds(),
            run.trace.reals_communicated(),
        )];

        sink.write("teach.csv", &results_csv(&rows))?;
        sink.write("teach_trace.csv", &run.trace.to_csv())?;
        sink.write("teach_selection.csv", &manifest(&sel, &shards, Some(&run.state)))?;
        sink.write("teach_state.snap", &run.state.to_snapshot())?;
        let doc = json!({
            "method": "collaborative",
            "n": n,
            "k": cfg.teachers,
            "d": ds.dim(),
            "budget": budget,
            "budget_fraction": cfg.budget,
            "risk_full": risk_full,
            "metrics": metrics,
            "rounds_used": run.trace.rounds(),
            "reals_communicated": run.trace.reals_communicated(),
            "initial_objective": run.trace.initial_objective,
            "final_objective": run.trace.final_objective(),
            "max_objective_increase": run.trace.max_increase(),
            "theta_hat": theta_hat,
            "theta_star": goal.theta_star,
        });
        sink.write("teach_metrics.json", &pretty(&doc))?;
        let summary = format!(
            "collaborative: budget {budget}/{n}, risk {:.4}, ratio {:.4}, rho {:.4}, {} rounds",
            metrics.risk_euclid,
            metrics.teaching_ratio,
            metrics.rho,
            run.trace.rounds()
        );
        Ok((rows, summary))
    })();
    let ((rows, summary), files) = sink.finish("teach", result)?;
    Ok(Outcome {
        files,
        rows,
        summary,
        passed: true,
    })
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Per-teacher share of a global budget for the oblivious baseline.
pub fn oblivious_share(budget: usize, teachers: usize) -> usize {
    (budget / teachers).max(1)
}

struct BaselineEval {
    selection: SelectionResult,
    metrics: Metrics,
    rounds: usize,
    reals: usize,
}

#[allow(clippy::too_many_arguments)]
fn eval_oblivious(
    cfg: &ExperimentConfig,
    rankings: &ObliviousRankings,
    rank_seconds: f64,
    shards: &[TeacherShard],
    ds: &Dataset,
    goal: &TeachingGoal,
    budget: usize,
    risk_full: f64,
) -> Result<BaselineEval> {
    let start = Instant::now();
    let run = stage("baseline", rankings.select(shards, oblivious_share(budget, cfg.teachers)))?;
    let seconds = runtime(cfg, rank_seconds + start.elapsed().as_secs_f64());
    let (_, metrics) = stage(
        "fit",
        evaluate_selection(&run.selection, shards, ds, &goal.theta_star, cfg.teaching.lambda, risk_full, seconds),
    )?;
    Ok(BaselineEval {
        selection: run.selection,
        metrics,
        rounds: run.rounds_used,
        reals: run.reals_communicated,
    })
}

fn eval_random(
    cfg: &ExperimentConfig,
    shards: &[TeacherShard],
    ds: &Dataset,
    goal: &TeachingGoal,
    budget: usize,
    risk_full: f64,
) -> Result<BaselineEval> {
    let start = Instant::now();
    let selection = stage("baseline", random_select(shards, budget, cfg.seed))?;
    let seconds = runtime(cfg, start.elapsed().as_secs_f64());
    let (_, metrics) = stage(
        "fit",
        evaluate_selection(&selection, shards, ds, &goal.theta_star, cfg.teaching.lambda, risk_full, seconds),
    )?;
    Ok(BaselineEval {
        selection,
        metrics,
        rounds: 0,
        reals: 0,
    })
}

/// `baseline`: one comparison strategy at the configured budget.
pub fn cmd_baseline(cfg: &ExperimentConfig, kind: BaselineKind) -> Result<Outcome> {
    let mut sink = Sink::open(&cfg.out)?;
    let stem = format!("baseline_{}", kind.as_str());
    sink.write(&format!("{stem}_config.txt"), &cfg.to_text())?;
    let result = (|| {
        let (ds, goal, shards) = load_all(cfg, &mut sink)?;
        let n = ds.len();
        let budget = budget_for(cfg.budget, n);
        let (_, risk_full) = stage("fit", full_fit(&ds, &goal.theta_star, cfg.teaching.lambda))?;
        let mut extra = json!({});
        let (selection, metrics, rounds, reals, fraction) = match kind {
            BaselineKind::Oblivious => {
                let start = Instant::now();
                let rankings = stage("baseline", oblivious_rankings(&shards, &goal.theta_star, cfg.task, &cfg.teaching))?;
                let rank_seconds = start.elapsed().as_secs_f64();
                let e = eval_oblivious(cfg, &rankings, rank_seconds, &shards, &ds, &goal, budget, risk_full)?;
                extra = json!({ "per_teacher_budget": oblivious_share(budget, cfg.teachers) });
                (e.selection, e.metrics, e.rounds, e.reals, cfg.budget)
            }
            BaselineKind::Random => {
                let e = eval_random(cfg, &shards, &ds, &goal, budget, risk_full)?;
                (e.selection, e.metrics, e.rounds, e.reals, cfg.budget)
            }
            BaselineKind::Bruteforce => {
                let start = Instant::now();
                let bf = stage(
                    "baseline",
                    brute_force_select(&ds, &goal.theta_star, cfg.teaching.lambda, budget),
                )?;
                let seconds = runtime(cfg, start.elapsed().as_secs_f64());
                let metrics = stage("fit", Metrics::evaluate(&bf.theta, &goal.theta_star, &ds, risk_full, seconds))?;
                sink.log(format!("bruteforce evaluated={}", bf.evaluated));
                extra = json!({ "subsets_evaluated": bf.evaluated });
                let sel = SelectionResult::from_global(&shards, &bf.subset, bf.subset.clone());
                (sel, metrics, 0, 0, cfg.budget)
            }
        };
        sink.log(format!(
            "{} budget={budget} risk={} ratio={} rho={}",
            kind.as_str(),
            metrics.risk_euclid,
            metrics.teaching_ratio,
            metrics.rho
        ));
        let rows = vec![row(cfg, kind.as_str(), n, fraction, &metrics, rounds, reals)];
        sink.write(&format!("{stem}.csv"), &results_csv(&rows))?;
        sink.write(&format!("{stem}_selection.csv"), &manifest(&selection, &shards, None))?;
        let doc = json!({
            "method": kind.as_str(),
            "n": n,
            "k": cfg.teachers,
            "budget": budget,
            "budget_fraction": fraction,
            "risk_full": risk_full,
            "metrics": metrics,
            "rounds_used": rounds,
            "reals_communicated": reals,
            "details": extra,
        });
        sink.write(&format!("{stem}_metrics.json"), &pretty(&doc))?;
        let summary = format!(
            "{}: budget {budget}/{n}, risk {:.4}, ratio {:.4}, rho {:.4}",
            kind.as_str(),
            metrics.risk_euclid,
            metrics.teaching_ratio,
            metrics.rho
        );
        Ok((rows, summary))
    })();
    let ((rows, summary), files) = sink.finish(&stem, result)?;
    Ok(Outcome {
        files,
        rows,
        summary,
        passed: true,
    })
}

/// `sweep`: one teaching run scored at every budget fraction, plus the
/// configured baselines at the same fractions.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut sink = Sink::open(&cfg.out)?;
    sink.write("sweep_config.txt", &cfg.to_text())?;
    let result = (|| {
        let (ds, goal, shards) = load_all(cfg, &mut sink)?;
        let n = ds.len();
        let table = match sweep_budgets(&shards, &goal.theta_star, cfg.task, &cfg.teaching, &cfg.fractions) {
            Ok(t) => t,
            Err(e) => {
                if let TeachError::RunAborted { trace, .. } = &e {
                    sink.write("sweep_trace.csv", &trace.to_csv())?;
                }
                return Err(e.in_stage("teach"));
            }
        };
        log_trace(&mut sink, &table.run.trace);
        let trace = &table.run.trace;
        let mut rows: Vec<ResultRow> = table
            .rows
            .iter()
            .map(|r| {
                let mut m = r.metrics.clone();
                m.runtime_seconds = runtime(cfg, m.runtime_seconds);
                row(cfg, "collaborative", n, r.fraction, &m, trace.rounds(), trace.reals_communicated())
            })
            .collect();

        for kind in &cfg.baselines {
            match kind {
                BaselineKind::Oblivious => {
                    let start = Instant::now();
                    let rankings = stage("baseline", oblivious_rankings(&shards, &goal.theta_star, cfg.task, &cfg.teaching))?;
                    let rank_seconds = start.elapsed().as_secs_f64();
                    for &f in &cfg.fractions {
                        let b = budget_for(f, n);
                        let e = eval_oblivious(cfg, &rankings, rank_seconds, &shards, &ds, &goal, b, table.risk_full)?;
                        rows.push(row(cfg, "oblivious", n, f, &e.metrics, e.rounds, e.reals));
                    }
                }
                BaselineKind::Random => {
                    for &f in &cfg.fractions {
                        let b = budget_for(f, n);
                        let e = eval_random(cfg, &shards, &ds, &goal, b, table.risk_full)?;
                        rows.push(row(cfg, "random", n, f, &e.metrics, e.rounds, e.reals));
                    }
                }
                BaselineKind::Bruteforce => unreachable!("rejected when the config is parsed"),
            }
        }

        let best = table.best();
        sink.log(format!(
            "sweep fractions={} best_fraction={} best_ratio={} rho_at_best={}",
            cfg.fractions.len(),
            best.fraction,
            best.metrics.teaching_ratio,
            best.metrics.rho
        ));
        sink.write("sweep.csv", &results_csv(&rows))?;
        sink.write("sweep_trace.csv", &trace.to_csv())?;
        let doc = json!({
            "n": n,
            "k": cfg.teachers,
            "risk_full": table.risk_full,
            "best_fraction": best.fraction,
            "best_teaching_ratio": best.metrics.teaching_ratio,
            "rho_at_best": best.metrics.rho,
            "rounds_used": trace.rounds(),
            "reals_communicated": trace.reals_communicated(),
            "final_objective": trace.final_objective(),
            "max_objective_increase": trace.max_increase(),
            "rows": rows.iter().map(|r| json!({
                "method": r.method,
                "budget_fraction": r.budget_fraction,
                "risk_euclid": r.risk_euclid,
                "rho": r.rho,
                "teaching_ratio": r.teaching_ratio,
            })).collect::<Vec<_>>(),
        });
        sink.write("sweep_metrics.json", &pretty(&doc))?;
        let summary = format!(
            "sweep: best fraction {} with ratio {:.4} (rho {:.4}) over {} rounds",
            best.fraction,
            best.metrics.teaching_ratio,
            best.metrics.rho,
            trace.rounds()
        );
        Ok((rows, summary))
    })();
    let ((rows, summary), files) = sink.finish("sweep", result)?;
    Ok(Outcome {
        files,
        rows,
        summary,
        passed: true,
    })
}

/// `check`: runs a property suite and writes `check_<property>.json`.
pub fn cmd_check(cfg: &ExperimentConfig, property: Property) -> Result<(CheckReport, Outcome)> {
    let mut sink = Sink::open(&cfg.out)?;
    let stem = format!("check_{}", property.as_str());
    let result = (|| {
        let report = stage("check", run_check(property, cfg.seed, cfg.teaching.execution))?;
        sink.write(&format!("{stem}.json"), &report.to_json())?;
        sink.log(format!(
            "{} passed={} cases={}/{} required={}",
            property.as_str(),
            report.passed,
            report.cases_passed,
            report.cases_total,
            report.required
        ));
        Ok(report)
    })();
    let (report, files) = sink.finish(&stem, result)?;
    let summary = format!(
        "{}: {} ({}/{} cases, {} required, worst slack {:e})",
        property.as_str(),
        if report.passed { "pass" } else { "FAIL" },
        report.cases_passed,
        report.cases_total,
        report.required,
        report.worst_slack
    );
    let passed = report.passed;
    Ok((
        report,
        Outcome {
            files,
            rows: Vec::new(),
            summary,
            passed,
        },
    ))
}
