//! Flat `key=value` experiment configuration.
//!
//! A config file holds one `key=value` per line; blank lines and lines
//! starting with `#` are ignored. Overrides are applied after the file, and
//! the last occurrence of a key wins. Unknown keys are rejected by name.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::baselines::BaselineKind;
use crate::dataset::{SyntheticSpec, Task};
use crate::engine::TeachingConfig;
use crate::error::{Result, TeachError};
use crate::par::Execution;

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("task", "classification", "classification or regression"),
    ("data", "synthetic", "`synthetic`, or the path of a headered CSV file"),
    ("label_column", "label", "label column name for CSV data"),
    ("remap_labels", "false", "map 0/1 classification labels to -1/+1 (CSV data)"),
    ("n", "5000", "synthetic: number of examples"),
    ("d", "10", "synthetic: feature dimension"),
    ("clusters", "4", "synthetic: Gaussian clusters (even for classification)"),
    ("cluster_std", "1.0", "synthetic: per-coordinate cluster standard deviation"),
    ("center_scale", "1.0", "synthetic: standard deviation of cluster centers"),
    ("noise_std", "0.1", "synthetic: regression label noise"),
    ("target", "", "target file written by make-target; empty derives it from the data"),
    ("target_noise", "1.0", "norm of the target perturbation relative to the full-data fit"),
    ("teachers", "5", "number of teachers K"),
    ("lambda", "0.01", "learner regularization"),
    ("lambda_alpha", "task", "adaptive l1 weight (0.1 classification, 1 regression)"),
    ("lambda_theta", "task", "target pull weight (1000 classification, 2000 regression)"),
    ("beta", "", "comma-separated per-teacher step scales in [1, K]; empty means all 1"),
    ("rounds", "100", "communication rounds T"),
    ("inner_max_iter", "200", "block solver iteration cap"),
    ("inner_tol", "1e-8", "block solver tolerance"),
    ("outer_tol", "0", "stop once the relative objective change is below this; 0 runs all rounds"),
    ("w_max", "1e6", "cap on adaptive l1 weights"),
    ("ols_eps", "1e-8", "ridge added to the warm-start Gram matrix"),
    ("normalize_conjugate", "false", "scale the conjugate term by 1/N"),
    ("block_solver", "prox_grad", "prox_grad or dual_newton"),
    ("parallel", "true", "update teacher blocks in parallel inside a round"),
    ("budget", "0.05", "budget fraction for teach and baseline"),
    ("fractions", "0.01,0.02,0.05,0.1,0.2,0.5,1.0", "budget fractions for sweep, ascending"),
    ("baselines", "oblivious,random", "baselines added to sweep output; `none` disables"),
    ("out", "out", "output directory"),
    ("seed", "0", "seed for data, target, sharding and random baselines"),
    ("report_runtime", "true", "write wall-clock seconds; false writes 0 for byte-stable output"),
];

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub data: DataSource,
    pub label_column: String,
    pub remap_labels: bool,
    pub synthetic: SyntheticSpec,
    pub target: Option<PathBuf>,
    pub target_noise: f64,
    pub teachers: usize,
    pub teaching: TeachingConfig,
    pub budget: f64,
    pub fractions: Vec<f64>,
    pub baselines: Vec<BaselineKind>,
    pub out: PathBuf,
    pub seed: u64,
    pub report_runtime: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_pairs(&[]).expect("defaults parse")
    }
}

fn bad(key: &str, message: impl Into<String>) -> TeachError {
    TeachError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, format!("cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got `{v}`"))),
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|c| num(key, c.trim())).collect()
}

/// Splits config text into `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(&format!("line {}", i + 1), format!("expected key=value, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| bad(s, "override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl ExperimentConfig {
    /// Reads an optional config file and applies overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| TeachError::io(p, e))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend_from_slice(overrides);
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut values: Vec<(&str, String)> = KEYS.iter().map(|(k, d, _)| (*k, d.to_string())).collect();
        for (k, v) in pairs {
            let slot = values
                .iter_mut()
                .find(|(name, _)| name == k)
                .ok_or_else(|| bad(k, "unknown key (run with --help for the list)"))?;
            slot.1 = v.clone();
        }
        let get = |key: &str| -> &str {
            &values
                .iter()
                .find(|(k, _)| *k == key)
                .expect("key in table")
                .1
        };

        let task: Task = get("task").parse().map_err(|_| bad("task", format!("unknown task `{}`", get("task"))))?;
        let seed: u64 = num("seed", get("seed"))?;
        let mut teaching = TeachingConfig::for_task(task);
        teaching.lambda = num("lambda", get("lambda"))?;
        if get("lambda_alpha") != "task" {
            teaching.lambda_alpha = num("lambda_alpha", get("lambda_alpha"))?;
        }
        if get("lambda_theta") != "task" {
            teaching.lambda_theta = num("lambda_theta", get("lambda_theta"))?;
        }
        teaching.beta = list("beta", get("beta"))?;
        teaching.rounds = num("rounds", get("rounds"))?;
        teaching.inner_max_iter = num("inner_max_iter", get("inner_max_iter"))?;
        teaching.inner_tol = num("inner_tol", get("inner_tol"))?;
        teaching.outer_tol = num("outer_tol", get("outer_tol"))?;
        teaching.w_max = num("w_max", get("w_max"))?;
        teaching.ols_eps = num("ols_eps", get("ols_eps"))?;
        teaching.normalize_conjugate = flag("normalize_conjugate", get("normalize_conjugate"))?;
        teaching.block_solver = get("block_solver")
            .parse()
            .map_err(|_| bad("block_solver", format!("unknown solver `{}`", get("block_solver"))))?;
        teaching.execution = if flag("parallel", get("parallel"))? {
            Execution::Parallel
        } else {
            Execution::Serial
        };
        teaching.seed = seed;

        let teachers: usize = num("teachers", get("teachers"))?;
        if teachers == 0 {
            return Err(bad("teachers", "need at least one teacher"));
        }
        teaching
            .validate(teachers)
            .map_err(|e| bad("teaching", e.to_string()))?;

        let mut synthetic = SyntheticSpec::new(
            task,
            num("n", get("n"))?,
            num("d", get("d"))?,
            num("clusters", get("clusters"))?,
            seed,
        );
        synthetic.cluster_std = num("cluster_std", get("cluster_std"))?;
        synthetic.center_scale = num("center_scale", get("center_scale"))?;
        synthetic.noise_std = num("noise_std", get("noise_std"))?;

        let budget: f64 = num("budget", get("budget"))?;
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(bad("budget", format!("{budget} outside (0, 1]")));
        }
        let fractions = list("fractions", get("fractions"))?;
        if fractions.is_empty() {
            return Err(bad("fractions", "need at least one fraction"));
        }
        if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(bad("fractions", format!("{f} outside (0, 1]")));
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("fractions", "must be strictly ascending"));
        }
        let baselines = match get("baselines") {
            "" | "none" => Vec::new(),
            v => v
                .split(',')
                .map(|b| match b.trim().parse::<BaselineKind>() {
                    Ok(BaselineKind::Bruteforce) => Err(bad("baselines", "bruteforce only runs via the baseline command")),
                    Ok(kind) => Ok(kind),
                    Err(_) => Err(bad("baselines", format!("unknown baseline `{b}`"))),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let target_noise: f64 = num("target_noise", get("target_noise"))?;
        if !(target_noise >= 0.0) || !target_noise.is_finite() {
            return Err(bad("target_noise", "must be a non-negative number"));
        }

        Ok(Self {
            task,
            data: match get("data") {
                "synthetic" => DataSource::Synthetic,
                "" => return Err(bad("data", "empty; use `synthetic` or a CSV path")),
                path => DataSource::Csv(PathBuf::from(path)),
            },
            label_column: get("label_column").to_string(),
            remap_labels: flag("remap_labels", get("remap_labels"))?,
            synthetic,
            target: match get("target") {
                "" => None,
                p => Some(PathBuf::from(p)),
            },
            target_noise,
            teachers,
            teaching,
            budget,
            fractions,
            baselines,
            out: PathBuf::from(get("out")),
            seed,
            report_runtime: flag("report_runtime", get("report_runtime"))?,
        })
    }

    /// The effective configuration, one line per key, loadable again.
    pub fn to_text(&self) -> String {
        let t = &self.teaching;
        let reals = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("task", self.task.to_string());
        put(
            "data",
            match &self.data {
                DataSource::Synthetic => "synthetic".into(),
                DataSource::Csv(p) => p.display().to_string(),
            },
        );
        put("label_column", self.label_column.clone());
        put("remap_labels", self.remap_labels.to_string());
        put("n", self.synthetic.n.to_string());
        put("d", self.synthetic.dim.to_string());
        put("clusters", self.synthetic.clusters.to_string());
        put("cluster_std", self.synthetic.cluster_std.to_string());
        put("center_scale", self.synthetic.center_scale.to_string());
        put("noise_std", self.synthetic.noise_std.to_string());
        put(
            "target",
            self.target.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        put("target_noise", self.target_noise.to_string());
        put("teachers", self.teachers.to_string());
        put("lambda", t.lambda.to_string());
        put("lambda_alpha", t.lambda_alpha.to_string());
        put("lambda_theta", t.lambda_theta.to_string());
        put("beta", reals(&t.beta));
        put("rounds", t.rounds.to_string());
        put("inner_max_iter", t.inner_max_iter.to_string());
        put("inner_tol", t.inner_tol.to_string());
        put("outer_tol", t.outer_tol.to_string());
        put("w_max", t.w_max.to_string());
        put("ols_eps", t.ols_eps.to_string());
        put("normalize_conjugate", t.normalize_conjugate.to_string());
        put("block_solver", t.block_solver.as_str().into());
        put("parallel", (t.execution == Execution::Parallel).to_string());
        put("budget", self.budget.to_string());
        put("fractions", reals(&self.fractions));
        put(
            "baselines",
            if self.baselines.is_empty() {
                "none".into()
            } else {
                self.baselines.iter().map(|b| b.as_str()).collect::<Vec<_>>().join(",")
            },
        );
        put("out", self.out.display().to_string());
        put("seed", self.seed.to_string());
        put("report_runtime", self.report_runtime.to_string());
        s
    }

    /// Key reference for `--help`.
    pub fn help() -> String {
        let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        let mut s = String::from("Config keys (key=value; defaults in brackets):\n");
        for (k, d, doc) in KEYS {
            let d = if d.is_empty() { "empty" } else { d };
            let _ = writeln!(s, "  {k:<width$}  {doc} [{d}]");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(c.task, Task::Classification);
        assert_eq!(c.data, DataSource::Synthetic);
        assert_eq!(c.teachers, 5);
        assert_eq!(c.synthetic.n, 5000);
        assert_eq!(c.teaching.lambda_alpha, 0.1);
        assert_eq!(c.teaching.lambda_theta, 1000.0);
        assert_eq!(c.fractions, vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]);
        assert_eq!(c.baselines, vec![BaselineKind::Oblivious, BaselineKind::Random]);
        assert!(c.report_runtime);
    }

    #[test]
    fn task_defaults_follow_the_task() {
        let c = ExperimentConfig::from_pairs(&pairs(&[("task", "regression")])).unwrap();
        assert_eq!(c.teaching.lambda_alpha, 1.0);
        assert_eq!(c.teaching.lambda_theta, 2000.0);
        let c = ExperimentConfig::from_pairs(&pairs(&[("task", "regression"), ("lambda_theta", "5")])).unwrap();
        assert_eq!(c.teaching.lambda_theta, 5.0);
    }

    #[test]
    fn unknown_and_malformed_keys_are_named() {
        let err = ExperimentConfig::from_pairs(&pairs(&[("teachres", "3")])).unwrap_err();
        assert!(err.to_string().contains("teachres"), "{err}");
        let err = ExperimentConfig::from_pairs(&pairs(&[("rounds", "many")])).unwrap_err();
        assert!(err.to_string().contains("rounds"), "{err}");
        let err = ExperimentConfig::from_pairs(&pairs(&[("fractions", "0.5,0.1")])).unwrap_err();
        assert!(err.to_string().contains("fractions"), "{err}");
        let err = parse_pairs("task=regression\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn file_then_overrides_last_wins() {
        let mut p = parse_pairs("# comment\nteachers = 3\n\nseed=4\n").unwrap();
        p.push(parse_override("teachers=7").unwrap());
        let c = ExperimentConfig::from_pairs(&p).unwrap();
        assert_eq!(c.teachers, 7);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn text_round_trip() {
        let c = ExperimentConfig::from_pairs(&pairs(&[
            ("task", "regression"),
            ("beta", "1,2"),
            ("teachers", "2"),
            ("baselines", "none"),
            ("data", "some/file.csv"),
            ("parallel", "false"),
        ]))
        .unwrap();
        let again = ExperimentConfig::from_pairs(&parse_pairs(&c.to_text()).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn help_lists_every_key() {
        let h = ExperimentConfig::help();
        for (k, _, _) in KEYS {
            assert!(h.contains(k));
        }
    }
}
