//! Examples, synthetic generation, CSV ingestion, sharding across teachers
//! and teaching-goal construction.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TeachError};
use crate::learner;
use crate::losses::LossKind;
use crate::vecops::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn loss(self) -> LossKind {
        match self {
            Task::Classification => LossKind::Logistic,
            Task::Regression => LossKind::Squared,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = TeachError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "clf" => Ok(Task::Classification),
            "regression" | "reg" => Ok(Task::Regression),
            other => Err(TeachError::param(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled example. Classification labels are exactly +1 or -1.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Example {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    task: Task,
    dim: usize,
    examples: Vec<Example>,
}

impl Dataset {
    /// Validates dimensions and (for classification) the label alphabet.
    pub fn new(task: Task, examples: Vec<Example>) -> Result<Self> {
        let dim = examples.first().map_or(0, |e| e.features.len());
        Self::with_dim(task, dim, examples)
    }

    pub fn with_dim(task: Task, dim: usize, examples: Vec<Example>) -> Result<Self> {
        for (i, e) in examples.iter().enumerate() {
            if e.features.len() != dim {
                return Err(TeachError::param(format!(
                    "example {i} has {} features, expected {dim}",
                    e.features.len()
                )));
            }
            if task == Task::Classification && e.label != 1.0 && e.label != -1.0 {
                return Err(TeachError::param(format!(
                    "example {i} has label {} (classification labels must be +1 or -1)",
                    e.label
                )));
            }
        }
        Ok(Self {
            task,
            dim,
            examples,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, index: usize) -> &Example {
        &self.examples[index]
    }

    /// Writes `<path>` as CSV and `<path>.meta` as key=value metadata.
    pub fn write_csv(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        let mut out = String::with_capacity(self.len() * (self.dim + 1) * 12);
        for j in 0..self.dim {
            let _ = write!(out, "x{j},");
        }
        out.push_str("label\n");
        for e in &self.examples {
            for v in &e.features {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", e.label);
        }
        fs::write(path, out).map_err(|e| TeachError::io(path, e))?;

        let mut meta = format!(
            "task={}\nn={}\nd={}\n",
            self.task,
            self.len(),
            self.dim
        );
        if let Some(seed) = seed {
            let _ = writeln!(meta, "seed={seed}");
        }
        let meta_path = sidecar_path(path);
        fs::write(&meta_path, meta).map_err(|e| TeachError::io(meta_path, e))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Parameters for [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub task: Task,
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub seed: u64,
    pub center_scale: f64,
    pub cluster_std: f64,
    pub noise_std: f64,
}

impl SyntheticSpec {
    pub fn new(task: Task, n: usize, dim: usize, clusters: usize, seed: u64) -> Self {
        Self {
            task,
            n,
            dim,
            clusters,
            seed,
            center_scale: 1.0,
            cluster_std: 1.0,
            noise_std: 0.1,
        }
    }
}

/// Gaussian cluster data.
///
/// Point `k` belongs to cluster `k mod clusters`. For classification,
/// even-numbered clusters are labeled +1 and odd ones -1, so with an even
/// cluster count and even `n` the classes are exactly balanced. Regression
/// targets come from a random linear model plus small Gaussian noise.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        task,
        n,
        dim,
        clusters,
        seed,
        ..
    } = *spec;
    if dim == 0 {
        return Err(TeachError::param("dimension must be at least 1"));
    }
    if clusters < 2 || n < clusters {
        return Err(TeachError::param(format!(
            "need n >= clusters >= 2 (got n={n}, clusters={clusters})"
        )));
    }
    if task == Task::Classification && (clusters % 2 != 0 || n % 2 != 0) {
        return Err(TeachError::param(format!(
            "classification needs an even cluster count and even n (got n={n}, clusters={clusters})"
        )));
    }
    if !(spec.center_scale > 0.0 && spec.cluster_std >= 0.0 && spec.noise_std >= 0.0) {
        return Err(TeachError::param("cluster geometry must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };

    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| spec.center_scale * normal()).collect())
        .collect();
    let coef: Vec<f64> = match task {
        Task::Regression => (0..dim).map(|_| normal()).collect(),
        Task::Classification => Vec::new(),
    };

    let mut examples = Vec::with_capacity(n);
    for k in 0..n {
        let c = k % clusters;
        let features: Vec<f64> = centers[c]
            .iter()
            .map(|m| m + spec.cluster_std * normal())
            .collect();
        let label = match task {
            Task::Classification => {
                if c % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Task::Regression => {
                crate::vecops::dot(&coef, &features) + spec.noise_std * normal()
            }
        };
        examples.push(Example { features, label });
    }
    Dataset::with_dim(task, dim, examples)
}

/// Loads a headered CSV. Every non-label column becomes a feature, in header
/// order. With `remap_01`, classification labels 0/1 become -1/+1.
///
/// Row numbers in errors count data rows from 1 (the header is row 0).
pub fn load_csv(path: &Path, task: Task, label_column: &str, remap_01: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| TeachError::io(path, e))?;
    parse_csv(&text, task, label_column, remap_01)
}

pub fn parse_csv(text: &str, task: Task, label_column: &str, remap_01: bool) -> Result<Dataset> {
    let mut lines = text.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) if !h.trim().is_empty() => h.split(',').map(str::trim).collect(),
        _ => {
            return Err(TeachError::Ingestion {
                row: 0,
                message: "missing header row".into(),
            })
        }
    };
    let label_idx = header
        .iter()
        .position(|h| *h == label_column)
        .ok_or_else(|| TeachError::Ingestion {
            row: 0,
            message: format!("label column `{label_column}` not found in header"),
        })?;
    let arity = header.len();
    let dim = arity - 1;

    let mut examples = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != arity {
            return Err(TeachError::Ingestion {
                row,
                message: format!("expected {arity} cells, found {}", cells.len()),
            });
        }
        let mut features = Vec::with_capacity(dim);
        let mut label = f64::NAN;
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| TeachError::Ingestion {
                row,
                message: format!("non-numeric cell `{}` in column `{}`", cell.trim(), header[c]),
            })?;
            if c == label_idx {
                label = v;
            } else {
                features.push(v);
            }
        }
        if task == Task::Classification {
            if remap_01 && (label == 0.0 || label == 1.0) {
                label = 2.0 * label - 1.0;
            }
            if label != 1.0 && label != -1.0 {
                return Err(TeachError::Ingestion {
                    row,
                    message: format!("classification label {label} is not +1/-1"),
                });
            }
        }
        examples.push(Example { features, label });
    }
    Dataset::with_dim(task, dim, examples)
}

/// One teacher's private partition.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherShard {
    pub teacher_id: usize,
    pub examples: Vec<Example>,
    /// `global_offsets[j]` is the dataset index of local example `j`.
    pub global_offsets: Vec<usize>,
}

impl TeacherShard {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Seeded uniform permutation followed by contiguous assignment. The first
/// `N mod K` shards get one extra example, so every example is assigned.
pub fn shard(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<TeacherShard>> {
    let n = dataset.len();
    if k == 0 {
        return Err(TeachError::param("need at least one teacher"));
    }
    if k > n {
        return Err(TeachError::param(format!(
            "cannot split {n} examples across {k} teachers"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for teacher_id in 0..k {
        let size = base + usize::from(teacher_id < extra);
        let global_offsets = order[start..start + size].to_vec();
        let examples = global_offsets
            .iter()
            .map(|&g| dataset.get(g).clone())
            .collect();
        shards.push(TeacherShard {
            teacher_id,
            examples,
            global_offsets,
        });
        start += size;
    }
    Ok(shards)
}

/// Rebuilds the dataset (in global index order) from a complete set of shards.
pub fn union_of_shards(task: Task, dim: usize, shards: &[TeacherShard]) -> Result<Dataset> {
    let n: usize = shards.iter().map(TeacherShard::len).sum();
    let mut slots: Vec<Option<Example>> = vec![None; n];
    for s in shards {
        for (e, &g) in s.examples.iter().zip(&s.global_offsets) {
            let slot = slots
                .get_mut(g)
                .ok_or_else(|| TeachError::param(format!("global index {g} out of range")))?;
            if slot.replace(e.clone()).is_some() {
                return Err(TeachError::param(format!("global index {g} assigned twice")));
            }
        }
    }
    let examples = slots
        .into_iter()
        .enumerate()
        .map(|(g, e)| e.ok_or_else(|| TeachError::param(format!("global index {g} missing"))))
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_dim(task, dim, examples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingGoal {
    pub theta_star: Vec<f64>,
    /// The full-data fit the target was derived from.
    pub theta_gt: Vec<f64>,
    pub noise_ratio: f64,
}

impl TeachingGoal {
    pub fn to_text(&self) -> String {
        format!(
            "theta_star={}\ntheta_gt={}\nnoise_ratio={}\n",
            join_reals(&self.theta_star),
            join_reals(&self.theta_gt),
            self.noise_ratio
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut theta_star = None;
        let mut theta_gt = None;
        let mut noise_ratio = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line.split_once('=').ok_or_else(|| TeachError::Config {
                key: line.to_string(),
                message: "expected key=value".into(),
            })?;
            let bad = |message: &str| TeachError::Config {
                key: key.to_string(),
                message: message.to_string(),
            };
            match key.trim() {
                "theta_star" => theta_star = Some(parse_reals(value).map_err(|_| bad("bad vector"))?),
                "theta_gt" => theta_gt = Some(parse_reals(value).map_err(|_| bad("bad vector"))?),
                "noise_ratio" => {
                    noise_ratio = Some(value.trim().parse().map_err(|_| bad("bad number"))?)
                }
                _ => return Err(bad("unknown key")),
            }
        }
        let theta_star = theta_star.ok_or_else(|| TeachError::Config {
            key: "theta_star".into(),
            message: "missing".into(),
        })?;
        Ok(Self {
            theta_gt: theta_gt.unwrap_or_else(|| theta_star.clone()),
            theta_star,
            noise_ratio: noise_ratio.unwrap_or(0.0),
        })
    }
}

fn join_reals(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn parse_reals(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',').map(|c| c.trim().parse()).collect()
}

/// Fits the learner on the full dataset and perturbs the fit with an
/// isotropic Gaussian direction whose norm is `noise_ratio * |theta_gt|`.
pub fn make_target(dataset: &Dataset, lambda: f64, noise_ratio: f64, seed: u64) -> Result<TeachingGoal> {
    if !(lambda > 0.0) {
        return Err(TeachError::param("lambda must be positive"));
    }
    if dataset.is_empty() {
        return Err(TeachError::param("cannot build a target from an empty dataset"));
    }
    if !(noise_ratio >= 0.0) || !noise_ratio.is_finite() {
        return Err(TeachError::param("noise ratio must be a non-negative number"));
    }
    let fit = learner::fit_primal(
        dataset.task().loss(),
        dataset.examples(),
        lambda,
        &learner::FitOptions::default(),
    )?;
    let theta_gt = fit.theta;
    if theta_gt.iter().any(|v| !v.is_finite()) {
        return Err(TeachError::numeric("full-data fit is not finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction: Vec<f64> = (0..dataset.dim())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let target_norm = noise_ratio * norm(&theta_gt);
    let dir_norm = norm(&direction);
    let theta_star = if target_norm == 0.0 || dir_norm == 0.0 {
        theta_gt.clone()
    } else {
        let scale = target_norm / dir_norm;
        theta_gt
            .iter()
            .zip(&direction)
            .map(|(g, t)| g + scale * t)
            .collect()
    };
    Ok(TeachingGoal {
        theta_star,
        theta_gt,
        noise_ratio,
    })
}
