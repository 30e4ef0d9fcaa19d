//! Plain-text snapshot of a [`DualState`] for resumable runs.
//!
//! ```text
//! k=2
//! d=3
//! round=17
//! sizes=4,3
//! theta_tilde=0.1,0.2,0.3
//! alpha_0=...
//! alpha_1=...
//! ```
//!
//! Reals use the shortest representation that round-trips exactly.

use std::fmt::Write as _;

use crate::engine::DualState;
use crate::error::{Result, TeachError};

fn join(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 20);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

fn bad(key: &str, message: impl Into<String>) -> TeachError {
    TeachError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn reals(key: &str, s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|c| c.parse::<f64>().map_err(|_| bad(key, format!("bad real `{c}`"))))
        .collect()
}

impl DualState {
    pub fn to_snapshot(&self) -> String {
        let mut out = format!(
            "k={}\nd={}\nround={}\nsizes={}\ntheta_tilde={}\n",
            self.alpha.len(),
            self.theta_tilde.len(),
            self.round,
            self.block_sizes()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            join(&self.theta_tilde)
        );
        for (i, block) in self.alpha.iter().enumerate() {
            let _ = writeln!(out, "alpha_{i}={}", join(block));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(key, "missing"))?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad(key, "expected key=value"))?;
            if k != key {
                return Err(bad(k, format!("expected `{key}`")));
            }
            Ok(v.to_string())
        };
        let parse_usize = |key: &str, v: String| -> Result<usize> {
            v.parse().map_err(|_| bad(key, format!("bad count `{v}`")))
        };
        let k = parse_usize("k", field("k")?)?;
        let d = parse_usize("d", field("d")?)?;
        let round = parse_usize("round", field("round")?)?;
        let sizes_raw = field("sizes")?;
        let sizes: Vec<usize> = if sizes_raw.is_empty() {
            Vec::new()
        } else {
            sizes_raw
                .split(',')
                .map(|s| s.parse().map_err(|_| bad("sizes", format!("bad count `{s}`"))))
                .collect::<Result<_>>()?
        };
        if sizes.len() != k {
            return Err(bad("sizes", format!("{} sizes for k={k}", sizes.len())));
        }
        let theta_tilde = reals("theta_tilde", &field("theta_tilde")?)?;
        if theta_tilde.len() != d {
            return Err(bad("theta_tilde", format!("{} values for d={d}", theta_tilde.len())));
        }
        let mut alpha = Vec::with_capacity(k);
        for (i, &n) in sizes.iter().enumerate() {
            let key = format!("alpha_{i}");
            let block = reals(&key, &field(&key)?)?;
            if block.len() != n {
                return Err(bad(&key, format!("{} values, header says {n}", block.len())));
            }
            alpha.push(block);
        }
        Ok(Self {
            alpha,
            theta_tilde,
            round,
        })
    }
}
