//! Collaborative, privacy-preserving super teaching.
//!
//! `K` teachers each hold a private shard of labeled data. They jointly pick a
//! small training subset by block-coordinate descent on a regularized dual
//! objective, so that a learner trained on the union of the picks lands close
//! to a target model `theta_star`. Only `d`-dimensional aggregates (and, once,
//! `d x d` Gram matrices) ever leave a teacher.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checks;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod harness;
pub mod learner;
pub mod losses;
pub mod par;
pub mod vecops;

pub use dataset::{Dataset, Example, Task, TeacherShard, TeachingGoal};
pub use engine::{DualState, RunTrace, SelectionResult, TeachingConfig};
pub use error::{Result, TeachError};
pub use learner::Metrics;
pub use losses::LossKind;
pub use par::Execution;
