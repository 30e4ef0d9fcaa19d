use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub objective: f64,
    /// Euclidean distance between the aggregate model and the target.
    pub risk: Option<f64>,
    pub reals_up: usize,
    pub reals_down: usize,
}

/// Per-round history of a teaching run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    /// Objective at the starting state, before any round.
    pub initial_objective: f64,
    pub records: Vec<RoundRecord>,
}

impl RunTrace {
    pub fn with_capacity(initial_objective: f64, rounds: usize) -> Self {
        Self {
            initial_objective,
            records: Vec::with_capacity(rounds),
        }
    }

    pub fn rounds(&self) -> usize {
        self.records.len()
    }

    pub fn reals_up(&self) -> usize {
        self.records.iter().map(|r| r.reals_up).sum()
    }

    pub fn reals_down(&self) -> usize {
        self.records.iter().map(|r| r.reals_down).sum()
    }

    pub fn reals_communicated(&self) -> usize {
        self.reals_up() + self.reals_down()
    }

    pub fn final_objective(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_objective, |r| r.objective)
    }

    /// Largest increase of the objective from one round to the next,
    /// including the step from the initial state. Non-positive means
    /// monotone.
    pub fn max_increase(&self) -> f64 {
        let mut prev = self.initial_objective;
        let mut worst = f64::NEG_INFINITY;
        for r in &self.records {
            worst = worst.max(r.objective - prev);
            prev = r.objective;
        }
        worst
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,objective,risk,reals_up,reals_down\n");
        for r in &self.records {
            let risk = r.risk.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.round, r.objective, risk, r.reals_up, r.reals_down
            );
        }
        out
    }
}
