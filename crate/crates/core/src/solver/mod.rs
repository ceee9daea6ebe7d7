//! Presolve, LP relaxation and branch-and-bound.

pub mod bnb;
pub mod lp;
mod lu;
pub mod presolve;
pub mod propagate;

use serde::{Deserialize, Serialize};

use crate::milp::MilpModel;
use crate::par::{default_workers, Exec};

pub use bnb::{branch_and_bound, relative_gap};
pub use lp::{DualSimplex, LpProblem, LpStatus};
pub use presolve::{presolve, PresolveInfeasible, PresolveStats, Presolved, VarMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branching {
    /// Binary whose relaxation value is closest to 0.5; ties to lowest index.
    MostFractional,
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSelection {
    BestBound,
    DepthFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Relative MIP gap at which the search stops.
    pub mip_gap: f64,
    pub time_limit_s: f64,
    pub branching: Branching,
    pub node_selection: NodeSelection,
    /// Forces a single worker so node order and statistics are reproducible.
    pub deterministic: bool,
    pub workers: usize,
    /// Stop after this many nodes and report the incumbent as feasible.
    pub node_limit: Option<u64>,
    /// Parallelism inside LP pricing.
    pub exec: Exec,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mip_gap: 1e-6,
            time_limit_s: 300.0,
            branching: Branching::MostFractional,
            node_selection: NodeSelection::BestBound,
            deterministic: true,
            workers: default_workers(),
            node_limit: None,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Feasible { gap: f64 },
    Infeasible,
    Timeout,
}

impl SolveStatus {
    pub fn label(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible { .. } => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Empty when no incumbent exists.
    pub values: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
}

impl Solution {
    pub fn has_values(&self) -> bool {
        !self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub lp_solves: u64,
    pub presolved_binaries: usize,
    pub wall_time_s: f64,
    pub gap: f64,
    pub status: String,
    /// (nodes so far, global lower bound, incumbent) after each node.
    #[serde(skip)]
    pub bound_trace: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpResultStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpResultStatus,
    pub values: Vec<f64>,
    pub objective: f64,
}

/// Solves the continuous relaxation of `model`.
pub fn solve_lp(model: &MilpModel) -> LpResult {
    let problem = LpProblem::from_model(model);
    let mut lp = DualSimplex::new(&problem, Exec::Sequential);
    let mut status = lp.solve();
    if status == LpStatus::IterationLimit {
        lp.reinvert();
        status = lp.solve();
    }
    match status {
        LpStatus::Optimal if lp.hits_artificial_bound() => LpResult {
            status: LpResultStatus::Unbounded,
            values: lp.values().to_vec(),
            objective: f64::NEG_INFINITY,
        },
        LpStatus::Optimal => LpResult {
            status: LpResultStatus::Optimal,
            values: lp.values().to_vec(),
            objective: lp.objective(),
        },
        _ => LpResult {
            status: LpResultStatus::Infeasible,
            values: Vec::new(),
            objective: f64::INFINITY,
        },
    }
}

/// Presolve, branch-and-bound on the reduced model, then map back.
///
/// Incumbents are re-checked against the original model; the returned
/// values index the original variable table.
pub fn solve(model: &MilpModel, options: &SolveOptions) -> (Solution, SolveStats) {
    let start = std::time::Instant::now();
    let pre = match presolve(model) {
        Ok(p) => p,
        Err(PresolveInfeasible) => {
            let stats = SolveStats {
                nodes: 0,
                lp_solves: 0,
                presolved_binaries: 0,
                wall_time_s: start.elapsed().as_secs_f64(),
                gap: f64::INFINITY,
                status: SolveStatus::Infeasible.label().into(),
                bound_trace: Vec::new(),
            };
            let sol = Solution {
                values: Vec::new(),
                objective: f64::INFINITY,
                status: SolveStatus::Infeasible,
            };
            return (sol, stats);
        }
    };
    let mut remaining = options.clone();
    remaining.time_limit_s = (options.time_limit_s - start.elapsed().as_secs_f64()).max(1e-3);
    let (reduced, mut stats) = branch_and_bound(&pre.model, &remaining);
    stats.wall_time_s = start.elapsed().as_secs_f64();
    stats.presolved_binaries = pre.stats.binaries_after;
    // a fully presolved model has an empty incumbent that still restores
    let solved_in_presolve = pre.model.num_vars() == 0 && reduced.status == SolveStatus::Optimal;
    if !reduced.has_values() && !solved_in_presolve {
        return (reduced, stats);
    }
    let values = pre.restore(&reduced.values);
    let objective = model.objective().eval(&values);
    let viol = model.max_violation(&values);
    if viol > 1e-6 {
        log::warn!("restored solution violates the original model by {viol:e}");
    }
    (
        Solution {
            values,
            objective,
            status: reduced.status,
        },
        stats,
    )
}
