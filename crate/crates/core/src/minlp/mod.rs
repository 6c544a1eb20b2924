//! Solver stack for the transcribed problems: an augmented-Lagrangian NLP
//! solver, branch-and-bound over the per-step binaries, and an exhaustive
//! enumeration oracle for tests and benchmarks.
//!
//! Everything here is deterministic: no randomness, value-based tie-breaking,
//! and batched node processing whose result does not depend on how many
//! worker threads execute the batch.

mod bnb;
mod exhaustive;
pub(crate) mod nlp;

pub use bnb::{solve_bnb, solve_bnb_traced, solve_bnb_warm, NodeEvent};
pub use exhaustive::solve_exhaustive;
pub use nlp::solve_nlp;

/// Node selection order for the tree search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeOrder {
    /// Process the open node with the smallest bound first.
    #[default]
    BestBound,
    /// Dive: process the deepest open node first, ties by bound.
    DepthFirst,
}

/// Solver tolerances and limits.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Absolute tolerance on (normalized) constraint rows.
    pub feas_tol: f64,
    /// Absolute incumbent/bound gap below which the search stops as optimal.
    pub opt_tol: f64,
    /// Projected-gradient stationarity tolerance for the NLP subsolver.
    pub stat_tol: f64,
    /// Inner-iteration budget per NLP solve.
    pub max_nlp_iters: usize,
    /// Processed-node budget for the tree search.
    pub max_nodes: usize,
    /// Wall-clock limit; `None` keeps runs deterministic.
    pub time_limit_s: Option<f64>,
    /// Nodes solved per synchronous batch; batch membership, not worker
    /// count, determines the exploration order.
    pub node_batch: usize,
    /// Distance from an integer below which a relaxed binary counts integral.
    pub int_tol: f64,
    pub node_order: NodeOrder,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            stat_tol: 1e-6,
            max_nlp_iters: 600,
            max_nodes: 100_000,
            time_limit_s: None,
            node_batch: 8,
            int_tol: 1e-6,
            node_order: NodeOrder::BestBound,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    /// Feasible point returned, gap within tolerance.
    Optimal,
    /// A limit stopped the search with an incumbent but an open gap.
    GapLimit,
    Infeasible,
    /// Node budget exhausted before any incumbent was found.
    NodeLimit,
    /// Time limit exhausted before any incumbent was found.
    TimeLimit,
    /// NLP iteration budget exhausted before convergence.
    IterLimit,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::GapLimit)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapLimit => "gap-limit",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NodeLimit => "node-limit",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::IterLimit => "iter-limit",
        };
        f.write_str(s)
    }
}

/// Result of one solve. For statuses without a solution the decision vector
/// is empty and the objective is infinite.
#[derive(Clone, Debug)]
pub struct Solution {
    pub decision: Vec<f64>,
    pub objective: f64,
    pub best_bound: f64,
    pub status: SolveStatus,
    /// Tree nodes whose subproblem was solved (1 for plain NLP solves).
    pub nodes: u64,
    /// Total inner NLP iterations across all subproblem solves.
    pub nlp_iterations: u64,
    pub wall_time_s: f64,
}

impl Solution {
    pub(crate) fn infeasible(nodes: u64, iters: u64, wall: f64) -> Self {
        Solution {
            decision: Vec::new(),
            objective: f64::INFINITY,
            best_bound: f64::INFINITY,
            status: SolveStatus::Infeasible,
            nodes,
            nlp_iterations: iters,
            wall_time_s: wall,
        }
    }
}
