//! Exhaustive enumeration over the admissible binary patterns: the test and
//! benchmark oracle for the tree search. Every pattern is solved with the
//! same cold default-start policy branch-and-bound uses at its leaves.

use std::time::Instant;

use crate::ocp::{ProblemSpec, ADMISSIBLE_PATTERNS};

use super::bnb::solve_leaf;
use super::nlp::NlpStatus;
use super::{SolveOptions, SolveStatus, Solution};

/// Hard cap on the enumeration size; beyond this the oracle is pointless.
const MAX_PATTERNS: u64 = 531_441; // 3^12

/// Enumerates every admissible binary assignment, solves the pinned NLP for
/// each, and returns the best. Intended for short horizons only.
pub fn solve_exhaustive(spec: &ProblemSpec, opts: &SolveOptions) -> Solution {
    let start = Instant::now();
    let steps = spec.binary_pairs().len();
    let count = (ADMISSIBLE_PATTERNS.len() as u64).pow(steps as u32);
    assert!(
        count <= MAX_PATTERNS,
        "exhaustive enumeration of {count} patterns is intractable"
    );

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iters = 0u64;
    for code in 0..count {
        let mut fixing = Vec::with_capacity(2 * steps);
        let mut rest = code;
        for _ in 0..steps {
            let (engine_on, clutch) = ADMISSIBLE_PATTERNS[(rest % 3) as usize];
            rest /= 3;
            fixing.push(Some(engine_on));
            fixing.push(Some(clutch));
        }
        let leaf = solve_leaf(spec, opts, &fixing);
        iters += leaf.iterations as u64;
        if leaf.status != NlpStatus::Infeasible && leaf.feasible(opts.feas_tol) {
            let better = best.as_ref().map_or(true, |(obj, _)| leaf.objective < *obj);
            if better {
                best = Some((leaf.objective, leaf.x));
            }
        }
    }
    let wall = start.elapsed().as_secs_f64();
    match best {
        Some((objective, decision)) => Solution {
            decision,
            objective,
            best_bound: objective,
            status: SolveStatus::Optimal,
            nodes: count,
            nlp_iterations: iters,
            wall_time_s: wall,
        },
        None => Solution::infeasible(count, iters, wall),
    }
}
