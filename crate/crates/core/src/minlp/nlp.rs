//! Augmented-Lagrangian solver for the continuous subproblems.
//!
//! Bound constraints are handled by projection, general rows through the
//! augmented Lagrangian. The inner minimizer is a projected L-BFGS with an
//! Armijo backtracking line search and a steepest-descent fallback; variables
//! are diagonally rescaled by their bound widths so torque, speed, and
//! acceleration entries condition comparably. Convergence is declared on
//! feasibility plus projected-gradient stationarity; persistent infeasibility
//! is decided by a restoration phase that minimizes the squared violation and
//! fails to bring it below tolerance.

use crate::ad::reverse::{tape_gradient, tape_reset, Rev};
use crate::ad::Real;
use crate::ocp::ProblemSpec;

use super::{SolveOptions, SolveStatus, Solution};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NlpStatus {
    Converged,
    Infeasible,
    IterLimit,
}

#[derive(Clone, Debug)]
pub(crate) struct NlpOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
    pub status: NlpStatus,
    pub iterations: usize,
}

impl NlpOutcome {
    pub fn feasible(&self, tol: f64) -> bool {
        self.violation <= tol
    }
}

/// Augmented-Lagrangian parameters; fixed, not user-facing.
const MU0: f64 = 10.0;
const MU_GROWTH: f64 = 10.0;
const MU_MAX: f64 = 1e10;
const OUTER_MAX: usize = 40;
const LBFGS_MEM: usize = 8;
const LAMBDA_CAP: f64 = 1e12;

/// Scalar merit functions the inner loop can minimize.
enum Merit<'a> {
    Augmented {
        lam_eq: &'a [f64],
        lam_ineq: &'a [f64],
        mu: f64,
    },
    /// Half the squared violation, for the restoration phase.
    Violation,
}

struct Evaluator<'a> {
    spec: &'a ProblemSpec,
    eq: Vec<f64>,
    ineq: Vec<f64>,
    eq_r: Vec<Rev>,
    ineq_r: Vec<Rev>,
    evals: usize,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a ProblemSpec) -> Self {
        Evaluator {
            spec,
            eq: Vec::with_capacity(spec.num_eq()),
            ineq: Vec::with_capacity(spec.num_ineq()),
            eq_r: Vec::with_capacity(spec.num_eq()),
            ineq_r: Vec::with_capacity(spec.num_ineq()),
            evals: 0,
        }
    }

    fn merit_value(&mut self, x: &[f64], merit: &Merit) -> f64 {
        self.evals += 1;
        let mut eq = std::mem::take(&mut self.eq);
        let mut ineq = std::mem::take(&mut self.ineq);
        let objective = self.spec.eval_f64_into(x, &mut eq, &mut ineq);
        self.eq = eq;
        self.ineq = ineq;
        merit_of(objective, &self.eq, &self.ineq, merit)
    }

    /// Merit value and gradient via one taped forward sweep and a single
    /// backward pass; the cost is independent of the variable count.
    fn merit_grad(&mut self, x: &[f64], merit: &Merit, grad: &mut [f64]) -> f64 {
        self.evals += 1;
        let n = x.len();
        let zr = tape_reset(x);
        let mut eq_r = std::mem::take(&mut self.eq_r);
        let mut ineq_r = std::mem::take(&mut self.ineq_r);
        let (fa, fe) = self.spec.eval_generic_rev(&zr, &mut eq_r, &mut ineq_r);
        let obj = fa + fe;
        self.eq.clear();
        self.eq.extend(eq_r.iter().map(|r| r.val()));
        self.ineq.clear();
        self.ineq.extend(ineq_r.iter().map(|r| r.val()));

        let mut seeds: Vec<(Rev, f64)> = Vec::with_capacity(1 + self.eq.len() + self.ineq.len());
        match merit {
            Merit::Augmented {
                lam_eq,
                lam_ineq,
                mu,
            } => {
                seeds.push((obj, 1.0));
                for (r, row) in eq_r.iter().enumerate() {
                    seeds.push((*row, lam_eq[r] + mu * row.val()));
                }
                for (r, row) in ineq_r.iter().enumerate() {
                    let w = (lam_ineq[r] + mu * row.val()).max(0.0);
                    if w != 0.0 {
                        seeds.push((*row, w));
                    }
                }
            }
            Merit::Violation => {
                for row in eq_r.iter() {
                    seeds.push((*row, row.val()));
                }
                for row in ineq_r.iter() {
                    let w = row.val().max(0.0);
                    if w != 0.0 {
                        seeds.push((*row, w));
                    }
                }
            }
        }
        tape_gradient(&seeds, n, grad);
        let value = merit_of(obj.val(), &self.eq, &self.ineq, merit);
        self.eq_r = eq_r;
        self.ineq_r = ineq_r;
        value
    }
}

fn merit_of(objective: f64, eq: &[f64], ineq: &[f64], merit: &Merit) -> f64 {
    match merit {
        Merit::Augmented {
            lam_eq,
            lam_ineq,
            mu,
        } => {
            let mut phi = objective;
            for (r, &c) in eq.iter().enumerate() {
                phi += lam_eq[r] * c + 0.5 * mu * c * c;
            }
            for (r, &g) in ineq.iter().enumerate() {
                let t = (lam_ineq[r] + mu * g).max(0.0);
                phi += (t * t - lam_ineq[r] * lam_ineq[r]) / (2.0 * mu);
            }
            phi
        }
        Merit::Violation => {
            let mut v = 0.0;
            for &c in eq {
                v += 0.5 * c * c;
            }
            for &g in ineq {
                let gp = g.max(0.0);
                v += 0.5 * gp * gp;
            }
            v
        }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].max(lo[i]).min(hi[i]);
    }
}

/// Infinity norm of the projected gradient in scaled coordinates.
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64], scale: &[f64]) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..x.len() {
        let step = (x[i] - scale[i] * scale[i] * g[i]).max(lo[i]).min(hi[i]);
        norm = norm.max(((x[i] - step) / scale[i]).abs());
    }
    norm
}

/// Projected L-BFGS with Armijo backtracking. Returns the reached point, the
/// number of gradient iterations, the final projected-gradient norm, and
/// whether the line search stalled (no descent step found; at a kink this is
/// the practical notion of stationarity). `phi_trace`, when given, records
/// the accepted merit values.
#[allow(clippy::too_many_arguments)]
fn inner_minimize(
    ev: &mut Evaluator,
    merit: &Merit,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    scale: &[f64],
    tol: f64,
    max_iters: usize,
    phi_trace: Option<&mut Vec<f64>>,
) -> (Vec<f64>, usize, f64, bool) {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut phi = ev.merit_grad(&x, merit, &mut g);
    let mut trace = phi_trace;
    if let Some(t) = trace.as_deref_mut() {
        t.push(phi);
    }

    // L-BFGS pairs in scaled coordinates.
    let mut mem_s: Vec<Vec<f64>> = Vec::new();
    let mut mem_y: Vec<Vec<f64>> = Vec::new();
    let mut iters = 0;
    let mut stalled = false;
    let mut pg = projected_gradient_norm(&x, &g, lo, hi, scale);
    let mut slow_rounds = 0usize;
    let mut phi_marker = phi;

    while pg > tol && iters < max_iters {
        iters += 1;
        // Bail out of plateaus: thirty iterations without meaningful merit
        // progress will not reach the tolerance either.
        if iters % 30 == 0 {
            if phi_marker - phi <= 1e-10 * phi.abs().max(1.0) {
                slow_rounds += 1;
                if slow_rounds >= 2 {
                    stalled = true;
                    break;
                }
            } else {
                slow_rounds = 0;
            }
            phi_marker = phi;
        }
        // Two-loop recursion on the scaled gradient.
        let gs: Vec<f64> = (0..n).map(|i| g[i] * scale[i]).collect();
        let mut q = gs.clone();
        let pairs = mem_s.len();
        let mut alpha = vec![0.0; pairs];
        for j in (0..pairs).rev() {
            let rho = 1.0 / dot(&mem_y[j], &mem_s[j]);
            alpha[j] = rho * dot(&mem_s[j], &q);
            axpy(&mut q, -alpha[j], &mem_y[j]);
        }
        if let (Some(s_last), Some(y_last)) = (mem_s.last(), mem_y.last()) {
            let gamma = dot(s_last, y_last) / dot(y_last, y_last);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for j in 0..pairs {
            let rho = 1.0 / dot(&mem_y[j], &mem_s[j]);
            let beta = rho * dot(&mem_y[j], &q);
            axpy(&mut q, alpha[j] - beta, &mem_s[j]);
        }
        // q approximates H * grad in scaled space; descend along -q.
        let mut dir_ok = dot(&q, &gs) > 1e-12 * norm2(&q) * norm2(&gs);
        if !dir_ok {
            q.copy_from_slice(&gs);
            dir_ok = true;
        }
        debug_assert!(dir_ok);

        // Backtracking on the projected path x(t) = P(x - t * s .* q).
        let mut accepted = false;
        let mut t = 1.0;
        let mut x_new = vec![0.0; n];
        let mut phi_new = phi;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = (x[i] - t * scale[i] * q[i]).max(lo[i]).min(hi[i]);
            }
            let step_dot: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if step_dot > -1e-18 {
                // Projection annihilated the step.
                t *= 0.5;
                continue;
            }
            phi_new = ev.merit_value(&x_new, merit);
            if phi_new <= phi + 1e-4 * step_dot {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Try plain projected steepest descent before giving up.
            let mut t = 1.0;
            for _ in 0..50 {
                for i in 0..n {
                    x_new[i] = (x[i] - t * scale[i] * scale[i] * g[i]).max(lo[i]).min(hi[i]);
                }
                let step_dot: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
                if step_dot > -1e-18 {
                    t *= 0.5;
                    continue;
                }
                phi_new = ev.merit_value(&x_new, merit);
                if phi_new <= phi + 1e-4 * step_dot {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            stalled = true;
            break;
        }

        let mut g_new = vec![0.0; n];
        let phi_check = ev.merit_grad(&x_new, merit, &mut g_new);
        debug_assert!((phi_check - phi_new).abs() <= 1e-9 * phi_new.abs().max(1.0));

        let s_vec: Vec<f64> = (0..n).map(|i| (x_new[i] - x[i]) / scale[i]).collect();
        let y_vec: Vec<f64> = (0..n).map(|i| (g_new[i] - g[i]) * scale[i]).collect();
        let sy = dot(&s_vec, &y_vec);
        if sy > 1e-10 * norm2(&s_vec) * norm2(&y_vec) {
            mem_s.push(s_vec);
            mem_y.push(y_vec);
            if mem_s.len() > LBFGS_MEM {
                mem_s.remove(0);
                mem_y.remove(0);
            }
        }
        x = x_new.clone();
        g = g_new;
        phi = phi_new;
        if let Some(t) = trace.as_deref_mut() {
            t.push(phi);
        }
        pg = projected_gradient_norm(&x, &g, lo, hi, scale);
    }
    (x, iters, pg, stalled)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Full augmented-Lagrangian solve from a single start point within the given
/// (possibly node-pinned) bounds.
pub(crate) fn minimize(
    spec: &ProblemSpec,
    lo: &[f64],
    hi: &[f64],
    x0: &[f64],
    opts: &SolveOptions,
) -> NlpOutcome {
    let n = spec.n_vars();
    debug_assert_eq!(lo.len(), n);
    let scale: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]).max(1.0)).collect();
    let mut ev = Evaluator::new(spec);

    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let m_eq = spec.num_eq();
    let m_ineq = spec.num_ineq();
    let mut lam_eq = vec![0.0; m_eq];
    let mut lam_ineq = vec![0.0; m_ineq];
    let mut mu = MU0;
    let mut total_iters = 0usize;
    let mut viol_prev = f64::INFINITY;
    let mut best: Option<(Vec<f64>, f64, f64)> = None; // (x, objective, violation)
    let mut restorations = 0usize;
    let mut consecutive_stalls = 0usize;

    for outer in 0..OUTER_MAX {
        let omega = (1e-2 * 0.25f64.powi(outer as i32)).max(opts.stat_tol);
        let budget = (opts.max_nlp_iters - total_iters).min(200).max(1);
        let merit = Merit::Augmented {
            lam_eq: &lam_eq,
            lam_ineq: &lam_ineq,
            mu,
        };
        let (x_new, iters, _pg, stalled) =
            inner_minimize(&mut ev, &merit, &x, lo, hi, &scale, omega, budget, None);
        total_iters += iters;
        let moved = x_new != x;
        x = x_new;
        if !moved && stalled {
            consecutive_stalls += 1;
        } else {
            consecutive_stalls = 0;
        }

        let eval = spec.evaluate(&x);
        let viol = eval.max_violation();
        if viol <= opts.feas_tol {
            let better = match &best {
                Some((_, obj, _)) => eval.objective < *obj,
                None => true,
            };
            if better {
                best = Some((x.clone(), eval.objective, viol));
            }
        }

        // Stationarity of the Lagrangian at the updated multipliers.
        let mut lam_eq_next = lam_eq.clone();
        let mut lam_ineq_next = lam_ineq.clone();
        for (l, &c) in lam_eq_next.iter_mut().zip(&eval.eq) {
            *l = (*l + mu * c).clamp(-LAMBDA_CAP, LAMBDA_CAP);
        }
        for (l, &g) in lam_ineq_next.iter_mut().zip(&eval.ineq) {
            *l = (*l + mu * g).max(0.0).min(LAMBDA_CAP);
        }
        let mut grad = vec![0.0; n];
        let merit_next = Merit::Augmented {
            lam_eq: &lam_eq_next,
            lam_ineq: &lam_ineq_next,
            mu,
        };
        ev.merit_grad(&x, &merit_next, &mut grad);
        let pg = projected_gradient_norm(&x, &grad, lo, hi, &scale);
        // A stalled line search at a feasible point is stationarity within
        // the search resolution (the landscape has genuine kinks).
        if viol <= opts.feas_tol && (pg <= opts.stat_tol || stalled) {
            return NlpOutcome {
                x,
                objective: eval.objective,
                violation: viol,
                status: NlpStatus::Converged,
                iterations: total_iters,
            };
        }
        lam_eq = lam_eq_next;
        lam_ineq = lam_ineq_next;

        if total_iters >= opts.max_nlp_iters || consecutive_stalls >= 3 {
            break;
        }

        if viol > 0.25 * viol_prev && viol > opts.feas_tol {
            mu = (mu * MU_GROWTH).min(MU_MAX);
        }
        viol_prev = viol;

        // Persistent infeasibility: try pure restoration once before deciding.
        if (mu >= MU_MAX || consecutive_stalls >= 2) && viol > opts.feas_tol {
            if restorations > 0 {
                return infeasible_outcome(spec, ev, x, total_iters, opts, lo, hi, &scale);
            }
            restorations += 1;
            let budget = (opts.max_nlp_iters - total_iters).min(300).max(1);
            let (x_r, iters, _, _) = inner_minimize(
                &mut ev,
                &Merit::Violation,
                &x,
                lo,
                hi,
                &scale,
                opts.stat_tol * 1e-2,
                budget,
                None,
            );
            total_iters += iters;
            let viol_r = spec.evaluate(&x_r).max_violation();
            if viol_r > opts.feas_tol {
                return NlpOutcome {
                    objective: f64::INFINITY,
                    violation: viol_r,
                    x: x_r,
                    status: NlpStatus::Infeasible,
                    iterations: total_iters,
                };
            }
            // Restoration produced a feasible point; restart the multipliers.
            x = x_r;
            lam_eq.iter_mut().for_each(|l| *l = 0.0);
            lam_ineq.iter_mut().for_each(|l| *l = 0.0);
            mu = MU0 * 100.0;
            viol_prev = f64::INFINITY;
            consecutive_stalls = 0;
        }
    }

    // Budget exhausted: return the best feasible point seen, if any.
    if let Some((xb, obj, viol)) = best {
        return NlpOutcome {
            x: xb,
            objective: obj,
            violation: viol,
            status: NlpStatus::IterLimit,
            iterations: total_iters,
        };
    }
    infeasible_outcome(spec, ev, x, total_iters, opts, lo, hi, &scale)
}

/// Final infeasibility decision per the restoration contract: only declare
/// infeasible if minimizing the violation itself cannot reach tolerance.
#[allow(clippy::too_many_arguments)]
fn infeasible_outcome(
    spec: &ProblemSpec,
    mut ev: Evaluator,
    x: Vec<f64>,
    mut total_iters: usize,
    opts: &SolveOptions,
    lo: &[f64],
    hi: &[f64],
    scale: &[f64],
) -> NlpOutcome {
    let (x_r, iters, _, _) = inner_minimize(
        &mut ev,
        &Merit::Violation,
        &x,
        lo,
        hi,
        scale,
        opts.stat_tol * 1e-2,
        300,
        None,
    );
    total_iters += iters;
    let eval = spec.evaluate(&x_r);
    let viol = eval.max_violation();
    if viol <= opts.feas_tol {
        // Feasible but not stationary within budget.
        return NlpOutcome {
            x: x_r,
            objective: eval.objective,
            violation: viol,
            status: NlpStatus::IterLimit,
            iterations: total_iters,
        };
    }
    NlpOutcome {
        x: x_r,
        objective: f64::INFINITY,
        violation: viol,
        status: NlpStatus::Infeasible,
        iterations: total_iters,
    }
}

/// Public NLP entry point for specs whose binaries are pinned by bounds.
///
/// Runs from the deterministic default start and, when a warm start is given,
/// also from the warm start, returning the better outcome; a warm start can
/// therefore never worsen the returned objective.
pub fn solve_nlp(spec: &ProblemSpec, opts: &SolveOptions, warm: Option<&[f64]>) -> Solution {
    let (lo, hi) = spec.bounds();
    for &b in spec.binary_indices() {
        assert!(
            (hi[b] - lo[b]).abs() < 1e-12,
            "solve_nlp requires every binary pinned by bounds; \
             use with_fixed_binaries or solve_bnb"
        );
    }
    let start = std::time::Instant::now();
    let cold = minimize(spec, lo, hi, &spec.default_start(), opts);
    let outcome = match warm {
        Some(w) => {
            let warm_run = minimize(spec, lo, hi, w, opts);
            pick_better(cold, warm_run, opts.feas_tol)
        }
        None => cold,
    };
    let wall = start.elapsed().as_secs_f64();
    outcome_to_solution(outcome, wall)
}

/// Feasible beats infeasible; among equals, lower objective; ties keep `a`.
pub(crate) fn pick_better(a: NlpOutcome, b: NlpOutcome, feas_tol: f64) -> NlpOutcome {
    let fa = a.feasible(feas_tol);
    let fb = b.feasible(feas_tol);
    match (fa, fb) {
        (true, false) => a,
        (false, true) => b,
        (true, true) => {
            if b.objective < a.objective {
                b
            } else {
                a
            }
        }
        (false, false) => {
            if b.violation < a.violation {
                b
            } else {
                a
            }
        }
    }
}

pub(crate) fn outcome_to_solution(o: NlpOutcome, wall: f64) -> Solution {
    let status = match o.status {
        NlpStatus::Converged => SolveStatus::Optimal,
        NlpStatus::Infeasible => SolveStatus::Infeasible,
        NlpStatus::IterLimit => SolveStatus::IterLimit,
    };
    let has_point = status != SolveStatus::Infeasible;
    Solution {
        best_bound: if has_point { o.objective } else { f64::INFINITY },
        decision: if has_point { o.x } else { Vec::new() },
        objective: if has_point { o.objective } else { f64::INFINITY },
        status,
        nodes: 1,
        nlp_iterations: o.iterations as u64,
        wall_time_s: wall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acc::AccState;
    use crate::ocp::{build_acc_problem, build_ems_problem, Horizon, PlantState, Preview};
    use crate::params::Params;
    use crate::powertrain;

    fn params() -> Params {
        Params::shipped_default().unwrap()
    }

    fn tight() -> SolveOptions {
        SolveOptions {
            feas_tol: 1e-9,
            stat_tol: 1e-9,
            max_nlp_iters: 2000,
            ..SolveOptions::default()
        }
    }

    #[test]
    fn acc_horizon_one_matches_projected_quadratic() {
        let p = params();
        let h = Horizon::new(1, 0.1).unwrap();
        // Deep inside the band so the distance error stays zero near the
        // optimum and the objective is a plain quadratic in the acceleration.
        let state = AccState {
            gap_m: 21.0,
            rel_velocity_m_s: 0.8,
            host_velocity_m_s: 10.0,
            prev_accel_m_s2: 0.3,
        };
        let preview = Preview {
            accel_m_s2: vec![0.2],
            speed_m_s: vec![10.8],
        };
        let spec = build_acc_problem(&state, &preview, &p, &h).unwrap();
        let sol = solve_nlp(&spec, &tight(), None);
        assert_eq!(sol.status, SolveStatus::Optimal);

        // Independent projected minimizer of
        //   dt * [ (v_r + dt(a_p - a))^2/vn^2 + (a/a_min)^2 + ((a-ap)/dt/jn)^2 ].
        let w = &p.acc_weights;
        let dt = h.dt_s;
        let vn2 = w.v_r_nmax_m_s * w.v_r_nmax_m_s;
        let an2 = w.a_min_m_s2 * w.a_min_m_s2;
        let jn2 = w.j_nmax_m_s3 * w.j_nmax_m_s3;
        let quad = 2.0 * (dt * dt / vn2 + 1.0 / an2 + 1.0 / (dt * dt * jn2));
        let lin = -2.0 * dt * (state.rel_velocity_m_s + dt * preview.accel_m_s2[0]) / vn2
            - 2.0 * state.prev_accel_m_s2 / (dt * dt * jn2);
        let vertex = -lin / quad;
        let a_star = vertex.clamp(w.a_min_m_s2, w.a_max_m_s2);
        // The chosen state keeps the distance error inactive at the optimum.
        let (lo, hi) = crate::acc::spacing_band(state.host_velocity_m_s + dt * a_star);
        let gap_next = state.gap_m + dt * state.rel_velocity_m_s;
        assert!(gap_next > lo && gap_next < hi);
        assert!(
            (sol.decision[0] - a_star).abs() <= 1e-8,
            "solver {} vs projected quadratic {}",
            sol.decision[0],
            a_star
        );
    }

    #[test]
    fn ems_braking_point_is_fully_determined() {
        let p = params();
        let h = Horizon::new(1, 0.1).unwrap();
        let state = PlantState {
            acc: AccState {
                gap_m: 20.0,
                rel_velocity_m_s: 0.0,
                host_velocity_m_s: 10.0,
                prev_accel_m_s2: 0.0,
            },
            soc: 0.6,
        };
        let preview = Preview {
            accel_m_s2: vec![-1.0],
            speed_m_s: vec![10.0],
        };
        let spec = build_ems_problem(&state, &[-1.0], &preview, &p, &h).unwrap();
        let pinned = spec.with_fixed_binaries(&[Some(false), Some(false)]);
        let sol = solve_nlp(&pinned, &tight(), None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let t_w = powertrain::wheel_torque(-1.0, 10.0, &p.vehicle);
        let t_m = powertrain::motor_torque(t_w, 0.0, false, &p.drivetrain);
        assert!((sol.decision[2] - t_m).abs() <= 1e-6, "{} vs {t_m}", sol.decision[2]);
        for idx in [0, 1, 3, 4, 5] {
            assert_eq!(sol.decision[idx], 0.0);
        }
        // Regeneration burns nothing; the objective is pure SOC tracking.
        let fuel = powertrain::fuel_rate(sol.decision[1], sol.decision[0], &p.engine_map).unwrap();
        assert_eq!(fuel, 0.0);
    }

    #[test]
    fn inner_descent_is_monotone() {
        let p = params();
        let h = Horizon::new(2, 0.1).unwrap();
        let state = PlantState {
            acc: AccState {
                gap_m: 20.0,
                rel_velocity_m_s: 0.4,
                host_velocity_m_s: 9.0,
                prev_accel_m_s2: 0.1,
            },
            soc: 0.58,
        };
        let preview = Preview {
            accel_m_s2: vec![0.2, -0.1],
            speed_m_s: vec![9.4, 9.42],
        };
        let spec = crate::ocp::build_coop_problem(&state, &preview, &p, &h).unwrap();
        let (lo, hi) = spec.bounds();
        let scale: Vec<f64> = (0..spec.n_vars())
            .map(|i| (hi[i] - lo[i]).max(1.0))
            .collect();
        let mut ev = Evaluator::new(&spec);
        let lam_eq = vec![0.0; spec.num_eq()];
        let lam_ineq = vec![0.0; spec.num_ineq()];
        let merit = Merit::Augmented {
            lam_eq: &lam_eq,
            lam_ineq: &lam_ineq,
            mu: 10.0,
        };
        let mut trace = Vec::new();
        let x0 = spec.default_start();
        inner_minimize(
            &mut ev, &merit, &x0, lo, hi, &scale, 1e-9, 200, Some(&mut trace),
        );
        assert!(trace.len() > 2, "expected some accepted iterations");
        for pair in trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "merit increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }
}
