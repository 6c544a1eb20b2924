//! Finite-horizon problem transcriptions.
//!
//! Three variants are built over the same machinery:
//!
//! * `Acc` — comfort/tracking control of the host acceleration alone;
//! * `Ems` — powertrain allocation under a fixed acceleration profile;
//! * `Coop` — both at once, one decision vector, summed objective.
//!
//! The transcription is single-shooting: decision variables are the per-step
//! controls, states are eliminated by an explicit-Euler rollout inside the
//! evaluators, and path restrictions become constraint rows on the rolled-out
//! states. Residual convention: equality rows `h(z) = 0`, inequality rows
//! `g(z) <= 0` feasible. Rows are normalized by characteristic magnitudes at
//! build time so a single absolute feasibility tolerance is meaningful across
//! torque, speed, and SOC rows.
//!
//! Decision vector layout, per step `k`:
//!
//! ```text
//! Acc:  [a_h]                                        width 1
//! Ems:  [T_e, w_e, T_m, T_3, delta_e, i_c]           width 6
//! Coop: [a_h, T_e, w_e, T_m, T_3, delta_e, i_c]      width 7
//! ```
//!
//! Row layout, per step `k` (equalities then inequalities, step-major):
//!
//! ```text
//! eq:   torque balance, clutch speed coupling                (Ems, Coop)
//! ineq: v_h lower, v_h upper                                 (Acc, Coop)
//!       w_e/T_e semi-continuity (4), i_c <= delta_e,
//!       T_3 envelope, generator speed (2), generator torque (2),
//!       motor speed (2), battery discriminant, SOC bounds (2) (Ems, Coop)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acc::{model as acc_model, AccState};
use crate::ad::{Dual, Real, GRAD_CAP};
use crate::params::Params;
use crate::powertrain::model as pt;

/// Speed window over which the transcription ramps the rolling-resistance
/// term in, instead of the plant's exact on/off switch at standstill.
const ROLLING_RAMP_MPS: f64 = 0.01;

/// Prediction horizon: step count and step length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub steps: usize,
    pub dt_s: f64,
}

impl Horizon {
    pub fn new(steps: usize, dt_s: f64) -> Result<Self, OcpError> {
        if steps < 1 || !(dt_s > 0.0) {
            return Err(OcpError::BadHorizon { steps, dt_s });
        }
        Ok(Horizon { steps, dt_s })
    }

    /// Eight steps of 0.1 s.
    pub fn standard() -> Self {
        Horizon {
            steps: 8,
            dt_s: 0.1,
        }
    }
}

/// Fuel-versus-charge-sustaining trade-off weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmsWeights {
    /// Cost coefficient on the normalized SOC deviation, in grams.
    pub lambda_g: f64,
    pub soc_ref: f64,
}

/// Combined plant state the controllers act on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    pub acc: AccState,
    pub soc: f64,
}

/// Preceding-vehicle preview over the horizon.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Preview {
    pub accel_m_s2: Vec<f64>,
    pub speed_m_s: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Acc,
    Ems,
    Coop,
}

/// Admissible per-step binary patterns `(engine_on, clutch_engaged)`; the
/// clutch cannot engage with the engine off.
pub const ADMISSIBLE_PATTERNS: [(bool, bool); 3] = [(false, false), (true, false), (true, true)];

#[derive(Debug, Error)]
pub enum OcpError {
    #[error("horizon must have steps >= 1 and dt > 0, got steps={steps}, dt={dt_s}")]
    BadHorizon { steps: usize, dt_s: f64 },
    #[error("preview length {got} does not match horizon steps {expected}")]
    PreviewLength { expected: usize, got: usize },
    #[error("fixed acceleration length {got} does not match horizon steps {expected}")]
    FixedAccelLength { expected: usize, got: usize },
    #[error("{n_vars} decision variables exceed the differentiation capacity {cap}")]
    TooManyVariables { n_vars: usize, cap: usize },
}

/// Constraint values at a point: `eq` rows target zero, `ineq` rows are
/// feasible when nonpositive.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub objective: f64,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

impl Evaluation {
    /// Worst violation across all rows.
    pub fn max_violation(&self) -> f64 {
        let eq = self.eq.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let ineq = self.ineq.iter().fold(0.0f64, |m, r| m.max(*r));
        eq.max(ineq)
    }
}

/// Dense first derivatives at a point.
#[derive(Clone, Debug)]
pub struct GradientEval {
    pub objective: Vec<f64>,
    pub eq: Vec<Vec<f64>>,
    pub ineq: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
struct RowScales {
    balance: f64,
    clutch_speed: f64,
    w_e: f64,
    t_e: f64,
    t_3: f64,
    w_g: f64,
    t_g: f64,
    w_m: f64,
    disc: f64,
    v_h: f64,
}

/// An immutable transcription; evaluation and differentiation are reentrant.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    variant: Variant,
    horizon: Horizon,
    params: Params,
    state0: PlantState,
    preview: Preview,
    /// Ems only: the acceleration profile imposed by the upper controller.
    fixed_accel: Vec<f64>,
    /// Ems only: host speed rollout under `fixed_accel` (length steps + 1).
    fixed_vh: Vec<f64>,
    n_vars: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    binaries: Vec<usize>,
    scales: RowScales,
    warnings: Vec<String>,
}

/// Width of one step's decision block.
fn stride(variant: Variant) -> usize {
    match variant {
        Variant::Acc => 1,
        Variant::Ems => 6,
        Variant::Coop => 7,
    }
}

/// Offset of the powertrain block within a step's block.
fn pt_offset(variant: Variant) -> usize {
    match variant {
        Variant::Acc => unreachable!("no powertrain block in the acc variant"),
        Variant::Ems => 0,
        Variant::Coop => 1,
    }
}

impl ProblemSpec {
    pub fn variant(&self) -> Variant {
        self.variant
    }
    pub fn horizon(&self) -> Horizon {
        self.horizon
    }
    pub fn params(&self) -> &Params {
        &self.params
    }
    pub fn initial_state(&self) -> PlantState {
        self.state0
    }
    pub fn preview(&self) -> &Preview {
        &self.preview
    }
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }
    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }
    /// Flat indices of the binary variables, step-major, engine flag first.
    pub fn binary_indices(&self) -> &[usize] {
        &self.binaries
    }
    /// Build warnings (for example a fixed acceleration outside the comfort
    /// bounds); the problem remains solvable.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn num_eq(&self) -> usize {
        match self.variant {
            Variant::Acc => 0,
            _ => 2 * self.horizon.steps,
        }
    }

    pub fn num_ineq(&self) -> usize {
        let n = self.horizon.steps;
        match self.variant {
            Variant::Acc => 2 * n,
            Variant::Ems => 15 * n,
            Variant::Coop => 17 * n,
        }
    }

    /// `(engine_flag_index, clutch_flag_index)` per step.
    pub fn binary_pairs(&self) -> Vec<(usize, usize)> {
        self.binaries.chunks(2).map(|c| (c[0], c[1])).collect()
    }

    /// A copy with the given binaries pinned by bounds. Pinning the engine
    /// flag off also pins its torque and speed to zero; pinning the clutch
    /// open pins the gear-3 torque. `fixing` is indexed like `binary_pairs`.
    pub fn with_fixed_binaries(&self, fixing: &[Option<bool>]) -> ProblemSpec {
        let mut out = self.clone();
        let w = stride(self.variant);
        let o = pt_offset(self.variant);
        for (pair, fix) in fixing.chunks(2).enumerate() {
            let base = pair * w + o;
            if let Some(Some(on)) = fix.first() {
                let b = if *on { 1.0 } else { 0.0 };
                out.lower[base + 4] = b;
                out.upper[base + 4] = b;
                let m = &self.params.engine_map;
                if *on {
                    out.lower[base + 1] = m.w_min_rad_s;
                    out.upper[base + 1] = m.w_max_rad_s;
                    out.lower[base] = m.t_min_nm;
                    out.upper[base] = m.t_max_nm;
                } else {
                    out.lower[base + 1] = 0.0;
                    out.upper[base + 1] = 0.0;
                    out.lower[base] = 0.0;
                    out.upper[base] = 0.0;
                }
            }
            if let Some(Some(engaged)) = fix.get(1) {
                let b = if *engaged { 1.0 } else { 0.0 };
                out.lower[base + 5] = b;
                out.upper[base + 5] = b;
                if !*engaged {
                    out.lower[base + 3] = 0.0;
                    out.upper[base + 3] = 0.0;
                }
            }
        }
        out
    }

    /// Objective and constraint rows at `z`.
    pub fn evaluate(&self, z: &[f64]) -> Evaluation {
        assert_eq!(z.len(), self.n_vars);
        let mut eq = Vec::with_capacity(self.num_eq());
        let mut ineq = Vec::with_capacity(self.num_ineq());
        let (acc_part, ems_part) = self.eval_generic(z, &mut eq, &mut ineq);
        Evaluation {
            objective: acc_part + ems_part,
            eq,
            ineq,
        }
    }

    /// The comfort and powertrain shares of the objective.
    pub fn objective_parts(&self, z: &[f64]) -> (f64, f64) {
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        self.eval_generic(z, &mut eq, &mut ineq)
    }

    /// Exact first derivatives by a forward-mode sweep.
    pub fn gradient(&self, z: &[f64]) -> GradientEval {
        assert_eq!(z.len(), self.n_vars);
        let n = self.n_vars;
        let zd: Vec<Dual> = z
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::seeded(v, n, i))
            .collect();
        let mut eq = Vec::with_capacity(self.num_eq());
        let mut ineq = Vec::with_capacity(self.num_ineq());
        let (acc_part, ems_part) = self.eval_generic(&zd, &mut eq, &mut ineq);
        let obj = acc_part + ems_part;
        // Rows that are constant in the decisions carry short gradients; pad.
        let full = |d: &Dual| {
            let mut v = d.grad().to_vec();
            v.resize(n, 0.0);
            v
        };
        GradientEval {
            objective: full(&obj),
            eq: eq.iter().map(full).collect(),
            ineq: ineq.iter().map(full).collect(),
        }
    }

    /// Plain-value sweep into caller-owned buffers; the solver's hot path.
    pub(crate) fn eval_f64_into(
        &self,
        z: &[f64],
        eq: &mut Vec<f64>,
        ineq: &mut Vec<f64>,
    ) -> f64 {
        let (a, b) = self.eval_generic(z, eq, ineq);
        a + b
    }

    /// Reverse-mode sweep into caller-owned buffers; the solver's hot path.
    pub(crate) fn eval_generic_rev(
        &self,
        z: &[crate::ad::reverse::Rev],
        eq: &mut Vec<crate::ad::reverse::Rev>,
        ineq: &mut Vec<crate::ad::reverse::Rev>,
    ) -> (crate::ad::reverse::Rev, crate::ad::reverse::Rev) {
        self.eval_generic(z, eq, ineq)
    }

    /// Deterministic start point: rest actuation, equality-consistent motor
    /// torque, midpoints where nothing better is known. Respects the current
    /// (possibly pinned) bounds.
    pub fn default_start(&self) -> Vec<f64> {
        let n = self.horizon.steps;
        let w = stride(self.variant);
        let mut z = vec![0.0; self.n_vars];
        if self.variant == Variant::Acc {
            for k in 0..n {
                z[k] = clamp_to(0.0, self.lower[k], self.upper[k]);
            }
            return z;
        }
        let o = pt_offset(self.variant);
        let d = &self.params.drivetrain;
        let mut v_h = self.state0.acc.host_velocity_m_s;
        for k in 0..n {
            let base = k * w + o;
            let a = if self.variant == Variant::Ems {
                self.fixed_accel[k]
            } else {
                let idx = k * w;
                z[idx] = clamp_to(0.0, self.lower[idx], self.upper[idx]);
                z[idx]
            };
            let mid = |i: usize| 0.5 * (self.lower[i] + self.upper[i]);
            let de = mid(base + 4);
            let ic = mid(base + 5);
            z[base + 4] = de;
            z[base + 5] = ic;
            // Engine speed: follow the clutch coupling when engaged, else the
            // box midpoint (zero when pinned off).
            let w_wheel = v_h.max(0.0) / self.params.vehicle.wheel_radius_m;
            let coupled = w_wheel * d.engine_wheel_ratio();
            let we = if ic > 0.5 {
                clamp_to(coupled, self.lower[base + 1], self.upper[base + 1])
            } else {
                mid(base + 1)
            };
            z[base + 1] = we;
            z[base] = mid(base);
            z[base + 3] = clamp_to(0.0, self.lower[base + 3], self.upper[base + 3]);
            // Motor torque from the balance with the chosen gear-3 share.
            let t_w = pt::wheel_torque_ramped(a, v_h.max(0.0), &self.params.vehicle, ROLLING_RAMP_MPS);
            let tm = (t_w - z[base + 3] * d.engine_wheel_ratio() * d.gear_eff * ic)
                / (d.motor_wheel_ratio() * d.gear_eff);
            z[base + 2] = clamp_to(tm, self.lower[base + 2], self.upper[base + 2]);
            v_h += self.horizon.dt_s * a;
        }
        z
    }

    /// Projects a candidate onto the current bounds and restores dependent
    /// quantities: the engine speed under an engaged clutch and the motor
    /// torque from the torque balance. Turns a solution of a related problem
    /// (a parent node, the previous horizon) into a near-feasible start.
    pub fn repair_start(&self, seed: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = seed
            .iter()
            .enumerate()
            .map(|(i, &v)| clamp_to(v, self.lower[i], self.upper[i]))
            .collect();
        if self.variant == Variant::Acc {
            return z;
        }
        let w = stride(self.variant);
        let o = pt_offset(self.variant);
        let d = &self.params.drivetrain;
        let mut v_h = self.state0.acc.host_velocity_m_s;
        for k in 0..self.horizon.steps {
            let base = k * w + o;
            let a = if self.variant == Variant::Ems {
                self.fixed_accel[k]
            } else {
                z[k * w]
            };
            let ic = z[base + 5];
            if ic > 0.5 {
                let w_wheel = v_h.max(0.0) / self.params.vehicle.wheel_radius_m;
                z[base + 1] = clamp_to(
                    w_wheel * d.engine_wheel_ratio(),
                    self.lower[base + 1],
                    self.upper[base + 1],
                );
            }
            let t_w = pt::wheel_torque_ramped(a, v_h.max(0.0), &self.params.vehicle, ROLLING_RAMP_MPS);
            let tm = (t_w - z[base + 3] * d.engine_wheel_ratio() * d.gear_eff * ic)
                / (d.motor_wheel_ratio() * d.gear_eff);
            z[base + 2] = clamp_to(tm, self.lower[base + 2], self.upper[base + 2]);
            v_h += self.horizon.dt_s * a;
        }
        z
    }

    /// Single generic sweep producing the objective parts and all rows.
    /// Instantiated with `f64` for values and `Dual` for derivatives.
    fn eval_generic<S: Real>(&self, z: &[S], eq: &mut Vec<S>, ineq: &mut Vec<S>) -> (S, S) {
        eq.clear();
        ineq.clear();
        let n = self.horizon.steps;
        let dt = self.horizon.dt_s;
        let p = &self.params;
        let aw = &p.acc_weights;
        let ew = &p.ems_weights;
        let d = &p.drivetrain;
        let sc = &self.scales;
        let w = stride(self.variant);

        let mut obj_acc = S::lit(0.0);
        let mut obj_ems = S::lit(0.0);

        // Car-following rollout state (Acc/Coop).
        let mut gap = S::lit(self.state0.acc.gap_m);
        let mut v_r = S::lit(self.state0.acc.rel_velocity_m_s);
        let mut v_h = S::lit(self.state0.acc.host_velocity_m_s);
        let mut a_prev = S::lit(self.state0.acc.prev_accel_m_s2);
        // Energy rollout state (Ems/Coop).
        let mut soc = S::lit(self.state0.soc);

        for k in 0..n {
            // Acceleration applied over this interval.
            let a: S = match self.variant {
                Variant::Acc | Variant::Coop => z[k * w],
                Variant::Ems => S::lit(self.fixed_accel[k]),
            };
            // Host speed at the start of the interval (drives the torque
            // demand and the speeds of every machine).
            let v_now: S = if self.variant == Variant::Ems {
                S::lit(self.fixed_vh[k])
            } else {
                v_h
            };

            if self.variant != Variant::Acc {
                let base = k * w + pt_offset(self.variant);
                let t_e = z[base];
                let w_e = z[base + 1];
                let t_m = z[base + 2];
                let t_3 = z[base + 3];
                let de = z[base + 4];
                let ic = z[base + 5];

                let w_wheel = v_now * S::lit(1.0 / p.vehicle.wheel_radius_m);
                let t_w = pt::wheel_torque_ramped(a, v_now, &p.vehicle, ROLLING_RAMP_MPS);
                let w_m = w_wheel * S::lit(d.motor_wheel_ratio());

                // Torque balance and clutch speed coupling.
                eq.push(
                    (t_m * S::lit(d.motor_wheel_ratio() * d.gear_eff)
                        + t_3 * ic * S::lit(d.engine_wheel_ratio() * d.gear_eff)
                        - t_w)
                        * S::lit(sc.balance),
                );
                eq.push(ic * (w_e - w_wheel * S::lit(d.engine_wheel_ratio())) * S::lit(sc.clutch_speed));

                // Semi-continuous engine envelopes and clutch admissibility.
                let em = &p.engine_map;
                ineq.push((w_e - de * S::lit(em.w_max_rad_s)) * S::lit(sc.w_e));
                ineq.push((de * S::lit(em.w_min_rad_s) - w_e) * S::lit(sc.w_e));
                ineq.push((t_e - de * S::lit(em.t_max_nm)) * S::lit(sc.t_e));
                ineq.push((de * S::lit(em.t_min_nm) - t_e) * S::lit(sc.t_e));
                ineq.push(ic - de);
                ineq.push((t_3 - ic * S::lit(d.gear3_torque_max_nm)) * S::lit(sc.t_3));

                // Generator path.
                let gm = &p.generator_map;
                let w_g = w_e * S::lit(1.0 / d.ratio_gen);
                let t_g = (t_e - t_3 * ic * S::lit(1.0 / d.gear_eff)) * S::lit(d.ratio_gen * d.gear_eff);
                ineq.push((de * S::lit(gm.w_min_rad_s) - w_g) * S::lit(sc.w_g));
                ineq.push((w_g - S::lit(gm.w_max_rad_s)) * S::lit(sc.w_g));
                ineq.push((t_g - S::lit(gm.t_max_nm)) * S::lit(sc.t_g));
                ineq.push((S::lit(gm.t_min_nm) - t_g) * S::lit(sc.t_g));

                // Motor speed window (state-dependent in the coop variant).
                let mm = &p.motor_map;
                ineq.push((S::lit(mm.w_min_rad_s) - w_m) * S::lit(sc.w_m));
                ineq.push((w_m - S::lit(mm.w_max_rad_s)) * S::lit(sc.w_m));

                // Electrical balance and SOC step.
                let eta_m = pt::motor_efficiency(mm, w_m, t_m)
                    .max_val(S::lit(0.05))
                    .min_val(S::lit(0.999));
                let eta_g = pt::generator_efficiency(gm, w_g, t_g)
                    .max_val(S::lit(0.05))
                    .min_val(S::lit(0.999));
                let p_b = pt::battery_power(t_m, w_m, eta_m, t_g, w_g, eta_g);
                let b = &p.battery;
                let voc = pt::quad_curve(&b.voc_coeffs, soc);
                let res = pt::quad_curve(&b.res_coeffs, soc);
                ineq.push((S::lit(4.0) * res * p_b - voc * voc) * S::lit(sc.disc));
                let soc_next = soc + S::lit(dt) * pt::soc_rate_clamped(p_b, soc, b);
                ineq.push(S::lit(b.soc_min) - soc_next);
                ineq.push(soc_next - S::lit(b.soc_max));

                let fuel = pt::fuel_rate(em, w_e, t_e);
                let soc_dev = (soc_next - S::lit(ew.soc_ref)) * S::lit(1.0 / (b.soc_max - b.soc_min));
                obj_ems = obj_ems + S::lit(dt) * (fuel + S::lit(ew.lambda_g) * soc_dev * soc_dev);
                soc = soc_next;
            }

            if self.variant != Variant::Ems {
                // Unclamped Euler rollout; the velocity window keeps the
                // optimizer inside the regime where the plant clamp is inert.
                let gap_next = gap + S::lit(dt) * v_r;
                let v_r_next = v_r + S::lit(dt) * (S::lit(self.preview.accel_m_s2[k]) - a);
                let v_h_next = v_h + S::lit(dt) * a;
                let e = acc_model::distance_error(gap_next, v_h_next);
                let j = (a - a_prev) * S::lit(1.0 / dt);
                obj_acc = obj_acc + S::lit(dt) * acc_model::stage_cost(e, v_r_next, a, j, aw);
                ineq.push((S::lit(aw.v_min_m_s) - v_h_next) * S::lit(sc.v_h));
                ineq.push((v_h_next - S::lit(aw.v_max_m_s)) * S::lit(sc.v_h));
                gap = gap_next;
                v_r = v_r_next;
                v_h = v_h_next;
                a_prev = a;
            }
        }
        (obj_acc, obj_ems)
    }
}

fn clamp_to(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

fn scales_for(params: &Params) -> RowScales {
    let d = &params.drivetrain;
    let em = &params.engine_map;
    let mm = &params.motor_map;
    let gm = &params.generator_map;
    let voc_ref = pt::quad_curve(&params.battery.voc_coeffs, params.ems_weights.soc_ref);
    RowScales {
        balance: 1.0 / (d.motor_wheel_ratio() * d.gear_eff * mm.t_max_nm),
        clutch_speed: 1.0 / em.w_max_rad_s,
        w_e: 1.0 / em.w_max_rad_s,
        t_e: 1.0 / em.t_max_nm,
        t_3: 1.0 / d.gear3_torque_max_nm,
        w_g: 1.0 / gm.w_max_rad_s,
        t_g: 1.0 / gm.t_max_nm,
        w_m: 1.0 / mm.w_max_rad_s,
        disc: 1.0 / (voc_ref * voc_ref),
        v_h: 1.0 / params.acc_weights.v_max_m_s,
    }
}

fn check_capacity(n_vars: usize) -> Result<(), OcpError> {
    if n_vars > GRAD_CAP {
        return Err(OcpError::TooManyVariables {
            n_vars,
            cap: GRAD_CAP,
        });
    }
    Ok(())
}

fn check_preview(preview: &Preview, steps: usize) -> Result<(), OcpError> {
    if preview.accel_m_s2.len() != steps || preview.speed_m_s.len() != steps {
        return Err(OcpError::PreviewLength {
            expected: steps,
            got: preview.accel_m_s2.len().min(preview.speed_m_s.len()),
        });
    }
    Ok(())
}

fn powertrain_bounds(params: &Params, lower: &mut Vec<f64>, upper: &mut Vec<f64>) {
    let em = &params.engine_map;
    let mm = &params.motor_map;
    // T_e, w_e: semi-continuous, so the relaxed box starts at zero.
    lower.push(0.0);
    upper.push(em.t_max_nm);
    lower.push(0.0);
    upper.push(em.w_max_rad_s);
    lower.push(mm.t_min_nm);
    upper.push(mm.t_max_nm);
    lower.push(0.0);
    upper.push(params.drivetrain.gear3_torque_max_nm);
    lower.push(0.0);
    upper.push(1.0);
    lower.push(0.0);
    upper.push(1.0);
}

/// Comfort/tracking problem over the host acceleration sequence.
pub fn build_acc_problem(
    state: &AccState,
    preview: &Preview,
    params: &Params,
    horizon: &Horizon,
) -> Result<ProblemSpec, OcpError> {
    check_preview(preview, horizon.steps)?;
    check_capacity(horizon.steps)?;
    let aw = &params.acc_weights;
    let lower = vec![aw.a_min_m_s2; horizon.steps];
    let upper = vec![aw.a_max_m_s2; horizon.steps];
    Ok(ProblemSpec {
        variant: Variant::Acc,
        horizon: *horizon,
        params: params.clone(),
        state0: PlantState {
            acc: *state,
            soc: 0.0,
        },
        preview: preview.clone(),
        fixed_accel: Vec::new(),
        fixed_vh: Vec::new(),
        n_vars: horizon.steps,
        lower,
        upper,
        binaries: Vec::new(),
        scales: scales_for(params),
        warnings: Vec::new(),
    })
}

/// Powertrain allocation problem under an imposed acceleration profile.
pub fn build_ems_problem(
    state: &PlantState,
    fixed_accel: &[f64],
    preview: &Preview,
    params: &Params,
    horizon: &Horizon,
) -> Result<ProblemSpec, OcpError> {
    check_preview(preview, horizon.steps)?;
    if fixed_accel.len() != horizon.steps {
        return Err(OcpError::FixedAccelLength {
            expected: horizon.steps,
            got: fixed_accel.len(),
        });
    }
    let n_vars = 6 * horizon.steps;
    check_capacity(n_vars)?;
    let mut warnings = Vec::new();
    let aw = &params.acc_weights;
    for (k, &a) in fixed_accel.iter().enumerate() {
        if a < aw.a_min_m_s2 - 1e-9 || a > aw.a_max_m_s2 + 1e-9 {
            warnings.push(format!(
                "fixed acceleration {a} at step {k} violates the comfort bounds [{}, {}]",
                aw.a_min_m_s2, aw.a_max_m_s2
            ));
        }
    }
    let mut fixed_vh = Vec::with_capacity(horizon.steps + 1);
    let mut v = state.acc.host_velocity_m_s;
    fixed_vh.push(v);
    for &a in fixed_accel {
        v += horizon.dt_s * a;
        fixed_vh.push(v);
    }
    let mut lower = Vec::with_capacity(n_vars);
    let mut upper = Vec::with_capacity(n_vars);
    let mut binaries = Vec::with_capacity(2 * horizon.steps);
    for k in 0..horizon.steps {
        powertrain_bounds(params, &mut lower, &mut upper);
        binaries.push(6 * k + 4);
        binaries.push(6 * k + 5);
    }
    Ok(ProblemSpec {
        variant: Variant::Ems,
        horizon: *horizon,
        params: params.clone(),
        state0: *state,
        preview: preview.clone(),
        fixed_accel: fixed_accel.to_vec(),
        fixed_vh,
        n_vars,
        lower,
        upper,
        binaries,
        scales: scales_for(params),
        warnings,
    })
}

/// Joint problem: acceleration and powertrain decided together, objective
/// summed, constraint set the union of the two variants'.
pub fn build_coop_problem(
    state: &PlantState,
    preview: &Preview,
    params: &Params,
    horizon: &Horizon,
) -> Result<ProblemSpec, OcpError> {
    check_preview(preview, horizon.steps)?;
    let n_vars = 7 * horizon.steps;
    check_capacity(n_vars)?;
    let aw = &params.acc_weights;
    let mut lower = Vec::with_capacity(n_vars);
    let mut upper = Vec::with_capacity(n_vars);
    let mut binaries = Vec::with_capacity(2 * horizon.steps);
    for k in 0..horizon.steps {
        lower.push(aw.a_min_m_s2);
        upper.push(aw.a_max_m_s2);
        powertrain_bounds(params, &mut lower, &mut upper);
        binaries.push(7 * k + 5);
        binaries.push(7 * k + 6);
    }
    Ok(ProblemSpec {
        variant: Variant::Coop,
        horizon: *horizon,
        params: params.clone(),
        state0: *state,
        preview: preview.clone(),
        fixed_accel: Vec::new(),
        fixed_vh: Vec::new(),
        n_vars,
        lower,
        upper,
        binaries,
        scales: scales_for(params),
        warnings: Vec::new(),
    })
}

/// Splices an acceleration sequence and a powertrain decision sequence into
/// one coop decision vector. Used to seed the joint solve with a sequential
/// solution and to state the feasible-region inclusion property directly.
pub fn compose_coop_vector(accel: &[f64], ems_decision: &[f64], steps: usize) -> Vec<f64> {
    assert_eq!(accel.len(), steps);
    assert_eq!(ems_decision.len(), 6 * steps);
    let mut z = Vec::with_capacity(7 * steps);
    for k in 0..steps {
        z.push(accel[k]);
        z.extend_from_slice(&ems_decision[6 * k..6 * k + 6]);
    }
    z
}
