//! Receding-horizon closed loop over a drive cycle.
//!
//! The preceding vehicle follows the cycle; the host replans every step with
//! perfect preview over the horizon, applies the first move, and the plant
//! advances by one explicit-Euler step. Two controller arrangements are
//! supported: `Sequential` (comfort controller first, powertrain allocation
//! under its acceleration) and `Coop` (one joint solve).
//!
//! Outputs are bit-stable: the per-step record CSV and the summary contain
//! only deterministic quantities; wall-clock solve times go to a separate
//! timings CSV that is excluded from the reproducibility guarantee.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acc::{self, AccState};
use crate::minlp::{
    solve_bnb_traced, solve_bnb_warm, solve_nlp, SolveOptions, SolveStatus, Solution,
};
use crate::ocp::{
    build_acc_problem, build_coop_problem, build_ems_problem, compose_coop_vector, Horizon,
    PlantState, Preview, ProblemSpec, Variant,
};
use crate::params::Params;
use crate::powertrain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sequential,
    Coop,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Sequential => f.write_str("sequential"),
            Mode::Coop => f.write_str("coop"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("cycle file line {line}: {message}")]
    Cycle { line: usize, message: String },
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("solver failed at step {step} (t = {time_s} s): {status}\nstate dump: {dump}")]
    Infeasible {
        step: usize,
        time_s: f64,
        status: SolveStatus,
        dump: String,
    },
    #[error("plant error at step {step}: {source}")]
    Plant {
        step: usize,
        source: powertrain::PowertrainError,
    },
    #[error("constraint breach at step {step}: {what}")]
    ConstraintBreach { step: usize, what: String },
}

/// Uniformly resampled preceding-vehicle speed trace.
#[derive(Clone, Debug)]
pub struct DriveCycle {
    pub time_s: Vec<f64>,
    pub speed_mps: Vec<f64>,
}

impl DriveCycle {
    /// Parses the raw `time_s,speed_mps` CSV without resampling.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(SimError::Cycle {
            line: 1,
            message: "empty file".into(),
        })?;
        if header.trim() != "time_s,speed_mps" {
            return Err(SimError::Cycle {
                line: 1,
                message: format!("expected header 'time_s,speed_mps', got '{}'", header.trim()),
            });
        }
        let mut time = Vec::new();
        let mut speed = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut parts = trimmed.split(',');
            let t: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| SimError::Cycle {
                    line: line_no,
                    message: format!("malformed time field in '{trimmed}'"),
                })?;
            let v: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| SimError::Cycle {
                    line: line_no,
                    message: format!("malformed speed field in '{trimmed}'"),
                })?;
            if parts.next().is_some() {
                return Err(SimError::Cycle {
                    line: line_no,
                    message: "expected exactly two fields".into(),
                });
            }
            if let Some(&last) = time.last() {
                if t <= last {
                    return Err(SimError::Cycle {
                        line: line_no,
                        message: format!("time not strictly increasing ({t} after {last})"),
                    });
                }
            }
            if v < 0.0 {
                return Err(SimError::Cycle {
                    line: line_no,
                    message: format!("negative speed {v}"),
                });
            }
            time.push(t);
            speed.push(v);
        }
        if time.len() < 2 {
            return Err(SimError::Cycle {
                line: time.len() + 1,
                message: "need at least two samples".into(),
            });
        }
        Ok(DriveCycle {
            time_s: time,
            speed_mps: speed,
        })
    }

    /// Linear interpolation; the trace holds its end values outside the grid.
    pub fn speed_at(&self, t: f64) -> f64 {
        let times = &self.time_s;
        if t <= times[0] {
            return self.speed_mps[0];
        }
        if t >= *times.last().unwrap() {
            return *self.speed_mps.last().unwrap();
        }
        let idx = times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (times[idx], times[idx + 1]);
        let (v0, v1) = (self.speed_mps[idx], self.speed_mps[idx + 1]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn start_time(&self) -> f64 {
        self.time_s[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.time_s.last().unwrap()
    }

    pub fn duration_s(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Trapezoidal distance of the sampled trace.
    pub fn distance_m(&self) -> f64 {
        let mut d = 0.0;
        for i in 1..self.time_s.len() {
            d += 0.5
                * (self.speed_mps[i] + self.speed_mps[i - 1])
                * (self.time_s[i] - self.time_s[i - 1]);
        }
        d
    }

    /// Resampled copy on a uniform `dt` grid spanning the same extent.
    pub fn resample(&self, dt: f64) -> DriveCycle {
        let n = (self.duration_s() / dt).floor() as usize;
        let mut time = Vec::with_capacity(n + 1);
        let mut speed = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = self.start_time() + dt * k as f64;
            time.push(t);
            speed.push(self.speed_at(t));
        }
        DriveCycle {
            time_s: time,
            speed_mps: speed,
        }
    }
}

/// Loads a drive-cycle CSV and resamples it to the controller step.
pub fn load_cycle(path: impl AsRef<Path>, dt: f64) -> Result<DriveCycle, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(DriveCycle::parse(&text)?.resample(dt))
}

fn default_initial_soc() -> f64 {
    0.6
}

/// Closed-loop run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: Mode,
    #[serde(default = "default_initial_soc")]
    pub initial_soc: f64,
    /// Defaults to the spacing-band midpoint at the initial host speed.
    #[serde(default)]
    pub initial_gap_m: Option<f64>,
    /// Defaults to the cycle speed at the segment start.
    #[serde(default)]
    pub initial_host_speed_m_s: Option<f64>,
    #[serde(default = "Horizon::standard")]
    pub horizon: Horizon,
    #[serde(default)]
    pub solver: SolveOptions,
    /// Simulated window `[t0, t1]` in cycle time; defaults to the whole cycle.
    #[serde(default)]
    pub segment: Option<(f64, f64)>,
    /// Overrides the parameter file's fuel density for the volumetric figure.
    #[serde(default)]
    pub fuel_density_kg_per_l: Option<f64>,
}

impl SimConfig {
    pub fn new(mode: Mode) -> Self {
        SimConfig {
            mode,
            initial_soc: default_initial_soc(),
            initial_gap_m: None,
            initial_host_speed_m_s: None,
            horizon: Horizon::standard(),
            solver: SolveOptions::default(),
            segment: None,
            fuel_density_kg_per_l: None,
        }
    }
}

/// Everything recorded about one applied step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub time_s: f64,
    pub gap_m: f64,
    pub host_speed_m_s: f64,
    pub preceding_speed_m_s: f64,
    pub accel_m_s2: f64,
    pub jerk_m_s3: f64,
    pub distance_error_m: f64,
    pub soc: f64,
    pub engine_torque_nm: f64,
    pub engine_speed_rad_s: f64,
    pub motor_torque_nm: f64,
    pub gear3_torque_nm: f64,
    pub clutch_engaged: bool,
    pub engine_on: bool,
    pub battery_power_w: f64,
    pub fuel_increment_g: f64,
    pub acc_cost: f64,
    pub ems_cost: f64,
    pub solver_status: SolveStatus,
    pub solver_nodes: u64,
    pub solve_time_s: f64,
}

/// Aggregates over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Totals {
    pub steps: usize,
    pub duration_s: f64,
    pub distance_m: f64,
    pub fuel_g: f64,
    pub fuel_kg: f64,
    pub fuel_kg_per_100km: f64,
    pub fuel_l_per_100km: f64,
    pub final_soc: f64,
    pub jerk_rms_m_s3: f64,
    pub jerk_min_m_s3: f64,
    pub jerk_max_m_s3: f64,
    pub mean_solve_time_s: f64,
    pub max_solve_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub mode: Mode,
    pub dt_s: f64,
    pub records: Vec<StepRecord>,
    pub totals: Totals,
}

/// One paired-state dominance sample: the joint optimum against the composite
/// sequential value from the identical state.
#[derive(Clone, Debug)]
pub struct DominanceSample {
    pub time_s: f64,
    pub j_coop: f64,
    pub j_acc: f64,
    pub j_ems: f64,
}

impl DominanceSample {
    pub fn composite(&self) -> f64 {
        self.j_acc + self.j_ems
    }
}

/// Runs the closed loop.
pub fn run(cfg: &SimConfig, cycle: &DriveCycle, params: &Params) -> Result<SimResult, SimError> {
    run_internal(cfg, cycle, params, None, &mut None)
}

/// Runs the closed loop writing a solver trace (one line per tree node).
pub fn run_traced(
    cfg: &SimConfig,
    cycle: &DriveCycle,
    params: &Params,
    trace: &mut dyn Write,
) -> Result<SimResult, SimError> {
    run_internal(cfg, cycle, params, None, &mut Some(trace))
}

/// Diagnostic paired run: drives the closed loop in sequential mode and, every
/// `stride` steps, also solves the joint problem from the identical state
/// (seeded with the composite sequential solution) without letting it affect
/// the trajectory.
pub fn run_paired_dominance(
    cfg: &SimConfig,
    cycle: &DriveCycle,
    params: &Params,
    stride: usize,
) -> Result<(SimResult, Vec<DominanceSample>), SimError> {
    if cfg.mode != Mode::Sequential {
        return Err(SimError::Config(
            "paired dominance diagnostics require sequential mode".into(),
        ));
    }
    let mut samples = Vec::new();
    let result = run_internal(cfg, cycle, params, Some((stride.max(1), &mut samples)), &mut None)?;
    Ok((result, samples))
}

fn dump_state(state: &PlantState, sol: &Solution) -> String {
    format!(
        "{state:?}, solver nodes {}, iterations {}, best bound {:.6e}",
        sol.nodes, sol.nlp_iterations, sol.best_bound
    )
}

fn shift_warm(prev: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(prev.len());
    out.extend_from_slice(&prev[width..]);
    out.extend_from_slice(&prev[prev.len() - width..]);
    out
}

fn run_internal(
    cfg: &SimConfig,
    cycle: &DriveCycle,
    params: &Params,
    mut dominance: Option<(usize, &mut Vec<DominanceSample>)>,
    trace: &mut Option<&mut dyn Write>,
) -> Result<SimResult, SimError> {
    let dt = cfg.horizon.dt_s;
    let n = cfg.horizon.steps;
    let (t0, t1) = cfg.segment.unwrap_or((cycle.start_time(), cycle.end_time()));
    if t0 < cycle.start_time() - 1e-9 || t1 > cycle.end_time() + 1e-9 || t1 <= t0 {
        return Err(SimError::Config(format!(
            "segment [{t0}, {t1}] outside the cycle extent [{}, {}]",
            cycle.start_time(),
            cycle.end_time()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.initial_soc) {
        return Err(SimError::Config(format!(
            "initial SOC {} outside [0, 1]",
            cfg.initial_soc
        )));
    }
    let steps = ((t1 - t0) / dt).round() as usize;
    if steps == 0 {
        return Err(SimError::Config("segment shorter than one step".into()));
    }

    let v_p0 = cycle.speed_at(t0);
    let v_h0 = cfg.initial_host_speed_m_s.unwrap_or(v_p0);
    let (band_lo, band_hi) = acc::spacing_band(v_h0);
    let gap0 = cfg.initial_gap_m.unwrap_or(0.5 * (band_lo + band_hi));
    if gap0 < band_lo || gap0 > band_hi {
        return Err(SimError::Config(format!(
            "initial gap {gap0} outside the spacing band [{band_lo}, {band_hi}] at {v_h0} m/s"
        )));
    }

    let mut state = PlantState {
        acc: AccState {
            gap_m: gap0,
            rel_velocity_m_s: v_p0 - v_h0,
            host_velocity_m_s: v_h0,
            prev_accel_m_s2: 0.0,
        },
        soc: cfg.initial_soc,
    };

    let mut records = Vec::with_capacity(steps);
    let mut prev_acc_sol: Option<Vec<f64>> = None;
    let mut prev_ems_sol: Option<Vec<f64>> = None;
    let mut prev_coop_sol: Option<Vec<f64>> = None;

    for step in 0..steps {
        let t = t0 + dt * step as f64;
        // Perfect preview of the preceding vehicle, held past the cycle end.
        let mut speeds = Vec::with_capacity(n + 1);
        for k in 0..=n {
            speeds.push(cycle.speed_at(t + dt * k as f64));
        }
        let preview = Preview {
            accel_m_s2: (0..n).map(|k| (speeds[k + 1] - speeds[k]) / dt).collect(),
            speed_m_s: speeds[..n].to_vec(),
        };

        let solve_start = Instant::now();
        let (a0, command, acc_obj, ems_obj, pt_sol) = match cfg.mode {
            Mode::Sequential => {
                let acc_spec = build_acc_problem(&state.acc, &preview, params, &cfg.horizon)
                    .map_err(|e| SimError::Config(e.to_string()))?;
                let acc_sol = solve_nlp(&acc_spec, &cfg.solver, prev_acc_sol.as_deref());
                if !solution_usable(&acc_sol) {
                    return Err(SimError::Infeasible {
                        step,
                        time_s: t,
                        status: acc_sol.status,
                        dump: dump_state(&state, &acc_sol),
                    });
                }
                let fixed_a = acc_sol.decision.clone();
                let ems_spec = build_ems_problem(&state, &fixed_a, &preview, params, &cfg.horizon)
                    .map_err(|e| SimError::Config(e.to_string()))?;
                let ems_warm = prev_ems_sol.as_ref().map(|p| shift_warm(p, 6));
                let ems_sol = solve_minlp(&ems_spec, &cfg.solver, ems_warm.as_deref(), trace)
                    .map_err(|e| SimError::Io {
                        path: "trace".into(),
                        source: e,
                    })?;
                if !solution_usable(&ems_sol) {
                    return Err(SimError::Infeasible {
                        step,
                        time_s: t,
                        status: ems_sol.status,
                        dump: dump_state(&state, &ems_sol),
                    });
                }

                if let Some((stride, samples)) = dominance.as_mut() {
                    if step % *stride == 0 {
                        let sample = dominance_sample(
                            t, &state, &preview, params, cfg, &acc_sol, &ems_sol,
                        )?;
                        samples.push(sample);
                    }
                }

                let cmd = command_from(&ems_sol.decision, Variant::Ems, 0, &cfg.solver);
                prev_acc_sol = Some(shift_warm(&acc_sol.decision, 1));
                let a0 = acc_sol.decision[0];
                prev_ems_sol = Some(ems_sol.decision.clone());
                (a0, cmd, acc_sol.objective, ems_sol.objective, ems_sol)
            }
            Mode::Coop => {
                let coop_spec = build_coop_problem(&state, &preview, params, &cfg.horizon)
                    .map_err(|e| SimError::Config(e.to_string()))?;
                let warm = prev_coop_sol.as_ref().map(|p| shift_warm(p, 7));
                let coop_sol = solve_minlp(&coop_spec, &cfg.solver, warm.as_deref(), trace)
                    .map_err(|e| SimError::Io {
                        path: "trace".into(),
                        source: e,
                    })?;
                if !solution_usable(&coop_sol) {
                    return Err(SimError::Infeasible {
                        step,
                        time_s: t,
                        status: coop_sol.status,
                        dump: dump_state(&state, &coop_sol),
                    });
                }
                let (acc_part, ems_part) = coop_spec.objective_parts(&coop_sol.decision);
                let cmd = command_from(&coop_sol.decision, Variant::Coop, 0, &cfg.solver);
                let a0 = coop_sol.decision[0];
                prev_coop_sol = Some(coop_sol.decision.clone());
                (a0, cmd, acc_part, ems_part, coop_sol)
            }
        };
        let solve_time = solve_start.elapsed().as_secs_f64();

        // Plant step.
        let record = apply_step(
            step, t, &mut state, a0, &command, &preview, params, dt, cfg,
        )?;
        records.push(StepRecord {
            acc_cost: acc_obj,
            ems_cost: ems_obj,
            solver_status: pt_sol.status,
            solver_nodes: pt_sol.nodes,
            solve_time_s: solve_time,
            ..record
        });
        if state.acc.gap_m <= 0.0 {
            return Err(SimError::ConstraintBreach {
                step,
                what: format!("collision: gap {} m", state.acc.gap_m),
            });
        }
    }

    let totals = totals_of(&records, dt, state.soc, cfg, params);
    Ok(SimResult {
        mode: cfg.mode,
        dt_s: dt,
        records,
        totals,
    })
}

fn solution_usable(sol: &Solution) -> bool {
    matches!(
        sol.status,
        SolveStatus::Optimal | SolveStatus::GapLimit | SolveStatus::IterLimit
    ) && !sol.decision.is_empty()
}

fn solve_minlp(
    spec: &ProblemSpec,
    opts: &SolveOptions,
    warm: Option<&[f64]>,
    trace: &mut Option<&mut dyn Write>,
) -> std::io::Result<Solution> {
    match trace {
        Some(sink) => solve_bnb_traced(spec, opts, warm, *sink),
        None => Ok(match warm {
            Some(w) => solve_bnb_warm(spec, opts, w),
            None => crate::minlp::solve_bnb(spec, opts),
        }),
    }
}

fn dominance_sample(
    t: f64,
    state: &PlantState,
    preview: &Preview,
    params: &Params,
    cfg: &SimConfig,
    acc_sol: &Solution,
    ems_sol: &Solution,
) -> Result<DominanceSample, SimError> {
    let coop_spec = build_coop_problem(state, preview, params, &cfg.horizon)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let composite = compose_coop_vector(&acc_sol.decision, &ems_sol.decision, cfg.horizon.steps);
    let coop_sol = solve_bnb_warm(&coop_spec, &cfg.solver, &composite);
    Ok(DominanceSample {
        time_s: t,
        j_coop: coop_sol.objective,
        j_acc: acc_sol.objective,
        j_ems: ems_sol.objective,
    })
}

/// Extracts the step-`k` powertrain command from a decision vector.
fn command_from(
    decision: &[f64],
    variant: Variant,
    k: usize,
    opts: &SolveOptions,
) -> powertrain::PowertrainCommand {
    let (width, offset) = match variant {
        Variant::Ems => (6, 0),
        Variant::Coop => (7, 1),
        Variant::Acc => unreachable!("no powertrain command in the acc variant"),
    };
    let base = k * width + offset;
    powertrain::PowertrainCommand {
        engine_torque_nm: decision[base],
        engine_speed_rad_s: decision[base + 1],
        motor_torque_nm: decision[base + 2],
        gear3_torque_nm: decision[base + 3],
        engine_on: decision[base + 4] > 1.0 - 10.0 * opts.int_tol,
        clutch_engaged: decision[base + 5] > 1.0 - 10.0 * opts.int_tol,
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_step(
    step: usize,
    t: f64,
    state: &mut PlantState,
    a0: f64,
    cmd: &powertrain::PowertrainCommand,
    preview: &Preview,
    params: &Params,
    dt: f64,
    cfg: &SimConfig,
) -> Result<StepRecord, SimError> {
    let v_h = state.acc.host_velocity_m_s;
    let w_wheel = powertrain::wheel_speed(v_h, &params.vehicle);
    let w_m = powertrain::motor_speed(w_wheel, &params.drivetrain);
    let eta_m = powertrain::motor_efficiency(w_m, cmd.motor_torque_nm, &params.motor_map)
        .map_err(|source| SimError::Plant { step, source })?;
    let t_g = powertrain::generator_torque(
        cmd.engine_torque_nm,
        cmd.gear3_torque_nm,
        cmd.clutch_engaged,
        &params.drivetrain,
    );
    let w_g = powertrain::generator_speed(cmd.engine_speed_rad_s, &params.drivetrain);
    let eta_g = powertrain::generator_efficiency(w_g, t_g, &params.generator_map)
        .map_err(|source| SimError::Plant { step, source })?;
    let p_b = powertrain::battery_power(cmd.motor_torque_nm, w_m, eta_m, t_g, w_g, eta_g);
    let soc_next = powertrain::step_soc(state.soc, p_b, dt, &params.battery)
        .map_err(|source| SimError::Plant { step, source })?;
    let breach = 10.0 * cfg.solver.feas_tol;
    if soc_next < params.battery.soc_min - breach || soc_next > params.battery.soc_max + breach {
        return Err(SimError::ConstraintBreach {
            step,
            what: format!("SOC {soc_next} outside the allowed range"),
        });
    }
    let fuel_inc = dt
        * powertrain::fuel_rate(
            cmd.engine_speed_rad_s,
            cmd.engine_torque_nm,
            &params.engine_map,
        )
        .map_err(|source| SimError::Plant { step, source })?;

    let jerk = acc::jerk(state.acc.prev_accel_m_s2, a0, dt);
    let record = StepRecord {
        time_s: t,
        gap_m: state.acc.gap_m,
        host_speed_m_s: v_h,
        preceding_speed_m_s: preview.speed_m_s[0],
        accel_m_s2: a0,
        jerk_m_s3: jerk,
        distance_error_m: acc::distance_error(state.acc.gap_m, v_h),
        soc: state.soc,
        engine_torque_nm: cmd.engine_torque_nm,
        engine_speed_rad_s: cmd.engine_speed_rad_s,
        motor_torque_nm: cmd.motor_torque_nm,
        gear3_torque_nm: cmd.gear3_torque_nm,
        clutch_engaged: cmd.clutch_engaged,
        engine_on: cmd.engine_on,
        battery_power_w: p_b,
        fuel_increment_g: fuel_inc,
        acc_cost: 0.0,
        ems_cost: 0.0,
        solver_status: SolveStatus::Optimal,
        solver_nodes: 0,
        solve_time_s: 0.0,
    };

    state.acc = acc::propagate(&state.acc, preview.accel_m_s2[0], a0, dt);
    state.soc = soc_next;
    Ok(record)
}

fn totals_of(
    records: &[StepRecord],
    dt: f64,
    final_soc: f64,
    cfg: &SimConfig,
    params: &Params,
) -> Totals {
    let steps = records.len();
    let fuel_g: f64 = records.iter().map(|r| r.fuel_increment_g).sum();
    let mut distance = 0.0;
    for pair in records.windows(2) {
        distance += 0.5 * (pair[0].host_speed_m_s + pair[1].host_speed_m_s) * dt;
    }
    if let Some(last) = records.last() {
        // Close the final interval with the applied acceleration.
        let v_end = (last.host_speed_m_s + dt * last.accel_m_s2).max(0.0);
        distance += 0.5 * (last.host_speed_m_s + v_end) * dt;
    }
    let fuel_kg = fuel_g / 1000.0;
    let km = distance / 1000.0;
    let density = cfg
        .fuel_density_kg_per_l
        .unwrap_or(params.fuel.density_kg_per_l);
    let (kg_per_100, l_per_100) = if km > 0.0 {
        (fuel_kg / km * 100.0, fuel_kg / density / km * 100.0)
    } else {
        (0.0, 0.0)
    };
    let jerks: Vec<f64> = records.iter().map(|r| r.jerk_m_s3).collect();
    let jerk_rms = if steps > 0 {
        (jerks.iter().map(|j| j * j).sum::<f64>() / steps as f64).sqrt()
    } else {
        0.0
    };
    let times: Vec<f64> = records.iter().map(|r| r.solve_time_s).collect();
    Totals {
        steps,
        duration_s: steps as f64 * dt,
        distance_m: distance,
        fuel_g,
        fuel_kg,
        fuel_kg_per_100km: kg_per_100,
        fuel_l_per_100km: l_per_100,
        final_soc,
        jerk_rms_m_s3: jerk_rms,
        jerk_min_m_s3: jerks.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0),
        jerk_max_m_s3: jerks.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0),
        mean_solve_time_s: if steps > 0 {
            times.iter().sum::<f64>() / steps as f64
        } else {
            0.0
        },
        max_solve_time_s: times.iter().cloned().fold(0.0, f64::max),
    }
}

/// Column order of the deterministic record CSV.
pub const RECORD_COLUMNS: &str = "time_s,gap_m,v_host_mps,v_prec_mps,accel_mps2,jerk_mps3,dist_err_m,soc,engine_torque_nm,engine_speed_rads,motor_torque_nm,gear3_torque_nm,clutch,engine_on,battery_power_w,fuel_inc_g,acc_cost,ems_cost,solver_status,solver_nodes";

/// Writes the per-step records; excludes wall-clock columns so repeated runs
/// are byte-identical.
pub fn write_records_csv(result: &SimResult, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{RECORD_COLUMNS}")?;
    for r in &result.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.time_s,
            r.gap_m,
            r.host_speed_m_s,
            r.preceding_speed_m_s,
            r.accel_m_s2,
            r.jerk_m_s3,
            r.distance_error_m,
            r.soc,
            r.engine_torque_nm,
            r.engine_speed_rad_s,
            r.motor_torque_nm,
            r.gear3_torque_nm,
            u8::from(r.clutch_engaged),
            u8::from(r.engine_on),
            r.battery_power_w,
            r.fuel_increment_g,
            r.acc_cost,
            r.ems_cost,
            r.solver_status,
            r.solver_nodes,
        )?;
    }
    Ok(())
}

/// Writes the wall-clock sidecar (excluded from reproducibility guarantees).
pub fn write_timings_csv(result: &SimResult, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "time_s,solve_time_s")?;
    for r in &result.records {
        writeln!(out, "{},{}", r.time_s, r.solve_time_s)?;
    }
    Ok(())
}

/// Writes the deterministic key-value summary.
pub fn write_summary(result: &SimResult, out: &mut dyn Write) -> std::io::Result<()> {
    let t = &result.totals;
    writeln!(out, "mode = {}", result.mode)?;
    writeln!(out, "steps = {}", t.steps)?;
    writeln!(out, "dt_s = {}", result.dt_s)?;
    writeln!(out, "duration_s = {}", t.duration_s)?;
    writeln!(out, "distance_m = {}", t.distance_m)?;
    writeln!(out, "fuel_g = {}", t.fuel_g)?;
    writeln!(out, "fuel_kg = {}", t.fuel_kg)?;
    writeln!(out, "fuel_kg_per_100km = {}", t.fuel_kg_per_100km)?;
    writeln!(out, "fuel_l_per_100km = {}", t.fuel_l_per_100km)?;
    writeln!(out, "final_soc = {}", t.final_soc)?;
    writeln!(out, "jerk_rms_m_s3 = {}", t.jerk_rms_m_s3)?;
    writeln!(out, "jerk_min_m_s3 = {}", t.jerk_min_m_s3)?;
    writeln!(out, "jerk_max_m_s3 = {}", t.jerk_max_m_s3)?;
    Ok(())
}

/// Percentage deltas between two runs, second relative to first.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub fuel_delta_pct: f64,
    pub final_soc_delta_pct: f64,
    pub mean_solve_time_ratio: f64,
}

/// Table-style comparison of two runs (deltas of the second versus the first).
pub fn compare(a: &Totals, b: &Totals) -> Comparison {
    let pct = |x: f64, y: f64| if x != 0.0 { (y - x) / x * 100.0 } else { 0.0 };
    Comparison {
        fuel_delta_pct: pct(a.fuel_kg, b.fuel_kg),
        final_soc_delta_pct: pct(a.final_soc, b.final_soc),
        mean_solve_time_ratio: if a.mean_solve_time_s > 0.0 {
            b.mean_solve_time_s / a.mean_solve_time_s
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_parser_interpolates_and_validates() {
        let ramp = "time_s,speed_mps\n0,0\n10,5\n";
        let cycle = DriveCycle::parse(ramp).unwrap().resample(0.1);
        assert_eq!(cycle.time_s.len(), 101);
        assert!((cycle.speed_at(5.0) - 2.5).abs() < 1e-12);
        assert!((cycle.speed_mps[10] - 0.5).abs() < 1e-12);
        // Holds the last value past the end.
        assert_eq!(cycle.speed_at(100.0), 5.0);

        assert!(matches!(
            DriveCycle::parse(""),
            Err(SimError::Cycle { line: 1, .. })
        ));
        let bad_time = "time_s,speed_mps\n0,0\n0,1\n";
        match DriveCycle::parse(bad_time) {
            Err(SimError::Cycle { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected cycle error, got {other:?}"),
        }
        let bad_speed = "time_s,speed_mps\n0,0\n1,-2\n";
        assert!(DriveCycle::parse(bad_speed).is_err());
        let bad_field = "time_s,speed_mps\n0,zero\n";
        assert!(DriveCycle::parse(bad_field).is_err());
    }

    #[test]
    fn cycle_distance_matches_independent_trapezoid() {
        let text = "time_s,speed_mps\n0,0\n5,4\n10,2\n20,2\n";
        let cycle = DriveCycle::parse(text).unwrap();
        // Independent integration: 0.5*4*5 + 0.5*(4+2)*5 + 2*10.
        let expect = 10.0 + 15.0 + 20.0;
        assert!((cycle.distance_m() - expect).abs() < 1e-9);
        let fine = cycle.resample(0.1);
        assert!((fine.distance_m() - expect).abs() < 1e-6);
        assert!((fine.duration_s() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_reproduces_published_shape() {
        let mut a = Totals::default();
        let mut b = Totals::default();
        a.fuel_kg = 0.8692;
        b.fuel_kg = 0.8248;
        a.final_soc = 0.5920;
        b.final_soc = 0.5914;
        let c = compare(&a, &b);
        assert!((c.fuel_delta_pct * 10.0).round() / 10.0 == -5.1);
        assert!((c.final_soc_delta_pct * 10.0).round() / 10.0 == -0.1);
    }

    #[test]
    fn empty_result_gives_zero_totals() {
        let cfg = SimConfig::new(Mode::Sequential);
        let params = Params::shipped_default().unwrap();
        let totals = totals_of(&[], 0.1, 0.6, &cfg, &params);
        assert_eq!(totals.fuel_g, 0.0);
        assert_eq!(totals.distance_m, 0.0);
        assert_eq!(totals.fuel_l_per_100km, 0.0);
        assert_eq!(totals.jerk_rms_m_s3, 0.0);
        assert_eq!(totals.mean_solve_time_s, 0.0);
    }

    #[test]
    fn hand_built_records_aggregate() {
        let cfg = SimConfig::new(Mode::Sequential);
        let params = Params::shipped_default().unwrap();
        let mk = |v: f64, fuel: f64, j: f64| StepRecord {
            time_s: 0.0,
            gap_m: 20.0,
            host_speed_m_s: v,
            preceding_speed_m_s: v,
            accel_m_s2: 0.0,
            jerk_m_s3: j,
            distance_error_m: 0.0,
            soc: 0.6,
            engine_torque_nm: 0.0,
            engine_speed_rad_s: 0.0,
            motor_torque_nm: 0.0,
            gear3_torque_nm: 0.0,
            clutch_engaged: false,
            engine_on: false,
            battery_power_w: 0.0,
            fuel_increment_g: fuel,
            acc_cost: 0.0,
            ems_cost: 0.0,
            solver_status: SolveStatus::Optimal,
            solver_nodes: 1,
            solve_time_s: 0.01,
        };
        let records = vec![mk(10.0, 0.2, 1.0), mk(10.0, 0.3, -1.0), mk(10.0, 0.0, 0.0)];
        let totals = totals_of(&records, 0.1, 0.59, &cfg, &params);
        assert!((totals.fuel_g - 0.5).abs() < 1e-12);
        // Two interior trapezoids at 10 m/s plus the closing interval.
        assert!((totals.distance_m - 3.0).abs() < 1e-9);
        assert_eq!(totals.final_soc, 0.59);
        assert!((totals.jerk_rms_m_s3 - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(totals.jerk_max_m_s3, 1.0);
        assert_eq!(totals.jerk_min_m_s3, -1.0);
        // Mass-based and volumetric figures both derive from the same fuel.
        let km = totals.distance_m / 1000.0;
        assert!((totals.fuel_kg_per_100km - totals.fuel_kg / km * 100.0).abs() < 1e-12);
    }
}
