//! Seeded random problem instances for tests and benchmarks.
//!
//! Sampling keeps states and previews inside the regime the shipped
//! parameters can actuate, so most instances are feasible; the RNG is
//! deterministic per seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acc::{spacing_band, AccState};
use crate::ocp::{
    build_acc_problem, build_coop_problem, build_ems_problem, Horizon, PlantState, Preview,
    ProblemSpec,
};
use crate::params::Params;

pub fn random_plant_state(rng: &mut ChaCha8Rng) -> PlantState {
    let v_h = rng.gen_range(0.5..15.0);
    let (lo, hi) = spacing_band(v_h);
    let gap = 0.5 * (lo + hi) * rng.gen_range(0.85..1.15);
    PlantState {
        acc: AccState {
            gap_m: gap,
            rel_velocity_m_s: rng.gen_range(-1.5..1.5),
            host_velocity_m_s: v_h,
            prev_accel_m_s2: rng.gen_range(-1.0..1.0),
        },
        soc: rng.gen_range(0.45..0.72),
    }
}

/// Smooth random acceleration profile for the preceding vehicle, with the
/// speed rollout kept nonnegative.
pub fn random_preview(rng: &mut ChaCha8Rng, v_p0: f64, steps: usize, dt: f64) -> Preview {
    let mut accel = Vec::with_capacity(steps);
    let mut speed = Vec::with_capacity(steps);
    let mut a: f64 = rng.gen_range(-1.0..1.0);
    let mut v = v_p0;
    for _ in 0..steps {
        speed.push(v);
        a = (a + rng.gen_range(-0.3..0.3)).clamp(-1.4, 1.4);
        if v + dt * a < 0.0 {
            a = -v / dt;
        }
        accel.push(a);
        v += dt * a;
    }
    Preview {
        accel_m_s2: accel,
        speed_m_s: speed,
    }
}

/// Bounded random walk for the imposed acceleration of an allocation problem.
fn random_fixed_accel(rng: &mut ChaCha8Rng, v0: f64, steps: usize, dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps);
    let mut a: f64 = rng.gen_range(-0.8..0.8);
    let mut v = v0;
    for _ in 0..steps {
        a = (a + rng.gen_range(-0.3..0.3)).clamp(-1.2, 1.2);
        if v + dt * a < 0.0 {
            a = -v / dt;
        }
        out.push(a);
        v += dt * a;
    }
    out
}

pub fn random_acc_problem(params: &Params, horizon: &Horizon, seed: u64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = random_plant_state(&mut rng);
    let v_p0 = state.acc.host_velocity_m_s + state.acc.rel_velocity_m_s;
    let preview = random_preview(&mut rng, v_p0.max(0.0), horizon.steps, horizon.dt_s);
    build_acc_problem(&state.acc, &preview, params, horizon).expect("valid random instance")
}

pub fn random_ems_problem(params: &Params, horizon: &Horizon, seed: u64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = random_plant_state(&mut rng);
    let v_p0 = state.acc.host_velocity_m_s + state.acc.rel_velocity_m_s;
    let preview = random_preview(&mut rng, v_p0.max(0.0), horizon.steps, horizon.dt_s);
    let fixed = random_fixed_accel(
        &mut rng,
        state.acc.host_velocity_m_s,
        horizon.steps,
        horizon.dt_s,
    );
    build_ems_problem(&state, &fixed, &preview, params, horizon).expect("valid random instance")
}

pub fn random_coop_problem(params: &Params, horizon: &Horizon, seed: u64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = random_plant_state(&mut rng);
    let v_p0 = state.acc.host_velocity_m_s + state.acc.rel_velocity_m_s;
    let preview = random_preview(&mut rng, v_p0.max(0.0), horizon.steps, horizon.dt_s);
    build_coop_problem(&state, &preview, params, horizon).expect("valid random instance")
}
