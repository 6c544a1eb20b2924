//! Plant equations for a series-parallel hybrid powertrain with one clutch.
//!
//! All operations are pure functions of their arguments. Torque-path sign
//! conventions: positive motor torque propels, negative regenerates; positive
//! battery power discharges the battery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::Real;

/// Longitudinal-dynamics constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass_kg: f64,
    pub cross_section_m2: f64,
    pub wheel_radius_m: f64,
    pub rolling_coeff: f64,
    pub air_density_kg_m3: f64,
    pub drag_coeff: f64,
    pub gravity_m_s2: f64,
    pub road_grade_rad: f64,
}

/// Composite gear ratios and gear efficiency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivetrainParams {
    /// Engine-to-wheel gear pair (engaged through the clutch).
    pub ratio_gear3: f64,
    /// Motor-to-wheel gear pair.
    pub ratio_motor: f64,
    /// Final drive.
    pub ratio_final: f64,
    /// Engine-to-generator ratio; below one, the generator overdrives.
    pub ratio_gen: f64,
    pub gear_eff: f64,
    /// Upper bound on torque routed through the engine-to-wheel gear pair.
    pub gear3_torque_max_nm: f64,
}

impl DrivetrainParams {
    #[inline]
    pub fn engine_wheel_ratio(&self) -> f64 {
        self.ratio_gear3 * self.ratio_final
    }
    #[inline]
    pub fn motor_wheel_ratio(&self) -> f64 {
        self.ratio_motor * self.ratio_final
    }
}

/// Specific fuel consumption surface over the admissible engine box.
///
/// `be_coeffs` is a quadratic in (engine speed, engine torque) evaluated in
/// the basis `[1, x, y, x^2, x*y, y^2]`, valued in g/kWh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineMap {
    pub be_coeffs: [f64; 6],
    pub w_min_rad_s: f64,
    pub w_max_rad_s: f64,
    pub t_min_nm: f64,
    pub t_max_nm: f64,
}

/// Motor efficiency map: three quadratic segments in (speed, |torque|),
/// split at two speed breakpoints. Breakpoint speeds belong to the middle
/// segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorMap {
    pub f1_coeffs: [f64; 6],
    pub f2_coeffs: [f64; 6],
    pub f3_coeffs: [f64; 6],
    pub w_break1_rad_s: f64,
    pub w_break2_rad_s: f64,
    pub w_min_rad_s: f64,
    pub w_max_rad_s: f64,
    pub t_min_nm: f64,
    pub t_max_nm: f64,
}

/// Generator efficiency map: a single quadratic segment in (speed, |torque|).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMap {
    pub fg_coeffs: [f64; 6],
    pub w_min_rad_s: f64,
    pub w_max_rad_s: f64,
    pub t_min_nm: f64,
    pub t_max_nm: f64,
}

/// Open-circuit voltage and internal resistance as quadratics of SOC,
/// coefficient order `[quadratic, linear, constant]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub capacity_coulomb: f64,
    pub voc_coeffs: [f64; 3],
    pub res_coeffs: [f64; 3],
    pub soc_min: f64,
    pub soc_max: f64,
}

/// One step's powertrain actuation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowertrainCommand {
    pub engine_torque_nm: f64,
    pub engine_speed_rad_s: f64,
    pub motor_torque_nm: f64,
    /// Torque routed through the engine-to-wheel gear pair.
    pub gear3_torque_nm: f64,
    pub clutch_engaged: bool,
    pub engine_on: bool,
}

impl PowertrainCommand {
    /// Checks the command invariants: engine-off pins torque and speed to
    /// zero, engine-on keeps them inside the map box, and the clutch cannot
    /// engage with the engine off.
    pub fn validate(&self, map: &EngineMap) -> Result<(), PowertrainError> {
        if self.clutch_engaged && !self.engine_on {
            return Err(PowertrainError::ClutchWithoutEngine);
        }
        if !self.engine_on {
            if self.engine_torque_nm != 0.0 || self.engine_speed_rad_s != 0.0 {
                return Err(PowertrainError::EngineOffNonzero);
            }
            return Ok(());
        }
        let w = self.engine_speed_rad_s;
        let t = self.engine_torque_nm;
        if w < map.w_min_rad_s || w > map.w_max_rad_s || t < map.t_min_nm || t > map.t_max_nm {
            return Err(PowertrainError::OutOfBox {
                what: "engine command",
                x: w,
                y: t,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PowertrainError {
    #[error("fuel rate undefined: positive torque at zero engine speed")]
    StalledEngine,
    #[error("negative engine torque {0} N*m is not admissible")]
    NegativeEngineTorque(f64),
    #[error("{what} ({x}, {y}) outside the admissible box")]
    OutOfBox {
        what: &'static str,
        x: f64,
        y: f64,
    },
    #[error("SOC {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("battery power {power_w} W infeasible: discriminant {discriminant} < 0")]
    InfeasiblePower { power_w: f64, discriminant: f64 },
    #[error("clutch engaged while engine off")]
    ClutchWithoutEngine,
    #[error("engine off but torque or speed nonzero")]
    EngineOffNonzero,
}

/// Generic evaluation kernels shared with the optimal-control transcription.
pub(crate) mod model {
    use super::*;

    /// Quadratic surface in the basis `[1, x, y, x^2, x*y, y^2]`.
    #[inline]
    pub fn quad_surface<S: Real>(c: &[f64; 6], x: S, y: S) -> S {
        S::lit(c[0])
            + S::lit(c[1]) * x
            + S::lit(c[2]) * y
            + S::lit(c[3]) * x * x
            + S::lit(c[4]) * x * y
            + S::lit(c[5]) * y * y
    }

    /// Univariate quadratic, coefficient order `[a2, a1, a0]`.
    #[inline]
    pub fn quad_curve<S: Real>(c: &[f64; 3], x: S) -> S {
        (S::lit(c[0]) * x + S::lit(c[1])) * x + S::lit(c[2])
    }

    /// Wheel torque demand; the rolling term drops out at standstill.
    #[inline]
    pub fn wheel_torque<S: Real>(a: S, v: S, p: &VehicleParams) -> S {
        let drag = S::lit(0.5 * p.drag_coeff * p.air_density_kg_m3 * p.cross_section_m2) * v * v;
        let mut force = S::lit(p.mass_kg) * a + drag;
        if v.val() > 0.0 {
            force = force
                + S::lit(
                    p.rolling_coeff * p.mass_kg * p.gravity_m_s2 * p.road_grade_rad.cos(),
                );
        }
        force = force + S::lit(p.mass_kg * p.gravity_m_s2 * p.road_grade_rad.sin());
        force * S::lit(p.wheel_radius_m)
    }

    /// Wheel torque with the rolling term ramped in over `v_eps` instead of
    /// switching at zero. Used by the transcription: the plant's exact on/off
    /// branch is discontinuous at standstill, which defeats line searches
    /// when the optimum sits there. Exact at v = 0 and for v >= v_eps.
    #[inline]
    pub fn wheel_torque_ramped<S: Real>(a: S, v: S, p: &VehicleParams, v_eps: f64) -> S {
        let drag = S::lit(0.5 * p.drag_coeff * p.air_density_kg_m3 * p.cross_section_m2) * v * v;
        let rolling = S::lit(p.rolling_coeff * p.mass_kg * p.gravity_m_s2 * p.road_grade_rad.cos());
        let ramp = (v * S::lit(1.0 / v_eps))
            .max_val(S::lit(0.0))
            .min_val(S::lit(1.0));
        let force = S::lit(p.mass_kg) * a
            + drag
            + rolling * ramp
            + S::lit(p.mass_kg * p.gravity_m_s2 * p.road_grade_rad.sin());
        force * S::lit(p.wheel_radius_m)
    }

    /// Raw piecewise motor efficiency; no box checking.
    #[inline]
    pub fn motor_efficiency<S: Real>(map: &MotorMap, w: S, torque: S) -> S {
        let t = torque.abs();
        let c = if w.val() < map.w_break1_rad_s {
            &map.f1_coeffs
        } else if w.val() <= map.w_break2_rad_s {
            &map.f2_coeffs
        } else {
            &map.f3_coeffs
        };
        quad_surface(c, w, t)
    }

    /// Raw generator efficiency; no box checking.
    #[inline]
    pub fn generator_efficiency<S: Real>(map: &GeneratorMap, w: S, torque: S) -> S {
        quad_surface(&map.fg_coeffs, w, torque.abs())
    }

    /// Instantaneous fuel mass flow in g/s.
    ///
    /// The map value is g/kWh while the mechanical power is in W, hence the
    /// 3.6e6 conversion. The product form makes the zero-torque branch exact.
    #[inline]
    pub fn fuel_rate<S: Real>(map: &EngineMap, w: S, t: S) -> S {
        quad_surface(&map.be_coeffs, w, t) * w * t * S::lit(1.0 / 3.6e6)
    }

    /// Motor/generator electrical balance. Positive result discharges the
    /// battery; discharge divides by the motor efficiency, regeneration
    /// multiplies by it.
    #[inline]
    pub fn battery_power<S: Real>(t_m: S, w_m: S, eta_m: S, t_g: S, w_g: S, eta_g: S) -> S {
        let motor = if t_m.val() >= 0.0 {
            t_m * w_m / eta_m
        } else {
            t_m * w_m * eta_m
        };
        motor - t_g * w_g * eta_g
    }

    /// SOC rate from the equivalent-circuit root. The discriminant is clamped
    /// at zero so transiently infeasible iterates stay finite; feasibility is
    /// enforced separately. The resistance floor only guards division when an
    /// iterate drags SOC far outside the validated range.
    #[inline]
    pub fn soc_rate_clamped<S: Real>(p_b: S, soc: S, b: &BatteryParams) -> S {
        let voc = quad_curve(&b.voc_coeffs, soc);
        let res = quad_curve(&b.res_coeffs, soc).max_val(S::lit(1e-9));
        let disc = (voc * voc - S::lit(4.0) * res * p_b).max_val(S::lit(0.0));
        -(voc - disc.sqrt()) / (S::lit(2.0 * b.capacity_coulomb) * res)
    }
}

/// Wheel torque demand to realize acceleration `a_h` at speed `v_h`.
pub fn wheel_torque(a_h: f64, v_h: f64, p: &VehicleParams) -> f64 {
    model::wheel_torque(a_h, v_h, p)
}

/// Wheel angular speed.
pub fn wheel_speed(v_h: f64, p: &VehicleParams) -> f64 {
    v_h / p.wheel_radius_m
}

/// Clutch coupling residual: zero at feasibility when engaged, identically
/// zero when open (the engine speed is then free).
pub fn engine_speed_constraint(
    w_wheel: f64,
    cmd: &PowertrainCommand,
    d: &DrivetrainParams,
) -> f64 {
    if cmd.clutch_engaged {
        cmd.engine_speed_rad_s - w_wheel * d.engine_wheel_ratio()
    } else {
        0.0
    }
}

/// Fuel mass flow in g/s. Zero torque burns nothing; positive torque at zero
/// speed is rejected.
pub fn fuel_rate(w_e: f64, t_e: f64, map: &EngineMap) -> Result<f64, PowertrainError> {
    if t_e < 0.0 {
        return Err(PowertrainError::NegativeEngineTorque(t_e));
    }
    if t_e == 0.0 {
        return Ok(0.0);
    }
    if w_e == 0.0 {
        return Err(PowertrainError::StalledEngine);
    }
    Ok(model::fuel_rate(map, w_e, t_e))
}

pub fn motor_speed(w_wheel: f64, d: &DrivetrainParams) -> f64 {
    w_wheel * d.motor_wheel_ratio()
}

/// Motor torque required to meet the wheel demand given the gear-3 share.
/// With the clutch open the gear-3 path vanishes.
pub fn motor_torque(t_w: f64, t_3: f64, clutch_engaged: bool, d: &DrivetrainParams) -> f64 {
    let ic = if clutch_engaged { 1.0 } else { 0.0 };
    (t_w - t_3 * d.engine_wheel_ratio() * d.gear_eff * ic) / (d.motor_wheel_ratio() * d.gear_eff)
}

/// Piecewise motor efficiency; errors outside the map box.
pub fn motor_efficiency(w_m: f64, t_m: f64, map: &MotorMap) -> Result<f64, PowertrainError> {
    if w_m < map.w_min_rad_s || w_m > map.w_max_rad_s || t_m < map.t_min_nm || t_m > map.t_max_nm {
        return Err(PowertrainError::OutOfBox {
            what: "motor operating point",
            x: w_m,
            y: t_m,
        });
    }
    Ok(model::motor_efficiency(map, w_m, t_m))
}

pub fn generator_speed(w_e: f64, d: &DrivetrainParams) -> f64 {
    w_e / d.ratio_gen
}

/// Generator torque. With the clutch open all engine torque reaches the
/// generator; engaged, the gear-3 share is subtracted.
pub fn generator_torque(t_e: f64, t_3: f64, clutch_engaged: bool, d: &DrivetrainParams) -> f64 {
    let ic = if clutch_engaged { 1.0 } else { 0.0 };
    (t_e - t_3 * ic / d.gear_eff) * d.ratio_gen * d.gear_eff
}

/// Generator efficiency; errors outside the map box.
pub fn generator_efficiency(
    w_g: f64,
    t_g: f64,
    map: &GeneratorMap,
) -> Result<f64, PowertrainError> {
    if w_g < map.w_min_rad_s || w_g > map.w_max_rad_s || t_g < map.t_min_nm || t_g > map.t_max_nm {
        return Err(PowertrainError::OutOfBox {
            what: "generator operating point",
            x: w_g,
            y: t_g,
        });
    }
    Ok(model::generator_efficiency(map, w_g, t_g))
}

/// Net electrical power drawn from the battery (positive = discharge).
pub fn battery_power(t_m: f64, w_m: f64, eta_m: f64, t_g: f64, w_g: f64, eta_g: f64) -> f64 {
    model::battery_power(t_m, w_m, eta_m, t_g, w_g, eta_g)
}

/// Open-circuit voltage and internal resistance at the given SOC.
pub fn battery_electrical(soc: f64, b: &BatteryParams) -> Result<(f64, f64), PowertrainError> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(PowertrainError::SocOutOfRange(soc));
    }
    Ok((
        model::quad_curve(&b.voc_coeffs, soc),
        model::quad_curve(&b.res_coeffs, soc),
    ))
}

/// SOC rate of change for battery power `p_b_w`. The implied current `I`
/// satisfies `V_oc*I - R_b*I^2 = P_b`; demands beyond the deliverable maximum
/// are rejected via the discriminant.
pub fn soc_derivative(p_b_w: f64, soc: f64, b: &BatteryParams) -> Result<f64, PowertrainError> {
    let (voc, res) = battery_electrical(soc, b)?;
    let disc = voc * voc - 4.0 * res * p_b_w;
    if disc < 0.0 {
        return Err(PowertrainError::InfeasiblePower {
            power_w: p_b_w,
            discriminant: disc,
        });
    }
    Ok(-(voc - disc.sqrt()) / (2.0 * res * b.capacity_coulomb))
}

/// One explicit-Euler SOC step. The result is returned unclamped; range
/// violations are the caller's to report.
pub fn step_soc(soc: f64, p_b_w: f64, dt: f64, b: &BatteryParams) -> Result<f64, PowertrainError> {
    Ok(soc + dt * soc_derivative(p_b_w, soc, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> Params {
        Params::shipped_default().expect("default parameter file must validate")
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn wheel_torque_matches_hand_evaluation() {
        let v = p().vehicle;
        assert_eq!(wheel_torque(0.0, 0.0, &v), 0.0);
        // Independent evaluation of the longitudinal force balance.
        let expect_cruise = (0.5 * v.drag_coeff * v.air_density_kg_m3 * v.cross_section_m2 * 100.0
            + v.rolling_coeff * v.mass_kg * v.gravity_m_s2)
            * v.wheel_radius_m;
        assert!(close(wheel_torque(0.0, 10.0, &v), expect_cruise, 1e-12));
        assert!(close(expect_cruise, 171.09, 5e-3));
        let expect_accel = expect_cruise + v.mass_kg * 1.0 * v.wheel_radius_m;
        assert!(close(wheel_torque(1.0, 10.0, &v), expect_accel, 1e-12));
        assert!(close(expect_accel, 643.59, 5e-3));
    }

    #[test]
    fn no_rolling_resistance_at_standstill() {
        let v = p().vehicle;
        // The limit v -> 0+ keeps the rolling term; exactly zero drops it.
        let at_zero = wheel_torque(0.0, 0.0, &v);
        let near_zero = wheel_torque(0.0, 1e-9, &v);
        assert_eq!(at_zero, 0.0);
        assert!(near_zero > 40.0);
    }

    #[test]
    fn wheel_speed_is_v_over_r() {
        let v = p().vehicle;
        assert_eq!(wheel_speed(0.0, &v), 0.0);
        assert!(close(wheel_speed(31.5, &v), 100.0, 1e-12));
        assert!(close(wheel_speed(3.15, &v), 10.0, 1e-12));
    }

    #[test]
    fn engine_speed_residual() {
        let d = p().drivetrain;
        assert!(close(d.engine_wheel_ratio(), 3.0, 1e-12));
        let engaged = PowertrainCommand {
            engine_torque_nm: 60.0,
            engine_speed_rad_s: 150.0,
            motor_torque_nm: 0.0,
            gear3_torque_nm: 0.0,
            clutch_engaged: true,
            engine_on: true,
        };
        assert!(close(engine_speed_constraint(50.0, &engaged, &d), 0.0, 1e-12));
        let mismatched = PowertrainCommand {
            engine_speed_rad_s: 100.0,
            ..engaged
        };
        assert!(close(
            engine_speed_constraint(50.0, &mismatched, &d),
            -50.0,
            1e-12
        ));
        let open = PowertrainCommand {
            clutch_engaged: false,
            ..mismatched
        };
        assert_eq!(engine_speed_constraint(50.0, &open, &d), 0.0);
    }

    #[test]
    fn fuel_rate_zero_torque_and_conversion() {
        let map = p().engine_map;
        assert_eq!(fuel_rate(0.0, 0.0, &map).unwrap(), 0.0);
        assert_eq!(fuel_rate(300.0, 0.0, &map).unwrap(), 0.0);
        assert!(matches!(
            fuel_rate(0.0, 50.0, &map),
            Err(PowertrainError::StalledEngine)
        ));
        // Constant-map oracle: 230 g/kWh at 30 kW is 1.9167 g/s.
        let flat = EngineMap {
            be_coeffs: [230.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..map
        };
        assert!(close(
            fuel_rate(300.0, 100.0, &flat).unwrap(),
            230.0 * 30_000.0 / 3.6e6,
            1e-12
        ));
        assert!(close(fuel_rate(300.0, 100.0, &flat).unwrap(), 1.9167, 1e-4));
    }

    #[test]
    fn fuel_rate_nonnegative_iff_torque() {
        let map = p().engine_map;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let w = rng.gen_range(map.w_min_rad_s..=map.w_max_rad_s);
            let t = rng.gen_range(map.t_min_nm..=map.t_max_nm);
            let r = fuel_rate(w, t, &map).unwrap();
            assert!(r > 0.0, "in-box fuel rate must be positive, got {r}");
        }
    }

    #[test]
    fn motor_path_torques() {
        let d = p().drivetrain;
        assert!(close(d.motor_wheel_ratio(), 6.0, 1e-12));
        assert!(close(motor_speed(50.0, &d), 300.0, 1e-12));
        assert!(close(motor_speed(10.0, &d), 60.0, 1e-12));
        assert!(close(motor_torque(171.0, 0.0, true, &d), 30.0, 1e-12));
        assert!(close(motor_torque(171.0, 30.0, true, &d), 15.0, 1e-12));
        assert!(close(motor_torque(171.0, 30.0, false, &d), 30.0, 1e-12));
    }

    #[test]
    fn generator_path() {
        let d = p().drivetrain;
        assert!(close(generator_speed(300.0, &d), 600.0, 1e-12));
        assert!(close(generator_speed(150.0, &d), 300.0, 1e-12));
        assert!(close(generator_torque(100.0, 50.0, false, &d), 47.5, 1e-12));
        assert!(close(generator_torque(100.0, 50.0, true, &d), 22.5, 1e-12));
        assert_eq!(generator_torque(0.0, 0.0, true, &d), 0.0);
        // Series mode: all engine torque reaches the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t_e = rng.gen_range(0.0..135.0);
            let t_3 = rng.gen_range(0.0..130.0);
            let tg = generator_torque(t_e, t_3, false, &d);
            assert!(close(tg, t_e * d.ratio_gen * d.gear_eff, 1e-12));
        }
    }

    #[test]
    fn efficiencies_even_in_torque() {
        let params = p();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let w = rng.gen_range(0.0..params.motor_map.w_max_rad_s);
            let t = rng.gen_range(0.0..params.motor_map.t_max_nm);
            let a = motor_efficiency(w, t, &params.motor_map).unwrap();
            let b = motor_efficiency(w, -t, &params.motor_map).unwrap();
            assert_eq!(a, b);
            let wg = rng.gen_range(0.0..params.generator_map.w_max_rad_s);
            let tg = rng.gen_range(0.0..params.generator_map.t_max_nm);
            let ga = generator_efficiency(wg, tg, &params.generator_map).unwrap();
            let gb = generator_efficiency(wg, -tg, &params.generator_map).unwrap();
            assert_eq!(ga, gb);
        }
    }

    #[test]
    fn motor_segment_selection_at_breakpoints() {
        let map = p().motor_map;
        let t = 80.0;
        let w1 = map.w_break1_rad_s;
        let below = motor_efficiency(w1 - 1e-9, t, &map).unwrap();
        let at = motor_efficiency(w1, t, &map).unwrap();
        // Breakpoint speed belongs to the middle segment.
        let f1 = model::quad_surface(&map.f1_coeffs, w1 - 1e-9, t);
        let f2 = model::quad_surface(&map.f2_coeffs, w1, t);
        assert_eq!(below, f1);
        assert_eq!(at, f2);
        // Independent polynomial evaluation mid-box.
        let (w, tq) = (650.0, 120.0);
        let c = &map.f2_coeffs;
        let by_hand = c[0] + c[1] * w + c[2] * tq + c[3] * w * w + c[4] * w * tq + c[5] * tq * tq;
        assert!(close(motor_efficiency(w, tq, &map).unwrap(), by_hand, 1e-15));
    }

    #[test]
    fn generator_efficiency_against_hand_polynomial() {
        let map = p().generator_map;
        for (w, t) in [(300.0, 20.0), (600.0, 40.0), (850.0, 70.0)] {
            let c = &map.fg_coeffs;
            let by_hand = c[0] + c[1] * w + c[2] * t + c[3] * w * w + c[4] * w * t + c[5] * t * t;
            let got = generator_efficiency(w, t, &map).unwrap();
            assert!(close(got, by_hand, 1e-15));
            assert!(got > 0.0 && got < 1.0);
        }
        assert!(matches!(
            generator_efficiency(2000.0, 10.0, &map),
            Err(PowertrainError::OutOfBox { .. })
        ));
    }

    #[test]
    fn battery_power_signs() {
        assert!(close(battery_power(30.0, 300.0, 0.9, 0.0, 0.0, 0.9), 10_000.0, 1e-9));
        assert!(close(battery_power(-30.0, 300.0, 0.9, 0.0, 0.0, 0.9), -8_100.0, 1e-9));
        assert!(close(battery_power(0.0, 300.0, 0.9, 20.0, 600.0, 0.9), -10_800.0, 1e-9));
        assert_eq!(battery_power(0.0, 300.0, 0.9, 0.0, 600.0, 0.9), 0.0);
    }

    #[test]
    fn battery_electrical_polynomials() {
        let b = p().battery;
        let (v0, r0) = battery_electrical(0.0, &b).unwrap();
        assert!(close(v0, 330.0, 1e-12) && close(r0, 0.1, 1e-12));
        let (v6, r6) = battery_electrical(0.6, &b).unwrap();
        assert!(close(v6, 366.0, 1e-12) && close(r6, 0.1, 1e-12));
        let (v1, _) = battery_electrical(1.0, &b).unwrap();
        assert!(close(v1, 390.0, 1e-12));
        assert!(battery_electrical(1.5, &b).is_err());
    }

    #[test]
    fn soc_derivative_examples_and_identity() {
        let b = p().battery;
        assert_eq!(soc_derivative(0.0, 0.6, &b).unwrap(), 0.0);
        let d = soc_derivative(10_000.0, 0.6, &b).unwrap();
        assert!(close(d, -3.369e-4, 5e-8));
        assert!(soc_derivative(-10_000.0, 0.6, &b).unwrap() > 0.0);

        // Root identity on random feasible points.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let soc = rng.gen_range(b.soc_min..=b.soc_max);
            let (voc, res) = battery_electrical(soc, &b).unwrap();
            let p_max = voc * voc / (4.0 * res);
            let p_b = rng.gen_range(-1.5 * p_max..p_max);
            let rate = soc_derivative(p_b, soc, &b).unwrap();
            let current = -b.capacity_coulomb * rate;
            let residual = voc * current - res * current * current - p_b;
            assert!(
                residual.abs() <= 1e-6 * p_b.abs().max(1.0),
                "identity residual {residual} at soc {soc}, p {p_b}"
            );
        }
    }

    #[test]
    fn soc_derivative_strictly_decreasing_in_power() {
        let b = p().battery;
        let (voc, res) = battery_electrical(0.6, &b).unwrap();
        let p_max = voc * voc / (4.0 * res);
        let mut last = f64::INFINITY;
        for i in 0..200 {
            let p_b = -p_max + (2.0 * p_max) * (i as f64) / 200.0;
            let d = soc_derivative(p_b, 0.6, &b).unwrap();
            assert!(d < last, "not strictly decreasing at p={p_b}");
            last = d;
        }
    }

    #[test]
    fn soc_derivative_rejects_overdraw() {
        let b = p().battery;
        let (voc, res) = battery_electrical(0.6, &b).unwrap();
        let p_max = voc * voc / (4.0 * res);
        assert!(matches!(
            soc_derivative(p_max * 1.01, 0.6, &b),
            Err(PowertrainError::InfeasiblePower { .. })
        ));
    }

    #[test]
    fn step_soc_examples() {
        let b = p().battery;
        assert_eq!(step_soc(0.6, 0.0, 0.1, &b).unwrap(), 0.6);
        let discharged = step_soc(0.6, 10_000.0, 0.1, &b).unwrap();
        assert!(close(discharged, 0.59996631, 5e-9));
        let charged = step_soc(0.6, -10_000.0, 0.1, &b).unwrap();
        assert!(charged > 0.6);
        let mirror = 0.6 + 0.1 * soc_derivative(-10_000.0, 0.6, &b).unwrap();
        assert_eq!(charged, mirror);
    }

    #[test]
    fn command_validation() {
        let params = p();
        let ok = PowertrainCommand {
            engine_torque_nm: 100.0,
            engine_speed_rad_s: 300.0,
            motor_torque_nm: 10.0,
            gear3_torque_nm: 0.0,
            clutch_engaged: false,
            engine_on: true,
        };
        assert!(ok.validate(&params.engine_map).is_ok());
        let clutch_no_engine = PowertrainCommand {
            engine_on: false,
            engine_torque_nm: 0.0,
            engine_speed_rad_s: 0.0,
            clutch_engaged: true,
            ..ok
        };
        assert!(matches!(
            clutch_no_engine.validate(&params.engine_map),
            Err(PowertrainError::ClutchWithoutEngine)
        ));
        let off_nonzero = PowertrainCommand {
            engine_on: false,
            clutch_engaged: false,
            ..ok
        };
        assert!(matches!(
            off_nonzero.validate(&params.engine_map),
            Err(PowertrainError::EngineOffNonzero)
        ));
    }
}
