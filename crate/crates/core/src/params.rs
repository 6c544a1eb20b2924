//! Parameter file schema, loading, and invariant validation.
//!
//! The file is TOML with one table per parameter group; see
//! `params/default.toml` for the documented key list. The loader validates
//! every invariant and rejects on the first violation, reporting the
//! offending key path. Map positivity/efficiency-range invariants are checked
//! exactly: the extrema of a quadratic over a box lie at corners, edge
//! vertices, or the interior stationary point, all of which are enumerated in
//! closed form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acc::AccWeights;
use crate::ocp::EmsWeights;
use crate::powertrain::{
    BatteryParams, DrivetrainParams, EngineMap, GeneratorMap, MotorMap, VehicleParams,
};

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter file parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("parameter file serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn invalid(key: &str, message: impl Into<String>) -> ParamError {
    ParamError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuelProperties {
    pub density_kg_per_l: f64,
}

/// Complete, validated parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub vehicle: VehicleParams,
    pub drivetrain: DrivetrainParams,
    pub engine_map: EngineMap,
    pub motor_map: MotorMap,
    pub generator_map: GeneratorMap,
    pub battery: BatteryParams,
    pub acc_weights: AccWeights,
    pub ems_weights: EmsWeights,
    pub fuel: FuelProperties,
}

const DEFAULT_TOML: &str = include_str!("../../../params/default.toml");

impl Params {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self, ParamError> {
        let params: Params = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    /// Loads and validates a parameter file from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ParamError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The parameter set shipped with the crate.
    pub fn shipped_default() -> Result<Self, ParamError> {
        Self::from_toml_str(DEFAULT_TOML)
    }

    /// Overrides keys from a TOML fragment (for example the output of a map
    /// fit) and re-validates the merged set. Tables merge key-by-key, so a
    /// fragment may carry a single coefficient list without restating the
    /// rest of its section.
    pub fn apply_fragment_str(&self, fragment: &str) -> Result<Self, ParamError> {
        let mut doc: toml::Table = toml::from_str(&toml::to_string(self)?)?;
        let patch: toml::Table = toml::from_str(fragment)?;
        for (key, value) in patch {
            match (doc.get_mut(&key), value) {
                (Some(toml::Value::Table(existing)), toml::Value::Table(incoming)) => {
                    for (k, v) in incoming {
                        existing.insert(k, v);
                    }
                }
                (_, value) => {
                    doc.insert(key, value);
                }
            }
        }
        Self::from_toml_str(&toml::to_string(&doc)?)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.validate_vehicle()?;
        self.validate_drivetrain()?;
        self.validate_engine_map()?;
        self.validate_motor_map()?;
        self.validate_generator_map()?;
        self.validate_battery()?;
        self.validate_acc_weights()?;
        self.validate_ems_weights()?;
        if !(self.fuel.density_kg_per_l > 0.0) {
            return Err(invalid("fuel.density_kg_per_l", "must be positive"));
        }
        Ok(())
    }

    fn validate_vehicle(&self) -> Result<(), ParamError> {
        let v = &self.vehicle;
        let fields = [
            ("vehicle.mass_kg", v.mass_kg),
            ("vehicle.cross_section_m2", v.cross_section_m2),
            ("vehicle.wheel_radius_m", v.wheel_radius_m),
            ("vehicle.rolling_coeff", v.rolling_coeff),
            ("vehicle.air_density_kg_m3", v.air_density_kg_m3),
            ("vehicle.drag_coeff", v.drag_coeff),
            ("vehicle.gravity_m_s2", v.gravity_m_s2),
        ];
        for (key, value) in fields {
            if !(value > 0.0) {
                return Err(invalid(key, format!("must be strictly positive, got {value}")));
            }
        }
        if v.road_grade_rad != 0.0 {
            return Err(invalid(
                "vehicle.road_grade_rad",
                "nonzero road grade is not modeled; must be 0",
            ));
        }
        Ok(())
    }

    fn validate_drivetrain(&self) -> Result<(), ParamError> {
        let d = &self.drivetrain;
        let fields = [
            ("drivetrain.ratio_gear3", d.ratio_gear3),
            ("drivetrain.ratio_motor", d.ratio_motor),
            ("drivetrain.ratio_final", d.ratio_final),
            ("drivetrain.ratio_gen", d.ratio_gen),
            ("drivetrain.gear_eff", d.gear_eff),
            ("drivetrain.gear3_torque_max_nm", d.gear3_torque_max_nm),
        ];
        for (key, value) in fields {
            if !(value > 0.0) {
                return Err(invalid(key, format!("must be strictly positive, got {value}")));
            }
        }
        if d.gear_eff > 1.0 {
            return Err(invalid("drivetrain.gear_eff", "must be in (0, 1]"));
        }
        Ok(())
    }

    fn validate_engine_map(&self) -> Result<(), ParamError> {
        let m = &self.engine_map;
        if !(0.0 < m.w_min_rad_s && m.w_min_rad_s < m.w_max_rad_s) {
            return Err(invalid(
                "engine_map.w_min_rad_s",
                "requires 0 < w_min < w_max",
            ));
        }
        if !(0.0 < m.t_min_nm && m.t_min_nm < m.t_max_nm) {
            return Err(invalid("engine_map.t_min_nm", "requires 0 < t_min < t_max"));
        }
        let (lo, _) = quad_box_extrema(
            &m.be_coeffs,
            (m.w_min_rad_s, m.w_max_rad_s),
            (m.t_min_nm, m.t_max_nm),
        );
        if lo <= 0.0 {
            return Err(invalid(
                "engine_map.be_coeffs",
                format!("fuel map not positive over the box (min {lo})"),
            ));
        }
        Ok(())
    }

    fn validate_motor_map(&self) -> Result<(), ParamError> {
        let m = &self.motor_map;
        if !(m.w_min_rad_s <= m.w_break1_rad_s
            && m.w_break1_rad_s < m.w_break2_rad_s
            && m.w_break2_rad_s <= m.w_max_rad_s)
        {
            return Err(invalid(
                "motor_map.w_break1_rad_s",
                "requires w_min <= w_break1 < w_break2 <= w_max",
            ));
        }
        if !(m.t_min_nm < 0.0 && m.t_max_nm > 0.0) {
            return Err(invalid(
                "motor_map.t_min_nm",
                "regeneration requires t_min < 0 < t_max",
            ));
        }
        let t_abs = m.t_max_nm.max(-m.t_min_nm);
        let segs = [
            ("motor_map.f1_coeffs", &m.f1_coeffs, m.w_min_rad_s, m.w_break1_rad_s),
            ("motor_map.f2_coeffs", &m.f2_coeffs, m.w_break1_rad_s, m.w_break2_rad_s),
            ("motor_map.f3_coeffs", &m.f3_coeffs, m.w_break2_rad_s, m.w_max_rad_s),
        ];
        for (key, coeffs, w_lo, w_hi) in segs {
            let (lo, hi) = quad_box_extrema(coeffs, (w_lo, w_hi), (0.0, t_abs));
            if lo <= 0.0 || hi >= 1.0 {
                return Err(invalid(
                    key,
                    format!("efficiency must stay in (0, 1) over its segment, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    fn validate_generator_map(&self) -> Result<(), ParamError> {
        let m = &self.generator_map;
        if !(m.w_min_rad_s < m.w_max_rad_s) {
            return Err(invalid("generator_map.w_min_rad_s", "requires w_min < w_max"));
        }
        let t_abs = m.t_max_nm.max(-m.t_min_nm);
        let (lo, hi) = quad_box_extrema(
            &m.fg_coeffs,
            (m.w_min_rad_s, m.w_max_rad_s),
            (0.0, t_abs),
        );
        if lo <= 0.0 || hi >= 1.0 {
            return Err(invalid(
                "generator_map.fg_coeffs",
                format!("efficiency must stay in (0, 1) over the box, got [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }

    fn validate_battery(&self) -> Result<(), ParamError> {
        let b = &self.battery;
        if !(b.capacity_coulomb > 0.0) {
            return Err(invalid("battery.capacity_coulomb", "must be positive"));
        }
        if !(0.0 <= b.soc_min && b.soc_min < b.soc_max && b.soc_max <= 1.0) {
            return Err(invalid(
                "battery.soc_min",
                "requires 0 <= soc_min < soc_max <= 1",
            ));
        }
        let (voc_lo, _) = quad_range(&b.voc_coeffs, b.soc_min, b.soc_max);
        if voc_lo <= 0.0 {
            return Err(invalid(
                "battery.voc_coeffs",
                format!("open-circuit voltage must be positive over the SOC range (min {voc_lo})"),
            ));
        }
        let (res_lo, _) = quad_range(&b.res_coeffs, b.soc_min, b.soc_max);
        if res_lo <= 0.0 {
            return Err(invalid(
                "battery.res_coeffs",
                format!("internal resistance must be positive over the SOC range (min {res_lo})"),
            ));
        }
        Ok(())
    }

    fn validate_acc_weights(&self) -> Result<(), ParamError> {
        let w = &self.acc_weights;
        for (key, value) in [
            ("acc_weights.e_nmax_m", w.e_nmax_m),
            ("acc_weights.v_r_nmax_m_s", w.v_r_nmax_m_s),
            ("acc_weights.j_nmax_m_s3", w.j_nmax_m_s3),
        ] {
            if !(value > 0.0) {
                return Err(invalid(key, "normalizer must be strictly positive"));
            }
        }
        if !(w.a_min_m_s2 < 0.0 && w.a_max_m_s2 > 0.0) {
            return Err(invalid("acc_weights.a_min_m_s2", "requires a_min < 0 < a_max"));
        }
        if !(0.0 <= w.v_min_m_s && w.v_min_m_s < w.v_max_m_s) {
            return Err(invalid("acc_weights.v_min_m_s", "requires 0 <= v_min < v_max"));
        }
        Ok(())
    }

    fn validate_ems_weights(&self) -> Result<(), ParamError> {
        let w = &self.ems_weights;
        if !(w.lambda_g >= 0.0) {
            return Err(invalid("ems_weights.lambda_g", "must be nonnegative"));
        }
        if !(self.battery.soc_min <= w.soc_ref && w.soc_ref <= self.battery.soc_max) {
            return Err(invalid(
                "ems_weights.soc_ref",
                "must lie within [battery.soc_min, battery.soc_max]",
            ));
        }
        Ok(())
    }
}

/// Exact extrema of `c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2` over a box.
fn quad_box_extrema(c: &[f64; 6], (xl, xu): (f64, f64), (yl, yu): (f64, f64)) -> (f64, f64) {
    let eval = |x: f64, y: f64| c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y;
    let mut candidates = vec![
        eval(xl, yl),
        eval(xl, yu),
        eval(xu, yl),
        eval(xu, yu),
    ];
    // Vertices along fixed-x edges.
    if c[5] != 0.0 {
        for x in [xl, xu] {
            let y = -(c[2] + c[4] * x) / (2.0 * c[5]);
            if y > yl && y < yu {
                candidates.push(eval(x, y));
            }
        }
    }
    // Vertices along fixed-y edges.
    if c[3] != 0.0 {
        for y in [yl, yu] {
            let x = -(c[1] + c[4] * y) / (2.0 * c[3]);
            if x > xl && x < xu {
                candidates.push(eval(x, y));
            }
        }
    }
    // Interior stationary point.
    let det = 4.0 * c[3] * c[5] - c[4] * c[4];
    if det.abs() > f64::EPSILON {
        let x = (-2.0 * c[5] * c[1] + c[4] * c[2]) / det;
        let y = (-2.0 * c[3] * c[2] + c[4] * c[1]) / det;
        if x > xl && x < xu && y > yl && y < yu {
            candidates.push(eval(x, y));
        }
    }
    let lo = candidates.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Exact range of `a s^2 + b s + c` over an interval.
fn quad_range(c: &[f64; 3], lo: f64, hi: f64) -> (f64, f64) {
    let eval = |s: f64| c[0] * s * s + c[1] * s + c[2];
    let mut candidates = vec![eval(lo), eval(hi)];
    if c[0] != 0.0 {
        let v = -c[1] / (2.0 * c[0]);
        if v > lo && v < hi {
            candidates.push(eval(v));
        }
    }
    let min = candidates.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
