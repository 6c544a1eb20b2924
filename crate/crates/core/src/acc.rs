//! Car-following kinematics, the flexible spacing band, and the comfort cost.

use serde::{Deserialize, Serialize};

use crate::ad::Real;

/// Car-following state advanced by the closed loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccState {
    /// Gap to the preceding vehicle, m.
    pub gap_m: f64,
    /// Preceding minus host velocity, m/s.
    pub rel_velocity_m_s: f64,
    /// Host velocity, m/s.
    pub host_velocity_m_s: f64,
    /// Last applied host acceleration, m/s^2 (jerk memory).
    pub prev_accel_m_s2: f64,
}

/// Cost normalizers and actuation bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccWeights {
    pub e_nmax_m: f64,
    pub v_r_nmax_m_s: f64,
    pub j_nmax_m_s3: f64,
    pub a_min_m_s2: f64,
    pub a_max_m_s2: f64,
    pub v_min_m_s: f64,
    pub v_max_m_s: f64,
}

pub(crate) mod model {
    use super::*;

    #[inline]
    pub fn spacing_band<S: Real>(v_h: S) -> (S, S) {
        let lo = S::lit(5.2) + S::lit(0.7) * v_h + S::lit(0.0705) * v_h * v_h;
        let hi = S::lit(6.8) + S::lit(0.8) * v_h + S::lit(0.0745) * v_h * v_h;
        (lo, hi)
    }

    /// Distance error: zero inside the band, linear outside. Continuous in
    /// the gap, and its square is continuously differentiable.
    #[inline]
    pub fn distance_error<S: Real>(gap: S, v_h: S) -> S {
        let (lo, hi) = spacing_band(v_h);
        if gap.val() < lo.val() {
            lo - gap
        } else if gap.val() > hi.val() {
            gap - hi
        } else {
            S::lit(0.0)
        }
    }

    #[inline]
    pub fn stage_cost<S: Real>(e: S, v_r: S, a_h: S, j_h: S, w: &AccWeights) -> S {
        let en = e * S::lit(1.0 / w.e_nmax_m);
        let vn = v_r * S::lit(1.0 / w.v_r_nmax_m_s);
        let an = a_h * S::lit(1.0 / w.a_min_m_s2);
        let jn = j_h * S::lit(1.0 / w.j_nmax_m_s3);
        en * en + vn * vn + an * an + jn * jn
    }
}

/// Lower and upper edge of the optimal-distance band at host speed `v_h`.
pub fn spacing_band(v_h: f64) -> (f64, f64) {
    model::spacing_band(v_h)
}

/// Distance error against the band; nonnegative, zero inside the band.
pub fn distance_error(gap: f64, v_h: f64) -> f64 {
    model::distance_error(gap, v_h)
}

/// One explicit-Euler plant step. Host velocity clamps at zero so braking at
/// standstill cannot run the host backwards; the relative velocity keeps the
/// preceding vehicle's contribution either way.
pub fn propagate(x: &AccState, a_p: f64, a_h: f64, dt: f64) -> AccState {
    let v_h_raw = x.host_velocity_m_s + dt * a_h;
    // The applied host acceleration over the step, after the standstill clamp;
    // keeping the relative velocity consistent with the clamped host speed.
    let (v_h, a_h_eff) = if v_h_raw < 0.0 {
        (0.0, -x.host_velocity_m_s / dt)
    } else {
        (v_h_raw, a_h)
    };
    AccState {
        gap_m: x.gap_m + dt * x.rel_velocity_m_s,
        rel_velocity_m_s: x.rel_velocity_m_s + dt * (a_p - a_h_eff),
        host_velocity_m_s: v_h,
        prev_accel_m_s2: a_h_eff,
    }
}

/// Jerk as the difference quotient of consecutive accelerations.
pub fn jerk(a_prev: f64, a_h: f64, dt: f64) -> f64 {
    (a_h - a_prev) / dt
}

/// Comfort/tracking stage cost: a sum of normalized squares.
pub fn acc_stage_cost(e: f64, v_r: f64, a_h: f64, j_h: f64, w: &AccWeights) -> f64 {
    model::stage_cost(e, v_r, a_h, j_h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights() -> AccWeights {
        crate::params::Params::shipped_default().unwrap().acc_weights
    }

    #[test]
    fn band_values() {
        let (lo, hi) = spacing_band(0.0);
        assert_eq!((lo, hi), (5.2, 6.8));
        let (lo, hi) = spacing_band(10.0);
        assert!((lo - 19.25).abs() < 1e-12 && (hi - 22.25).abs() < 1e-12);
        let (lo, hi) = spacing_band(20.0);
        assert!((lo - 47.4).abs() < 1e-12 && (hi - 52.6).abs() < 1e-12);
    }

    #[test]
    fn band_ordering_over_speed_range() {
        for i in 0..=600 {
            let v = i as f64 * 0.1;
            let (lo, hi) = spacing_band(v);
            assert!(lo < hi, "band collapsed at v={v}");
        }
    }

    #[test]
    fn distance_error_cases() {
        assert_eq!(distance_error(20.0, 10.0), 0.0);
        assert!((distance_error(18.0, 10.0) - 1.25).abs() < 1e-12);
        assert!((distance_error(25.0, 10.0) - 2.75).abs() < 1e-12);
    }

    #[test]
    fn distance_error_zero_inside_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let v = rng.gen_range(0.0..30.0);
            let (lo, hi) = spacing_band(v);
            let s = rng.gen_range(lo..=hi);
            assert_eq!(distance_error(s, v), 0.0);
            assert!(distance_error(lo - 1.0, v) > 0.0);
            assert!(distance_error(hi + 1.0, v) > 0.0);
        }
    }

    #[test]
    fn distance_error_continuous_at_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..200 {
            let v = rng.gen_range(0.0..30.0);
            let (lo, hi) = spacing_band(v);
            for edge in [lo, hi] {
                let eps = 1e-9;
                let below = distance_error(edge - eps, v);
                let above = distance_error(edge + eps, v);
                assert!(below <= eps + 1e-12 && above <= eps + 1e-12);
                let jump = (below - above).abs();
                assert!(jump <= 2e-9, "jump {jump} at edge {edge}");
            }
        }
    }

    #[test]
    fn propagate_equilibrium_and_euler() {
        let x = AccState {
            gap_m: 20.0,
            rel_velocity_m_s: 0.0,
            host_velocity_m_s: 10.0,
            prev_accel_m_s2: 0.0,
        };
        let next = propagate(&x, 1.0, 1.0, 0.1);
        assert_eq!(next.gap_m, 20.0);
        assert_eq!(next.rel_velocity_m_s, 0.0);

        let x = AccState {
            gap_m: 20.0,
            rel_velocity_m_s: 2.0,
            host_velocity_m_s: 10.0,
            prev_accel_m_s2: 0.0,
        };
        let next = propagate(&x, 0.0, 1.0, 0.1);
        assert!((next.gap_m - 20.2).abs() < 1e-12);
        assert!((next.rel_velocity_m_s - 1.9).abs() < 1e-12);
        assert!((next.host_velocity_m_s - 10.1).abs() < 1e-12);
        assert_eq!(next.prev_accel_m_s2, 1.0);
    }

    #[test]
    fn propagate_clamps_at_standstill() {
        let x = AccState {
            gap_m: 10.0,
            rel_velocity_m_s: 0.0,
            host_velocity_m_s: 0.05,
            prev_accel_m_s2: 0.0,
        };
        let next = propagate(&x, 0.0, -1.0, 0.1);
        assert_eq!(next.host_velocity_m_s, 0.0);
        // The effective deceleration is what the clamp permitted.
        assert!((next.prev_accel_m_s2 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn jerk_difference_quotient() {
        assert_eq!(jerk(1.0, 1.0, 0.1), 0.0);
        assert!((jerk(0.0, 0.2, 0.1) - 2.0).abs() < 1e-12);
        assert!((jerk(0.2, 0.0, 0.1) + 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let a = rng.gen_range(-3.0..3.0);
            let b = rng.gen_range(-3.0..3.0);
            assert_eq!(jerk(a, b, 0.1), -jerk(b, a, 0.1));
        }
    }

    #[test]
    fn stage_cost_normalization() {
        let w = weights();
        assert_eq!(acc_stage_cost(0.0, 0.0, 0.0, 0.0, &w), 0.0);
        assert!((acc_stage_cost(w.e_nmax_m, 0.0, 0.0, 0.0, &w) - 1.0).abs() < 1e-12);
        let unit = AccWeights {
            e_nmax_m: 1.0,
            v_r_nmax_m_s: 1.0,
            ..w.clone()
        };
        let c = acc_stage_cost(1.0, 1.0, unit.a_min_m_s2, unit.j_nmax_m_s3, &unit);
        assert!((c - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stage_cost_even_in_relative_velocity_and_jerk() {
        let w = weights();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..300 {
            let e = rng.gen_range(0.0..4.0);
            let vr = rng.gen_range(-3.0..3.0);
            let a = rng.gen_range(-2.0..2.0);
            let j = rng.gen_range(-4.0..4.0);
            let base = acc_stage_cost(e, vr, a, j, &w);
            assert_eq!(base, acc_stage_cost(e, -vr, a, j, &w));
            assert_eq!(base, acc_stage_cost(e, vr, a, -j, &w));
        }
    }
}
