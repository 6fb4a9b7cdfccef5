//! Quasi-static control law of a single full-converter (PMSG) wind turbine.
//!
//! All quantities are per-unit on the machine base with `P = U * i_d` and
//! `Q = U * i_q`. The grid-side converter is modelled by its current
//! references only: reactive current is served first during a voltage dip,
//! active current takes whatever converter headroom is left, and after the
//! dip the active current recovers at a limited rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal voltages below this are raised to it before dividing by them.
pub const VOLTAGE_FLOOR: f64 = 0.01;

/// Electrical limits, grid-code gains and power-curve constants of one turbine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurbineParams {
    /// Rated active power on the machine base.
    pub rated_power: f64,
    /// Rated current.
    pub i_n: f64,
    /// Converter current limit.
    pub i_max: f64,
    /// Active-current recovery rate after a dip (pu/s).
    pub k_ramp: f64,
    /// Cut-in wind speed (m/s).
    pub v_cutin: f64,
    /// Rated wind speed (m/s).
    pub v_rated: f64,
    /// Reactive current gain per pu of voltage dip.
    pub lvrt_gain: f64,
    /// Voltage below which the reactive reference stops growing.
    pub lvrt_lower: f64,
    /// Voltage at or below which ride-through control is active.
    pub lvrt_upper: f64,
}

impl Default for TurbineParams {
    fn default() -> Self {
        Self {
            rated_power: 1.0,
            i_n: 1.0,
            i_max: 1.1,
            k_ramp: 0.5,
            v_cutin: 3.5,
            v_rated: 11.1,
            lvrt_gain: 1.5,
            lvrt_lower: 0.2,
            lvrt_upper: 0.9,
        }
    }
}

impl TurbineParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.i_n > 0.0
            && self.i_max >= self.i_n
            && self.k_ramp > 0.0
            && self.rated_power > 0.0
            && self.v_cutin > 0.0
            && self.v_cutin < self.v_rated
            && self.lvrt_gain > 0.0
            && self.lvrt_lower >= 0.0
            && self.lvrt_lower < self.lvrt_upper
            && self.lvrt_upper < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InputDomain(format!("inconsistent turbine parameters {self:?}")))
        }
    }

    /// Whether ride-through control is active at terminal voltage `u_t`.
    #[inline]
    pub fn in_lvrt(&self, u_t: f64) -> bool {
        u_t <= self.lvrt_upper
    }
}

/// Controller state of one turbine (or one machine of an aggregate unit).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentState {
    pub i_d: f64,
    pub i_q: f64,
    /// Pre-fault active current.
    pub i_d0: f64,
    /// Pre-fault terminal voltage magnitude.
    pub e0: f64,
}

impl CurrentState {
    /// Steady operating point delivering `p0` at terminal voltage `e0`.
    pub fn steady(p0: f64, e0: f64, params: &TurbineParams) -> Self {
        let i_d0 = (p0 / e0.max(VOLTAGE_FLOOR)).min(params.i_max);
        Self {
            i_d: i_d0,
            i_q: 0.0,
            i_d0,
            e0,
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.i_d.hypot(self.i_q)
    }
}

/// Piecewise-constant recovery-rate limit, keyed by time since the end of
/// ride-through.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    /// `(t_breakpoint, rate)` pairs; each rate holds from its breakpoint
    /// until the next one. The first breakpoint is 0.
    pub segments: Vec<(f64, f64)>,
}

impl RampSchedule {
    pub fn constant(rate: f64) -> Self {
        Self { segments: vec![(0.0, rate)] }
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|&(tb, _)| tb <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    /// Active current gained after `t` seconds of unobstructed ramping.
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &(tb, rate)) in self.segments.iter().enumerate() {
            if tb >= t {
                break;
            }
            let end = self.segments.get(i + 1).map_or(t, |&(next, _)| next.min(t));
            acc += rate * (end - tb);
        }
        acc
    }
}

/// Static MPPT power curve: cubic between cut-in and rated speed.
pub fn power_curve(v_w: f64, params: &TurbineParams) -> Result<f64> {
    if !(v_w >= 0.0) {
        return Err(Error::InputDomain(format!("wind speed {v_w} m/s is negative")));
    }
    Ok(if v_w < params.v_cutin {
        0.0
    } else if v_w <= params.v_rated {
        (v_w / params.v_rated).powi(3) * params.rated_power
    } else {
        params.rated_power
    })
}

/// Result of inverting the power curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveInverse {
    pub speed: f64,
    /// The requested power lies below the cut-in output and the speed was
    /// clamped to cut-in.
    pub unreachable: bool,
}

pub fn power_curve_inverse(p: f64, params: &TurbineParams) -> Result<CurveInverse> {
    if !(p > 0.0 && p <= params.rated_power) {
        return Err(Error::InputDomain(format!(
            "power {p} pu outside (0, {}]",
            params.rated_power
        )));
    }
    let speed = params.v_rated * (p / params.rated_power).cbrt();
    if speed < params.v_cutin {
        Ok(CurveInverse {
            speed: params.v_cutin,
            unreachable: true,
        })
    } else {
        Ok(CurveInverse {
            speed: speed.min(params.v_rated),
            unreachable: false,
        })
    }
}

/// Grid-code reactive current reference.
pub fn iq_ref(u_t: f64, params: &TurbineParams) -> f64 {
    let dip = if u_t > params.lvrt_upper {
        return 0.0;
    } else if u_t >= params.lvrt_lower {
        params.lvrt_upper - u_t
    } else {
        params.lvrt_upper - params.lvrt_lower
    };
    (params.lvrt_gain * dip * params.i_n).min(params.i_max)
}

/// Active current headroom left once the reactive reference is served.
pub fn id_max(u_t: f64, params: &TurbineParams) -> f64 {
    let iq = iq_ref(u_t, params);
    if iq >= params.i_max {
        0.0
    } else {
        (params.i_max * params.i_max - iq * iq).sqrt()
    }
}

/// Active current reference at terminal voltage `u_t`.
///
/// Inside the ride-through band the dc-link controller asks for
/// `i_d0 / u_t`, limited by [`id_max`]. Outside it the converter tracks the
/// pre-fault power, limited by the converter rating.
pub fn id_ref(state: &CurrentState, u_t: f64, params: &TurbineParams) -> Result<f64> {
    if !(u_t > 0.0) {
        return Err(Error::SingularVoltage(u_t));
    }
    let u = u_t.max(VOLTAGE_FLOOR);
    if params.in_lvrt(u_t) {
        Ok((state.i_d0 / u).min(id_max(u_t, params)))
    } else {
        Ok((state.i_d0 * (state.e0 / u)).min(params.i_max))
    }
}

/// Advance the controller one step with the default recovery rate.
pub fn step_current(state: &CurrentState, u_t: f64, dt: f64, params: &TurbineParams) -> CurrentState {
    step_current_with_rate(state, u_t, dt, params.k_ramp, params)
}

/// Advance the controller one step, limiting upward active-current motion
/// outside the ride-through band to `rate * dt`.
pub fn step_current_with_rate(
    state: &CurrentState,
    u_t: f64,
    dt: f64,
    rate: f64,
    params: &TurbineParams,
) -> CurrentState {
    debug_assert!(dt > 0.0);
    let u = if u_t.is_finite() { u_t.max(VOLTAGE_FLOOR) } else { VOLTAGE_FLOOR };
    // u is floored so id_ref cannot fail
    let target = id_ref(state, u, params).unwrap_or(0.0);
    let i_q = iq_ref(u, params);
    let mut i_d = if params.in_lvrt(u) || target <= state.i_d {
        target
    } else {
        target.min(state.i_d + rate * dt)
    };

    // reactive priority on the converter current circle
    let i_q = i_q.min(params.i_max);
    let head = (params.i_max * params.i_max - i_q * i_q).max(0.0).sqrt();
    i_d = i_d.clamp(0.0, head);

    CurrentState {
        i_d,
        i_q,
        ..*state
    }
}
