//! Response-category assignment from pre-fault wind speed and the terminal
//! voltage just before fault clearance.
//!
//! * Category I: active current is headroom-limited below its pre-fault
//!   value, so power ramps back after clearance.
//! * Category II: power is limited during the fault but the pre-fault
//!   current fits the headroom, so recovery is immediate.
//! * Category III: pre-fault power is held throughout the fault.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::{id_max, power_curve, power_curve_inverse, TurbineParams};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    I,
    II,
    III,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::I, Category::II, Category::III];

    pub fn index(self) -> usize {
        match self {
            Category::I => 0,
            Category::II => 1,
            Category::III => 2,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::I => "I",
            Category::II => "II",
            Category::III => "III",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub category: Category,
    pub v_w: f64,
    /// Terminal voltage magnitude just before clearance.
    pub alpha_fminus: f64,
    pub p0: f64,
    pub p_cri1: f64,
    pub p_cri2: f64,
}

/// Critical pre-fault powers at dip `alpha` with pre-fault voltage `e`.
///
/// Above `p_cri1` the active current cannot return to its pre-fault value
/// during the fault; at or below `p_cri2` it never leaves it.
pub fn critical_powers(alpha: f64, e: f64, params: &TurbineParams) -> (f64, f64) {
    let p_cri1 = e * id_max(alpha, params);
    (p_cri1, alpha * p_cri1)
}

/// A critical speed, clamped into the cut-in..rated range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSpeed {
    pub speed: f64,
    pub clamped: bool,
}

fn speed_for(p: f64, params: &TurbineParams) -> Result<CriticalSpeed> {
    if p >= params.rated_power {
        return Ok(CriticalSpeed { speed: params.v_rated, clamped: true });
    }
    if p <= 0.0 {
        return Ok(CriticalSpeed { speed: params.v_cutin, clamped: true });
    }
    let inv = power_curve_inverse(p, params)?;
    Ok(CriticalSpeed { speed: inv.speed, clamped: inv.unreachable })
}

pub fn critical_speeds(alpha: f64, e: f64, params: &TurbineParams) -> Result<(CriticalSpeed, CriticalSpeed)> {
    let (p1, p2) = critical_powers(alpha, e, params);
    Ok((speed_for(p1, params)?, speed_for(p2, params)?))
}

pub fn classify_wtg(v_w: f64, alpha: f64, e: f64, params: &TurbineParams) -> Result<ClusterAssignment> {
    let p0 = power_curve(v_w, params)?;
    let (p_cri1, p_cri2) = critical_powers(alpha, e, params);
    let category = if p0 <= 0.0 || p0 <= p_cri2 {
        Category::III
    } else if p0 <= p_cri1 {
        Category::II
    } else {
        Category::I
    };
    Ok(ClusterAssignment {
        category,
        v_w,
        alpha_fminus: alpha,
        p0,
        p_cri1,
        p_cri2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub alpha: f64,
    pub v_cri1: CriticalSpeed,
    pub v_cri2: CriticalSpeed,
}

pub fn boundary_table(alpha_grid: &[f64], e: f64, params: &TurbineParams) -> Result<Vec<BoundaryRow>> {
    alpha_grid
        .iter()
        .map(|&alpha| {
            let (v_cri1, v_cri2) = critical_speeds(alpha, e, params)?;
            Ok(BoundaryRow { alpha, v_cri1, v_cri2 })
        })
        .collect()
}

/// CSV with columns `alpha,v_cri1,v_cri2,clamped_flags`.
///
/// `clamped_flags` is `-`, `1`, `2` or `12` naming the clamped boundaries.
pub fn write_boundary_csv<W: Write>(rows: &[BoundaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "v_cri1", "v_cri2", "clamped_flags"])?;
    for r in rows {
        let flags = match (r.v_cri1.clamped, r.v_cri2.clamped) {
            (false, false) => "-",
            (true, false) => "1",
            (false, true) => "2",
            (true, true) => "12",
        };
        w.write_record([
            format!("{:.14e}", r.alpha),
            format!("{:.14e}", r.v_cri1.speed),
            format!("{:.14e}", r.v_cri2.speed),
            flags.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
