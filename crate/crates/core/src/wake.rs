//! Jensen wake deficit along a feeder row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WakeParams {
    /// Thrust coefficient.
    pub c_t: f64,
    /// Wake decay constant.
    pub k_decay: f64,
    /// Rotor radius (m).
    pub rotor_radius: f64,
    /// Downstream distance between neighbouring turbines (m).
    pub spacing: f64,
}

impl Default for WakeParams {
    fn default() -> Self {
        Self {
            c_t: 0.2,
            k_decay: 0.04,
            rotor_radius: 40.0,
            spacing: 500.0,
        }
    }
}

impl WakeParams {
    pub fn validate(&self) -> Result<()> {
        if self.c_t > 0.0 && self.c_t < 1.0 && self.k_decay > 0.0 && self.rotor_radius > 0.0 && self.spacing > 0.0 {
            Ok(())
        } else {
            Err(Error::InputDomain(format!("invalid wake parameters {self:?}")))
        }
    }
}

/// Speed ratio between one turbine and the next one downstream.
pub fn deficit_factor(p: &WakeParams) -> f64 {
    let expansion = p.rotor_radius / (p.rotor_radius + p.k_decay * p.spacing);
    1.0 - (1.0 - (1.0 - p.c_t).sqrt()) * expansion * expansion
}

/// Wind speeds of `n` turbines in a row, first turbine seeing `v_w0`.
pub fn feeder_speeds(v_w0: f64, n: usize, p: &WakeParams) -> Vec<f64> {
    let dec = deficit_factor(p);
    std::iter::successors(Some(v_w0), |v| Some(v * dec)).take(n).collect()
}

/// Free-stream speed of feeder `feeder` drawn uniformly from `[lo, hi]`.
///
/// Each feeder uses its own ChaCha stream, so a feeder's draw depends only
/// on the seed and its own index.
pub fn draw_inflow(seed: u64, feeder: usize, lo: f64, hi: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(feeder as u64);
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn deficit_reference() {
        let p = WakeParams::default();
        // 1 - (1 - sqrt(0.8)) * (40 / 60)^2
        assert_abs_diff_eq!(deficit_factor(&p), 0.9530787515555181, epsilon = 1e-12);
    }

    #[test]
    fn deficit_limits() {
        let p = WakeParams { c_t: 1e-12, ..Default::default() };
        assert_abs_diff_eq!(deficit_factor(&p), 1.0, epsilon = 1e-12);
        let p = WakeParams { spacing: 1e12, ..Default::default() };
        assert_abs_diff_eq!(deficit_factor(&p), 1.0, epsilon = 1e-12);
        let d = deficit_factor(&WakeParams::default());
        assert!(d > 0.0 && d < 1.0);
    }

    #[test]
    fn geometric_row() {
        let p = WakeParams::default();
        let v = feeder_speeds(10.0, 3, &p);
        assert_eq!(v.len(), 3);
        assert_abs_diff_eq!(v[1], 9.530787515555181, epsilon = 1e-9);
        assert_abs_diff_eq!(v[2], 9.08359106666625, epsilon = 1e-9);
        assert_eq!(feeder_speeds(7.0, 1, &p), vec![7.0]);
        let dec = deficit_factor(&p);
        let long = feeder_speeds(11.0, 12, &p);
        for w in long.windows(2) {
            assert!(w[1] <= w[0]);
            assert_abs_diff_eq!(w[1] / w[0], dec, epsilon = 1e-14);
        }
    }

    #[test]
    fn inflow_draws_are_per_feeder() {
        let a: Vec<f64> = (0..16).map(|f| draw_inflow(7, f, 9.0, 11.0)).collect();
        assert!(a.iter().all(|v| (9.0..=11.0).contains(v)));
        // feeder 3's draw does not depend on how many feeders exist
        assert_eq!(draw_inflow(7, 3, 9.0, 11.0), a[3]);
        assert_ne!(a[0], a[1]);
        assert_eq!(draw_inflow(1, 0, 5.0, 5.0), 5.0);
    }
}
