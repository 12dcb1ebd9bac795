//! Coordinator acceptance policy under the ON/OFF complementarity constraint
//! and the aggregate power readout.
//!
//! Request quantities (`n_req_on`, `n_req_off`, `x_p_last`) may be expressed in
//! devices or in fleet fractions; `unit_power` is the power of one unit of that
//! quantity (6 kW per device, or 6 kW × fleet size per fraction).

use crate::error::{PemError, Result};

/// Output map selecting the power-drawing entries of the aggregate state.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerReadout {
    pub c: Vec<f64>,
}

impl PowerReadout {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(PemError::InvalidParameter("output map entries must be 0 or 1".into()));
        }
        Ok(Self { c })
    }
}

/// `unit_power · Cᵀq`.
pub fn aggregate_power(q: &[f64], readout: &PowerReadout, unit_power: f64) -> Result<f64> {
    if q.len() != readout.c.len() {
        return Err(PemError::LengthMismatch {
            left: q.len(),
            right: readout.c.len(),
        });
    }
    Ok(unit_power * q.iter().zip(&readout.c).map(|(a, b)| a * b).sum::<f64>())
}

/// Accepted fractions of ON and OFF requests for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BetaPair {
    pub beta_on: f64,
    pub beta_off: f64,
    /// Set when a β was limited to [0, 1] or fell back, so the predicted power
    /// will not land exactly on the reference.
    pub clamped: bool,
}

impl BetaPair {
    pub const IDLE: BetaPair = BetaPair {
        beta_on: 0.0,
        beta_off: 0.0,
        clamped: false,
    };

    #[inline]
    pub fn complementary(&self) -> bool {
        self.beta_on * self.beta_off == 0.0
    }
}

fn clamp_unit(v: f64) -> (f64, bool) {
    if v > 1.0 {
        (1.0, true)
    } else if v < 0.0 {
        (0.0, true)
    } else {
        (v, false)
    }
}

/// Acceptance fractions that drive the next-step power to `p_ref_next`.
///
/// Raising power accepts only ON requests; lowering power accepts only OFF
/// requests, after crediting packets expiring this step. A zero ON pool
/// yields `beta_on = 0`. When the OFF pool net of expiries is empty the
/// policy accepts everything if a reduction is still needed and nothing
/// otherwise.
pub fn compute_betas(
    p_agg: f64,
    p_ref_next: f64,
    n_req_on: f64,
    n_req_off: f64,
    x_p_last: f64,
    unit_power: f64,
) -> BetaPair {
    if p_ref_next > p_agg {
        let denom = unit_power * n_req_on;
        if denom <= 0.0 {
            return BetaPair { clamped: true, ..BetaPair::IDLE };
        }
        let (beta_on, clamped) = clamp_unit((p_ref_next - p_agg + x_p_last * unit_power) / denom);
        BetaPair {
            beta_on,
            beta_off: 0.0,
            clamped,
        }
    } else if p_ref_next < p_agg {
        let num = p_agg - p_ref_next - x_p_last * unit_power;
        let denom = unit_power * (n_req_off - x_p_last);
        let (beta_off, clamped) = if denom > 0.0 {
            clamp_unit(num / denom)
        } else if num > 0.0 {
            (1.0, true)
        } else {
            (0.0, num != 0.0)
        };
        BetaPair {
            beta_on: 0.0,
            beta_off,
            clamped,
        }
    } else {
        BetaPair::IDLE
    }
}

/// One-step aggregate power update implied by accepting `betas`.
pub fn predicted_power_step(
    p_agg: f64,
    betas: &BetaPair,
    n_req_on: f64,
    n_req_off: f64,
    x_p_last: f64,
    unit_power: f64,
) -> f64 {
    p_agg + (betas.beta_on * n_req_on - betas.beta_off * n_req_off) * unit_power
        - (1.0 - betas.beta_off) * x_p_last * unit_power
}
