//! First-order equivalent thermal parameter (ETP) dynamics of an air-conditioned
//! space, hysteresis switching and closed-form duty-cycle oracles.
//!
//! Units: temperatures in °F, thermal resistance in °F/kW, capacitance in
//! kWh/°F (so the time constant is in hours), power in kW. Time steps passed to
//! the functions here are in seconds.

use serde::{Deserialize, Serialize};

use crate::error::{PemError, Result};

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Thermostat setpoint and deadband.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalBand {
    pub t_set: f64,
    pub deadband: f64,
}

impl ThermalBand {
    pub fn new(t_set: f64, deadband: f64) -> Result<Self> {
        if !(deadband > 0.0) || !t_set.is_finite() {
            return Err(PemError::InvalidParameter(format!(
                "deadband must be positive and setpoint finite (t_set={t_set}, deadband={deadband})"
            )));
        }
        Ok(Self { t_set, deadband })
    }

    #[inline]
    pub fn t_min(&self) -> f64 {
        self.t_set - 0.5 * self.deadband
    }

    #[inline]
    pub fn t_max(&self) -> f64 {
        self.t_set + 0.5 * self.deadband
    }

    #[inline]
    pub fn contains(&self, t: f64) -> bool {
        t > self.t_min() && t < self.t_max()
    }
}

impl Default for ThermalBand {
    fn default() -> Self {
        Self {
            t_set: 73.0,
            deadband: 2.0,
        }
    }
}

/// ETP parameters of one AC unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Thermal resistance, °F/kW.
    pub r_eq: f64,
    /// Thermal capacitance, kWh/°F.
    pub c_eq: f64,
    /// Coefficient of performance.
    pub eta: f64,
    /// Rated electrical power, kW.
    pub p_rate: f64,
    /// Standard deviation of the disturbance process, °F/√h.
    #[serde(default)]
    pub noise_std: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            r_eq: 2.5,
            c_eq: 1.8,
            eta: 3.5,
            p_rate: 6.0,
            noise_std: 0.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_eq", self.r_eq),
            ("c_eq", self.c_eq),
            ("eta", self.eta),
            ("p_rate", self.p_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PemError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(PemError::InvalidParameter(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Time constant in hours.
    #[inline]
    pub fn tau(&self) -> f64 {
        self.r_eq * self.c_eq
    }

    /// Temperature offset produced by running the compressor, η·P·R.
    #[inline]
    pub fn cooling_offset(&self) -> f64 {
        self.eta * self.p_rate * self.r_eq
    }

    /// Steady-state indoor temperature for a fixed mode.
    #[inline]
    pub fn equilibrium(&self, mode: Mode, t_amb: f64) -> f64 {
        t_amb - self.cooling_offset() * mode.as_f64()
    }

    /// Noise intensity giving a per-step temperature standard deviation of
    /// `step_std` °F at a time step of `dt` seconds.
    pub fn noise_for_step_std(step_std: f64, dt: f64) -> f64 {
        step_std / (dt / SECONDS_PER_HOUR).sqrt()
    }

    /// Per-step standard deviation of the temperature disturbance.
    pub fn step_noise_std(&self, dt: f64) -> f64 {
        self.noise_std * (dt / SECONDS_PER_HOUR).sqrt()
    }
}

/// Compressor state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Off,
    On,
}

impl Mode {
    #[inline]
    pub fn as_f64(self) -> f64 {
        match self {
            Mode::Off => 0.0,
            Mode::On => 1.0,
        }
    }

    #[inline]
    pub fn is_on(self) -> bool {
        matches!(self, Mode::On)
    }
}

/// Continuous-time temperature rate in °F/h, disturbance excluded.
pub fn etp_derivative(params: &DeviceParams, t_indoor: f64, mode: Mode, t_amb: f64) -> f64 {
    (t_amb - t_indoor - params.cooling_offset() * mode.as_f64()) / params.tau()
}

/// One forward step of the discretized ETP model.
///
/// `dt` is in seconds; `noise_sample` is a realization of the disturbance rate
/// (°F/h) held over the step, so it contributes `dt·noise_sample`.
pub fn etp_step(
    params: &DeviceParams,
    t_indoor: f64,
    mode: Mode,
    t_amb: f64,
    dt: f64,
    noise_sample: f64,
) -> Result<f64> {
    let tau_s = params.tau() * SECONDS_PER_HOUR;
    if !(dt > 0.0) || dt >= tau_s {
        return Err(PemError::StepTooLarge { dt, tau: tau_s });
    }
    Ok(etp_step_unchecked(params, t_indoor, mode, t_amb, dt, noise_sample))
}

/// [`etp_step`] without the step-size check, for hot loops whose step size was
/// validated up front.
#[inline]
pub fn etp_step_unchecked(
    params: &DeviceParams,
    t_indoor: f64,
    mode: Mode,
    t_amb: f64,
    dt: f64,
    noise_sample: f64,
) -> f64 {
    let dt_h = dt / SECONDS_PER_HOUR;
    let a = dt_h / params.tau();
    (1.0 - a) * t_indoor + a * params.equilibrium(mode, t_amb) + dt_h * noise_sample
}

/// Exact solution of the noise-free ETP ODE after `elapsed` seconds.
pub fn etp_exact(params: &DeviceParams, t0: f64, mode: Mode, t_amb: f64, elapsed: f64) -> f64 {
    let eq = params.equilibrium(mode, t_amb);
    eq + (t0 - eq) * (-(elapsed / SECONDS_PER_HOUR) / params.tau()).exp()
}

/// Time in seconds for the noise-free exact trajectory to travel from `from`
/// to `to` in the given mode, or `None` if `to` is never reached.
pub fn transit_time(params: &DeviceParams, from: f64, to: f64, mode: Mode, t_amb: f64) -> Option<f64> {
    let eq = params.equilibrium(mode, t_amb);
    let num = from - eq;
    let den = to - eq;
    if num == 0.0 {
        return if den == 0.0 { Some(0.0) } else { None };
    }
    let ratio = num / den;
    // `to` must lie between `from` and the equilibrium
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return None;
    }
    Some(params.tau() * ratio.ln() * SECONDS_PER_HOUR)
}

/// Thermostat hysteresis rule.
pub fn hysteresis_next_mode(mode: Mode, t_indoor: f64, band: &ThermalBand) -> Mode {
    match mode {
        Mode::Off if t_indoor >= band.t_max() => Mode::On,
        Mode::On if t_indoor <= band.t_min() => Mode::Off,
        m => m,
    }
}

/// Steady-state ON fraction of a noise-free hysteresis cycle across the deadband.
///
/// Returns 0 when the OFF equilibrium sits at or below `t_max` (the unit never
/// needs to switch on) and an error when the ON equilibrium cannot pull the
/// temperature down to `t_min`.
pub fn analytic_duty_cycle(params: &DeviceParams, band: &ThermalBand, t_amb: f64) -> Result<f64> {
    params.validate()?;
    if t_amb <= band.t_max() {
        return Ok(0.0);
    }
    let on_eq = params.equilibrium(Mode::On, t_amb);
    if on_eq >= band.t_min() {
        return Err(PemError::NonCycling(format!(
            "ON equilibrium {on_eq:.3} °F does not reach t_min {:.3} °F",
            band.t_min()
        )));
    }
    let t_off = transit_time(params, band.t_min(), band.t_max(), Mode::Off, t_amb)
        .ok_or_else(|| PemError::NonCycling("OFF transit undefined".into()))?;
    let t_on = transit_time(params, band.t_max(), band.t_min(), Mode::On, t_amb)
        .ok_or_else(|| PemError::NonCycling("ON transit undefined".into()))?;
    Ok(t_on / (t_on + t_off))
}

/// Checks that a unit with these parameters cycles across the band.
pub fn ensure_cycling(params: &DeviceParams, band: &ThermalBand, t_amb: f64) -> Result<()> {
    if t_amb <= band.t_max() {
        return Err(PemError::NonCycling(format!(
            "ambient {t_amb} °F does not exceed t_max {}",
            band.t_max()
        )));
    }
    if params.equilibrium(Mode::On, t_amb) >= band.t_min() {
        return Err(PemError::NonCycling("ON equilibrium above t_min".into()));
    }
    Ok(())
}
