//! Per-device packetized energy management logic: probabilistic ON/OFF
//! requests, packet timers, lockout, denial backoff and the opt-out state
//! machine.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PemError, Result};
use crate::thermal::{etp_step_unchecked, DeviceParams, Mode, ThermalBand};

/// Timing and request-rate configuration shared by every device and by the
/// aggregate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PemConfig {
    /// Nominal packet length δ, s.
    pub packet_len: f64,
    /// Control time step, s.
    pub dt: f64,
    /// Mean time to request for ON requests, s.
    pub mttr_on: f64,
    /// Mean time to request for OFF requests, s.
    pub mttr_off: f64,
    /// Compressor lockout (minimum ON time before an OFF request), s.
    pub t_lockout: f64,
    /// Longest admissible packet, s.
    pub t_on_max: f64,
    /// Depth inside the violated deadband edge at which opted-out devices
    /// rejoin, °F.
    pub optout_reentry: f64,
    /// When set, a denied request blocks further requests of the same type for
    /// one MTTR.
    pub denial_backoff: bool,
}

impl Default for PemConfig {
    fn default() -> Self {
        Self {
            packet_len: 300.0,
            dt: 2.0,
            mttr_on: 300.0,
            mttr_off: 120.0,
            t_lockout: 60.0,
            t_on_max: 300.0,
            optout_reentry: 0.25,
            denial_backoff: false,
        }
    }
}

impl PemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PemError::InvalidParameter(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_lockout > 0.0 && self.t_lockout < self.packet_len && self.packet_len <= self.t_on_max) {
            return bad(format!(
                "need 0 < t_lockout < packet_len <= t_on_max (got {}, {}, {})",
                self.t_lockout, self.packet_len, self.t_on_max
            ));
        }
        if !(self.mttr_on > 0.0 && self.mttr_off > 0.0) {
            return bad("MTTR values must be positive".into());
        }
        if !(self.optout_reentry >= 0.0) {
            return bad("optout_reentry must be non-negative".into());
        }
        Ok(())
    }

    /// ON request rate, Hz.
    #[inline]
    pub fn m_r_on(&self) -> f64 {
        1.0 / self.mttr_on
    }

    /// OFF request rate, Hz.
    #[inline]
    pub fn m_r_off(&self) -> f64 {
        1.0 / self.mttr_off
    }

    /// Number of timer bins, ⌈δ/Δt⌉.
    pub fn n_timer_bins(&self) -> usize {
        steps_ceil(self.packet_len, self.dt)
    }

    /// Smallest timer index r with r·Δt ≥ t_lockout.
    pub fn lockout_bin(&self) -> usize {
        steps_ceil(self.t_lockout, self.dt)
    }

    /// Converts a duration to a whole number of steps, rounding to nearest.
    pub fn to_steps(&self, seconds: f64) -> u32 {
        (seconds / self.dt).round().max(0.0) as u32
    }
}

fn steps_ceil(seconds: f64, dt: f64) -> usize {
    let x = seconds / dt;
    // tolerate representation error when seconds is a multiple of dt
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Temperature-dependent ON request rate in Hz; `f64::INFINITY` at or above
/// `t_max`.
pub fn mu_on(temperature: f64, band: &ThermalBand, m_r_on: f64) -> f64 {
    let (lo, hi) = (band.t_min(), band.t_max());
    if temperature <= lo {
        0.0
    } else if temperature >= hi {
        f64::INFINITY
    } else {
        (temperature - lo) / (hi - temperature) * m_r_on
    }
}

/// Probability of issuing an ON request within one step of `dt` seconds.
pub fn p_req_on(temperature: f64, band: &ThermalBand, m_r_on: f64, dt: f64) -> f64 {
    let mu = mu_on(temperature, band, m_r_on);
    if mu.is_infinite() {
        return 1.0;
    }
    (1.0 - (-mu * dt).exp()).clamp(0.0, 1.0)
}

/// OFF request probability for a device in timer bin `r` (elapsed r·Δt).
///
/// Zero through the lockout bin `r_lo`, certain at the final bin `n`
/// (expiry), and `1 − exp(−μ Δt)` with `μ = (r − r_lo)/(n − r)·m_r_off` in
/// between. Shared by the agent and aggregate models.
pub fn off_request_probability(r: usize, r_lo: usize, n: usize, m_r_off: f64, dt: f64) -> f64 {
    if r <= r_lo {
        0.0
    } else if r >= n {
        1.0
    } else {
        let mu = (r - r_lo) as f64 / (n - r) as f64 * m_r_off;
        (1.0 - (-mu * dt).exp()).clamp(0.0, 1.0)
    }
}

/// OFF request probability of an ON device given its elapsed packet time.
pub fn p_req_off_micro(packet_elapsed: f64, cfg: &PemConfig, n_timer_bins: usize) -> f64 {
    if packet_elapsed <= cfg.t_lockout {
        return 0.0;
    }
    let r = (packet_elapsed / cfg.dt).round() as usize;
    off_request_probability(r, cfg.lockout_bin(), n_timer_bins, cfg.m_r_off(), cfg.dt)
}

/// PEM state of a single device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PemMode {
    OffIdle,
    OnPacket,
    OptOutOn,
    OptOutOff,
}

impl PemMode {
    /// Whether the compressor draws power in this state.
    #[inline]
    pub fn electrical(self) -> Mode {
        match self {
            PemMode::OnPacket | PemMode::OptOutOn => Mode::On,
            PemMode::OffIdle | PemMode::OptOutOff => Mode::Off,
        }
    }

    #[inline]
    pub fn is_opted_out(self) -> bool {
        matches!(self, PemMode::OptOutOn | PemMode::OptOutOff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Request {
    None,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grant {
    None,
    /// Accepted ON request with the packet length to run, in steps.
    On { packet_steps: u32 },
    Off,
}

/// One agent of the micro model.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroDevice {
    pub params: DeviceParams,
    pub band: ThermalBand,
    pub temperature: f64,
    pub pem_mode: PemMode,
    /// Steps spent in the current packet; meaningful only in `OnPacket`.
    pub packet_elapsed: u32,
    /// Length of the current packet in steps.
    pub packet_steps: u32,
    /// Steps left before the device may request again.
    pub backoff_remaining: u32,
}

/// What happened to a device during one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    /// Length in seconds of a packet that ended this step under PEM control
    /// (accepted OFF request or expiry).
    pub completed_packet: Option<f64>,
    pub entered_optout: bool,
    pub reentered: bool,
}

impl MicroDevice {
    pub fn new(params: DeviceParams, band: ThermalBand, temperature: f64, pem_mode: PemMode) -> Self {
        Self {
            params,
            band,
            temperature,
            pem_mode,
            packet_elapsed: 0,
            packet_steps: 0,
            backoff_remaining: 0,
        }
    }

    /// Packet expires at the next control phase.
    #[inline]
    pub fn packet_expiring(&self) -> bool {
        self.pem_mode == PemMode::OnPacket && self.packet_elapsed >= self.packet_steps
    }

    /// Probability of the request this device would issue now, and its type.
    pub fn request_probability(&self, cfg: &PemConfig, off_requests: bool) -> (Request, f64) {
        if self.backoff_remaining > 0 {
            return (Request::None, 0.0);
        }
        match self.pem_mode {
            PemMode::OffIdle => (Request::On, p_req_on(self.temperature, &self.band, cfg.m_r_on(), cfg.dt)),
            PemMode::OnPacket if off_requests && !self.packet_expiring() => {
                let elapsed = self.packet_elapsed as f64 * cfg.dt;
                (
                    Request::Off,
                    p_req_off_micro(elapsed, cfg, self.packet_steps.max(1) as usize),
                )
            }
            _ => (Request::None, 0.0),
        }
    }

    /// Samples this step's request from a uniform draw `u ∈ [0, 1)`.
    pub fn sample_request(&self, cfg: &PemConfig, off_requests: bool, u: f64) -> Request {
        let (kind, p) = self.request_probability(cfg, off_requests);
        if kind != Request::None && u < p {
            kind
        } else {
            Request::None
        }
    }

    /// Applies the coordinator's decision, advances the temperature one step
    /// and resolves opt-out entry and re-entry.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        request: Request,
        grant: Grant,
        cfg: &PemConfig,
        t_amb: f64,
        rng: &mut R,
    ) -> StepOutcome {
        let mut out = StepOutcome::default();
        self.backoff_remaining = self.backoff_remaining.saturating_sub(1);

        match self.pem_mode {
            PemMode::OffIdle => match grant {
                Grant::On { packet_steps } => {
                    self.pem_mode = PemMode::OnPacket;
                    self.packet_elapsed = 0;
                    self.packet_steps = packet_steps.max(1);
                    self.backoff_remaining = 0;
                }
                _ if request == Request::On && cfg.denial_backoff => {
                    self.backoff_remaining = cfg.to_steps(cfg.mttr_on);
                }
                _ => {}
            },
            PemMode::OnPacket => {
                if grant == Grant::Off || self.packet_expiring() {
                    out.completed_packet = Some(self.packet_elapsed as f64 * cfg.dt);
                    self.pem_mode = PemMode::OffIdle;
                    self.backoff_remaining = 0;
                } else if request == Request::Off && cfg.denial_backoff {
                    self.backoff_remaining = cfg.to_steps(cfg.mttr_off);
                }
            }
            PemMode::OptOutOn | PemMode::OptOutOff => {}
        }

        let noise = if self.params.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            // held over the step so that dt·w has the configured per-step std
            z * self.params.step_noise_std(cfg.dt) / (cfg.dt / crate::thermal::SECONDS_PER_HOUR)
        } else {
            0.0
        };
        self.temperature = etp_step_unchecked(
            &self.params,
            self.temperature,
            self.pem_mode.electrical(),
            t_amb,
            cfg.dt,
            noise,
        );
        if self.pem_mode == PemMode::OnPacket {
            self.packet_elapsed += 1;
        }

        let (lo, hi) = (self.band.t_min(), self.band.t_max());
        match self.pem_mode {
            PemMode::OptOutOn if self.temperature <= hi - cfg.optout_reentry => {
                self.pem_mode = PemMode::OffIdle;
                out.reentered = true;
            }
            PemMode::OptOutOff if self.temperature >= lo + cfg.optout_reentry => {
                self.pem_mode = PemMode::OffIdle;
                out.reentered = true;
            }
            PemMode::OffIdle | PemMode::OnPacket if self.temperature >= hi => {
                self.pem_mode = PemMode::OptOutOn;
                self.backoff_remaining = 0;
                out.entered_optout = true;
            }
            PemMode::OffIdle | PemMode::OnPacket if self.temperature <= lo => {
                self.pem_mode = PemMode::OptOutOff;
                self.backoff_remaining = 0;
                out.entered_optout = true;
            }
            _ => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dev(t: f64, mode: PemMode) -> MicroDevice {
        MicroDevice::new(DeviceParams::default(), ThermalBand::default(), t, mode)
    }

    #[test]
    fn config_defaults_valid_and_derived() {
        let c = PemConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_timer_bins(), 150);
        assert_eq!(c.lockout_bin(), 30);
        assert!((c.m_r_on() - 1.0 / 300.0).abs() < 1e-15);
        let bad = PemConfig { t_lockout: 400.0, ..c };
        assert!(bad.validate().is_err());
        let bad = PemConfig { packet_len: 400.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mu_on_cases() {
        let b = ThermalBand::default();
        let m = 1.0 / 300.0;
        assert_eq!(mu_on(b.t_min(), &b, m), 0.0);
        assert!((mu_on(73.0, &b, m) - m).abs() < 1e-15);
        assert!(mu_on(b.t_max(), &b, m).is_infinite());
    }

    #[test]
    fn p_req_on_cases() {
        let b = ThermalBand::default();
        let m = 1.0 / 300.0;
        assert_eq!(p_req_on(71.0, &b, m, 2.0), 0.0);
        assert_eq!(p_req_on(74.0, &b, m, 2.0), 1.0);
        assert_eq!(p_req_on(75.0, &b, m, 2.0), 1.0);
        let p = p_req_on(73.0, &b, m, 2.0);
        assert!((p - (1.0 - (-2.0f64 / 300.0).exp())).abs() < 1e-15);
        assert!((p - 0.006645).abs() < 1e-6);
    }

    #[test]
    fn p_req_off_cases() {
        let c = PemConfig::default();
        let n = c.n_timer_bins();
        assert_eq!(p_req_off_micro(10.0, &c, n), 0.0);
        assert_eq!(p_req_off_micro(60.0, &c, n), 0.0);
        // r = r_lo exactly is still locked out; one step later is positive
        assert!(p_req_off_micro(62.0, &c, n) > 0.0);
        assert_eq!(p_req_off_micro(300.0, &c, n), 1.0);
        let mut prev = 0.0;
        for r in 31..150 {
            let p = off_request_probability(r, 30, 150, c.m_r_off(), c.dt);
            assert!(p >= prev);
            prev = p;
        }
        assert_eq!(off_request_probability(30, 30, 150, c.m_r_off(), c.dt), 0.0);
    }

    #[test]
    fn off_idle_at_t_max_opts_out() {
        let c = PemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = dev(74.0, PemMode::OffIdle);
        let req = d.sample_request(&c, true, 0.5);
        assert_eq!(req, Request::On);
        let out = d.step(req, Grant::None, &c, 89.0, &mut rng);
        assert_eq!(d.pem_mode, PemMode::OptOutOn);
        assert!(out.entered_optout);
    }

    #[test]
    fn expiry_ends_packet_regardless_of_grants() {
        let c = PemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = dev(73.0, PemMode::OnPacket);
        d.packet_steps = 150;
        d.packet_elapsed = 150;
        assert!(d.packet_expiring());
        assert_eq!(d.sample_request(&c, true, 0.0), Request::None);
        let out = d.step(Request::None, Grant::None, &c, 89.0, &mut rng);
        assert_eq!(d.pem_mode, PemMode::OffIdle);
        assert_eq!(out.completed_packet, Some(300.0));
    }

    #[test]
    fn optout_on_reenters_after_cooling() {
        let c = PemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = dev(74.01, PemMode::OptOutOn);
        let mut steps = 0;
        while d.pem_mode == PemMode::OptOutOn {
            assert_eq!(d.sample_request(&c, true, 0.0), Request::None);
            d.step(Request::None, Grant::None, &c, 89.0, &mut rng);
            steps += 1;
            assert!(steps < 1000);
        }
        assert_eq!(d.pem_mode, PemMode::OffIdle);
        assert!(d.temperature <= 74.0 - c.optout_reentry);
        // about 0.26 °F at 8.1 °F/h
        assert!((50..70).contains(&steps), "{steps}");
    }

    #[test]
    fn on_packet_cooling_to_t_min_opts_out_off() {
        let c = PemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = dev(72.002, PemMode::OnPacket);
        d.packet_steps = 150;
        d.step(Request::None, Grant::None, &c, 89.0, &mut rng);
        assert_eq!(d.pem_mode, PemMode::OptOutOff);
        assert_eq!(d.pem_mode.electrical(), Mode::Off);
    }

    #[test]
    fn granted_on_starts_packet_and_denial_sets_backoff() {
        let c = PemConfig {
            denial_backoff: true,
            ..PemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = dev(73.5, PemMode::OffIdle);
        d.step(Request::On, Grant::None, &c, 89.0, &mut rng);
        assert_eq!(d.backoff_remaining, 150);
        assert_eq!(d.sample_request(&c, true, 0.0), Request::None);
        let mut d = dev(73.5, PemMode::OffIdle);
        d.step(Request::On, Grant::On { packet_steps: 150 }, &c, 89.0, &mut rng);
        assert_eq!(d.pem_mode, PemMode::OnPacket);
        assert_eq!(d.packet_elapsed, 1);
        assert!(d.temperature < 73.5);
    }

    #[test]
    fn no_off_request_inside_lockout() {
        let c = PemConfig::default();
        let mut d = dev(73.5, PemMode::OnPacket);
        d.packet_steps = 150;
        for e in 0..=30 {
            d.packet_elapsed = e;
            assert_eq!(d.request_probability(&c, true).1, 0.0);
        }
        d.packet_elapsed = 31;
        assert!(d.request_probability(&c, true).1 > 0.0);
        assert_eq!(d.request_probability(&c, false).0, Request::None);
    }
}
