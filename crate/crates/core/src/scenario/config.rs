//! Scenario configuration read from TOML with dotted keys, e.g.
//!
//! ```toml
//! seed = 7
//! fleet.size = 2000
//! fleet.heterogeneity = 0.05
//! signal.kind = "sinusoid"
//! pem.mttr_on = 300
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::PemConfig;
use crate::error::{PemError, Result};
use crate::macro_model::grid::BinGrid;
use crate::micro::Heterogeneity;
use crate::signals::{load_and_scale_signal, sinusoid_with, synth_regd_scaled, ReferenceSignal, SignalScale, Sinusoid};
use crate::thermal::{DeviceParams, ThermalBand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub size: usize,
    /// Relative half-width of uniform sampling of R and C.
    pub heterogeneity: f64,
    /// Also sample rated power with the same half-width.
    pub vary_power: bool,
    /// Step devices in parallel.
    pub parallel: bool,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            heterogeneity: 0.05,
            vary_power: false,
            parallel: true,
        }
    }
}

impl FleetConfig {
    pub fn heterogeneity(&self) -> Heterogeneity {
        if self.vary_power {
            Heterogeneity::uniform(self.heterogeneity)
        } else {
            Heterogeneity::thermal(self.heterogeneity)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub r_eq: f64,
    pub c_eq: f64,
    pub eta: f64,
    pub p_rate: f64,
    /// Standard deviation of the per-step temperature disturbance in the agent
    /// model, °F.
    pub noise_step_std: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let d = DeviceParams::default();
        Self {
            r_eq: d.r_eq,
            c_eq: d.c_eq,
            eta: d.eta,
            p_rate: d.p_rate,
            noise_step_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub t_set: f64,
    pub deadband: f64,
    pub ambient: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            t_set: 73.0,
            deadband: 2.0,
            ambient: 89.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Sinusoid,
    Synth,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub kind: SignalKind,
    /// File read when `kind = "file"`; relative paths resolve against the
    /// config file's directory.
    pub path: Option<PathBuf>,
    pub target_mean_kw: f64,
    pub amplitude_kw: f64,
    pub period_s: f64,
    /// Seed of the synthetic regulation signal; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SignalConfig {
    fn default() -> Self {
        let s = Sinusoid::default();
        Self {
            kind: SignalKind::Sinusoid,
            path: None,
            target_mean_kw: s.offset_kw,
            amplitude_kw: s.amplitude_kw,
            period_s: s.period_s,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    /// Heterogeneity half-widths swept.
    pub grid: Vec<f64>,
    pub seeds_per_point: usize,
    /// Fleet size of each sub-run.
    pub fleet_size: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            grid: (0..=10).map(|i| i as f64 * 0.02).collect(),
            seeds_per_point: 3,
            fleet_size: 1000,
        }
    }
}

/// Thresholds of the tracking-loss event detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventConfig {
    /// Rolling RMS window, s.
    pub window_s: f64,
    /// RMS tracking error declaring loss, as a fraction of `nominal_kw`.
    pub loss_fraction: f64,
    /// Opt-out fraction that counts as a surge.
    pub surge_fraction: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            window_s: 60.0,
            loss_fraction: 0.10,
            surge_fraction: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub horizon_s: f64,
    /// Power used to express RMSE as a percentage, kW.
    pub nominal_kw: f64,
    pub bins: usize,
    /// Packet-length histogram bin width, s.
    pub packet_bin_s: f64,
    pub output_dir: PathBuf,
    pub fleet: FleetConfig,
    pub device: DeviceConfig,
    pub band: BandConfig,
    pub pem: PemConfig,
    pub signal: SignalConfig,
    pub robustness: RobustnessConfig,
    pub event: EventConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon_s: 3600.0,
            nominal_kw: 1800.0,
            bins: 40,
            packet_bin_s: 10.0,
            output_dir: PathBuf::from("out"),
            fleet: FleetConfig::default(),
            device: DeviceConfig::default(),
            band: BandConfig::default(),
            pem: PemConfig::default(),
            signal: SignalConfig::default(),
            robustness: RobustnessConfig::default(),
            event: EventConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl ScenarioConfig {
    /// Defaults of the sinusoid validation experiment.
    pub fn validation() -> Self {
        Self::default()
    }

    /// Defaults of the regulation tracking experiment.
    pub fn tracking() -> Self {
        Self {
            fleet: FleetConfig {
                size: 1000,
                ..FleetConfig::default()
            },
            signal: SignalConfig {
                kind: SignalKind::Synth,
                amplitude_kw: 900.0,
                ..SignalConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PemError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PemError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    /// SHA-256 of the serialized config with the output directory blanked,
    /// so the same experiment written to two places hashes the same.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PemError::Config(m));
        if !(self.horizon_s > 0.0) {
            return bad(format!("horizon_s must be positive, got {}", self.horizon_s));
        }
        if !(self.nominal_kw > 0.0) {
            return bad("nominal_kw must be positive".into());
        }
        if !(self.packet_bin_s > 0.0) {
            return bad("packet_bin_s must be positive".into());
        }
        if self.fleet.size == 0 {
            return bad("fleet.size must be positive".into());
        }
        if self.signal.kind == SignalKind::File && self.signal.path.is_none() {
            return bad("signal.kind = \"file\" needs signal.path".into());
        }
        if self.robustness.seeds_per_point == 0 || self.robustness.grid.is_empty() {
            return bad("robustness needs a non-empty grid and at least one seed".into());
        }
        self.params()?.validate().map_err(config_err)?;
        self.band()?;
        self.pem.validate().map_err(config_err)?;
        self.fleet.heterogeneity().validate().map_err(config_err)?;
        for h in &self.robustness.grid {
            Heterogeneity::uniform(*h).validate().map_err(config_err)?;
        }
        BinGrid::new(self.bins, self.band()?).map_err(config_err)?;
        Ok(())
    }

    fn check_files(&self) -> Result<()> {
        if let (SignalKind::File, Some(p)) = (self.signal.kind, &self.signal.path) {
            let full = self.base_dir.join(p);
            if !full.is_file() {
                return Err(PemError::Config(format!("signal file {} not found", full.display())));
            }
        }
        Ok(())
    }

    /// Nominal device parameters including the agent-model noise.
    pub fn params(&self) -> Result<DeviceParams> {
        Ok(DeviceParams {
            r_eq: self.device.r_eq,
            c_eq: self.device.c_eq,
            eta: self.device.eta,
            p_rate: self.device.p_rate,
            noise_std: DeviceParams::noise_for_step_std(self.device.noise_step_std, self.pem.dt),
        })
    }

    pub fn band(&self) -> Result<ThermalBand> {
        ThermalBand::new(self.band.t_set, self.band.deadband).map_err(config_err)
    }

    pub fn grid(&self) -> Result<BinGrid> {
        BinGrid::new(self.bins, self.band()?)
    }

    /// Reference signal sampled at the control step over the horizon.
    pub fn reference(&self) -> Result<ReferenceSignal> {
        let s = &self.signal;
        let dt = self.pem.dt;
        let scale = SignalScale {
            target_mean_kw: s.target_mean_kw,
            amplitude_kw: s.amplitude_kw,
        };
        let full = match s.kind {
            SignalKind::Sinusoid => sinusoid_with(
                &Sinusoid {
                    amplitude_kw: s.amplitude_kw,
                    offset_kw: s.target_mean_kw,
                    period_s: s.period_s,
                },
                self.horizon_s,
                dt,
            )?,
            SignalKind::Synth => synth_regd_scaled(self.horizon_s, dt, s.seed.unwrap_or(self.seed), &scale)?,
            SignalKind::File => {
                let p = self.base_dir.join(s.path.as_ref().expect("validated"));
                load_and_scale_signal(&p, &scale, dt)?
            }
        };
        let keep = ((self.horizon_s / dt).round() as usize + 1).min(full.len());
        ReferenceSignal::new(0.0, dt, full.power()[..keep].to_vec())
    }
}

fn config_err(e: PemError) -> PemError {
    match e {
        PemError::Config(_) => e,
        other => PemError::Config(other.to_string()),
    }
}
