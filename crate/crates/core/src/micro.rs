//! Agent-based fleet simulation with a request-granting coordinator.
//!
//! Every device owns a ChaCha stream derived from the run seed and its index,
//! and the coordinator draws from a separate stream, so a run is bit-identical
//! whether devices are stepped sequentially or in parallel.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{Grant, MicroDevice, PemConfig, PemMode, Request};
use crate::error::{PemError, Result};
use crate::macro_model::grid::BinGrid;
use crate::macro_model::matrices::{hysteresis_index, MacroMatrices};
use crate::macro_model::sparse::SparseMatrix;
use crate::macro_model::state::stationary_distribution;
use crate::metrics::{BinnedDistribution, TempStats};
use crate::signals::ReferenceSignal;
use crate::thermal::{hysteresis_next_mode, etp_step_unchecked, DeviceParams, Mode, ThermalBand};

/// Relative half-widths of uniform parameter sampling around nominal values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Heterogeneity {
    pub r_eq: f64,
    pub c_eq: f64,
    pub p_rate: f64,
}

impl Heterogeneity {
    pub const NONE: Heterogeneity = Heterogeneity {
        r_eq: 0.0,
        c_eq: 0.0,
        p_rate: 0.0,
    };

    /// Same half-width `h` on R, C and rated power.
    pub fn uniform(h: f64) -> Self {
        Self { r_eq: h, c_eq: h, p_rate: h }
    }

    /// Half-width `h` on the thermal parameters only.
    pub fn thermal(h: f64) -> Self {
        Self {
            r_eq: h,
            c_eq: h,
            p_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, h) in [("r_eq", self.r_eq), ("c_eq", self.c_eq), ("p_rate", self.p_rate)] {
            if !(0.0..1.0).contains(&h) {
                return Err(PemError::InvalidParameter(format!(
                    "heterogeneity of {name} must lie in [0, 1), got {h}"
                )));
            }
        }
        Ok(())
    }

    /// Draws one device's parameters.
    pub fn sample<R: Rng + ?Sized>(&self, nominal: &DeviceParams, rng: &mut R) -> DeviceParams {
        let mut draw = |v: f64, h: f64| {
            if h == 0.0 {
                v
            } else {
                v * rng.random_range(1.0 - h..=1.0 + h)
            }
        };
        DeviceParams {
            r_eq: draw(nominal.r_eq, self.r_eq),
            c_eq: draw(nominal.c_eq, self.c_eq),
            p_rate: draw(nominal.p_rate, self.p_rate),
            ..*nominal
        }
    }
}

/// How device steps are scheduled within a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Data-parallel over devices; identical to sequential when the
    /// `parallel` feature is disabled.
    #[default]
    Parallel,
}

/// Population of devices plus their random streams.
#[derive(Debug, Clone)]
pub struct MicroFleet {
    pub devices: Vec<MicroDevice>,
    pub heterogeneity: Heterogeneity,
    rngs: Vec<ChaCha8Rng>,
    coordinator: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Stream reserved for parameter sampling and initial conditions.
const SETUP_STREAM: u64 = u64::MAX;
/// Stream reserved for the coordinator.
const COORDINATOR_STREAM: u64 = u64::MAX - 1;

impl MicroFleet {
    /// Devices with sampled parameters, all OFF and uniform over the deadband.
    pub fn uniform_off(
        size: usize,
        nominal: &DeviceParams,
        band: ThermalBand,
        heterogeneity: Heterogeneity,
        seed: u64,
    ) -> Result<Self> {
        nominal.validate()?;
        heterogeneity.validate()?;
        let mut setup = stream(seed, SETUP_STREAM);
        let devices = (0..size)
            .map(|_| {
                let params = heterogeneity.sample(nominal, &mut setup);
                let t = setup.random_range(band.t_min()..band.t_max());
                MicroDevice::new(params, band, t, PemMode::OffIdle)
            })
            .collect();
        Ok(Self::from_devices(devices, heterogeneity, seed))
    }

    /// Devices drawn from the aggregate model's steady-state distribution:
    /// state bin from the hysteresis stationary vector, temperature uniform in
    /// the bin, and ON devices at an elapsed packet time consistent with the
    /// timer placement of their bin.
    pub fn steady_state(
        size: usize,
        nominal: &DeviceParams,
        heterogeneity: Heterogeneity,
        mats: &MacroMatrices,
        seed: u64,
    ) -> Result<Self> {
        nominal.validate()?;
        heterogeneity.validate()?;
        let pi = stationary_distribution(&mats.hysteresis, 1e-14)?;
        let pick = WeightedIndex::new(&pi).map_err(|e| PemError::Degenerate(e.to_string()))?;
        let grid = &mats.grid;
        let nb = grid.n_bins;
        let n = mats.n_timer() as u32;
        let mut setup = stream(seed, SETUP_STREAM);
        let devices = (0..size)
            .map(|_| {
                let params = heterogeneity.sample(nominal, &mut setup);
                let s = pick.sample(&mut setup);
                let (on, bin) = (s < nb, s % nb);
                let t = setup.random_range(grid.edge(bin)..grid.edge(bin) + grid.width());
                let mut d = MicroDevice::new(params, grid.band, t, PemMode::OffIdle);
                if on {
                    d.pem_mode = PemMode::OnPacket;
                    d.packet_steps = n;
                    d.packet_elapsed = setup.random_range(mats.placement[bin] as u32 + 1..=n);
                }
                d
            })
            .collect();
        Ok(Self::from_devices(devices, heterogeneity, seed))
    }

    /// Wraps explicit devices, deriving random streams from `seed`.
    pub fn from_devices(devices: Vec<MicroDevice>, heterogeneity: Heterogeneity, seed: u64) -> Self {
        let rngs = (0..devices.len() as u64).map(|i| stream(seed, i)).collect();
        Self {
            devices,
            heterogeneity,
            rngs,
            coordinator: stream(seed, COORDINATOR_STREAM),
        }
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Power of electrically ON devices, kW.
    pub fn aggregate_power(&self) -> f64 {
        self.devices
            .iter()
            .filter(|d| d.pem_mode.electrical() == Mode::On)
            .map(|d| d.params.p_rate)
            .sum()
    }

    pub fn mode_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for d in &self.devices {
            c[match d.pem_mode {
                PemMode::OffIdle => 0,
                PemMode::OnPacket => 1,
                PemMode::OptOutOn => 2,
                PemMode::OptOutOff => 3,
            }] += 1;
        }
        c
    }

    pub fn temperature_moments(&self) -> (f64, f64) {
        if self.devices.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.devices.len() as f64;
        let mean = self.devices.iter().map(|d| d.temperature).sum::<f64>() / n;
        let var = self
            .devices
            .iter()
            .map(|d| (d.temperature - mean) * (d.temperature - mean))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// Fraction of devices per temperature bin, clamped to the grid.
    pub fn temperature_distribution(&self, grid: &BinGrid) -> Vec<f64> {
        let mut d = vec![0.0; grid.n_bins];
        if self.devices.is_empty() {
            return d;
        }
        let w = 1.0 / self.devices.len() as f64;
        for dev in &self.devices {
            d[grid.bin_of(dev.temperature)] += w;
        }
        d
    }
}

/// Granted device indices for one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decision {
    pub on: Vec<usize>,
    pub off: Vec<usize>,
}

/// Greedy random grant selection: when power must rise, grant ON requests in
/// shuffled order while the next grant would not overshoot `p_ref_next`; when
/// it must fall, the same with OFF requests. Never both.
pub fn coordinator_decide<R: Rng + ?Sized>(
    on_requests: &[usize],
    off_requests: &[usize],
    p_agg: f64,
    p_ref_next: f64,
    power_of: impl Fn(usize) -> f64,
    rng: &mut R,
) -> Decision {
    let mut decision = Decision::default();
    let (pool, raise) = if p_ref_next > p_agg {
        (on_requests, true)
    } else if p_ref_next < p_agg {
        (off_requests, false)
    } else {
        return decision;
    };
    let mut order = pool.to_vec();
    order.shuffle(rng);
    let mut gap = (p_ref_next - p_agg).abs();
    let mut granted = Vec::new();
    for id in order {
        let p = power_of(id);
        if p > gap {
            break;
        }
        gap -= p;
        granted.push(id);
    }
    granted.sort_unstable();
    if raise {
        decision.on = granted;
    } else {
        decision.off = granted;
    }
    decision
}

/// Packet-length rule for granted ON requests.
#[derive(Debug, Clone)]
pub enum PacketPolicy {
    /// Nominal length δ; OFF requests may end packets early.
    Pem,
    /// Every packet lasts exactly this many seconds; no OFF requests.
    Fixed(f64),
    /// Lengths drawn from a discrete distribution; no OFF requests.
    Sampled(PacketDistribution),
}

/// Discrete distribution over packet lengths in seconds.
#[derive(Debug, Clone)]
pub struct PacketDistribution {
    lengths: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl PacketDistribution {
    pub fn new(lengths: Vec<f64>, weights: &[f64]) -> Result<Self> {
        if lengths.is_empty() || lengths.len() != weights.len() {
            return Err(PemError::InvalidParameter("empty or mismatched packet distribution".into()));
        }
        let index = WeightedIndex::new(weights).map_err(|e| PemError::InvalidParameter(e.to_string()))?;
        Ok(Self { lengths, index })
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lengths[self.index.sample(rng)]
    }

    pub fn mean(&self) -> f64 {
        let w = self.index.weights().collect::<Vec<_>>();
        let total: f64 = w.iter().sum();
        self.lengths.iter().zip(&w).map(|(l, p)| l * p).sum::<f64>() / total
    }
}

impl PacketPolicy {
    fn validate(&self, cfg: &PemConfig) -> Result<()> {
        let check = |l: f64| {
            if l < cfg.dt || l > cfg.t_on_max + 1e-9 {
                Err(PemError::InvalidParameter(format!(
                    "packet length {l} s outside [{}, {}]",
                    cfg.dt, cfg.t_on_max
                )))
            } else {
                Ok(())
            }
        };
        match self {
            PacketPolicy::Pem => check(cfg.packet_len),
            PacketPolicy::Fixed(l) => check(*l),
            PacketPolicy::Sampled(d) => d.lengths.iter().try_for_each(|l| check(*l)),
        }
    }

    fn off_requests(&self) -> bool {
        matches!(self, PacketPolicy::Pem)
    }
}

/// Aggregate observables of one time step. Index `k` is the state at
/// `k·dt`; request and grant fields describe the control phase that moves it
/// to `k + 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepTrace {
    pub time: f64,
    pub p_agg: f64,
    pub p_ref: f64,
    pub n_req_on: usize,
    pub n_req_off: usize,
    /// Realized fraction of ON requests granted.
    pub beta_on: f64,
    pub beta_off: f64,
    pub optout_fraction: f64,
    pub temp_mean: f64,
    pub temp_std: f64,
    /// Packet lengths (s) that ended during this step's transition.
    pub packet_completions: Vec<f64>,
}

/// Per-step traces plus the fleet's temperature distributions.
#[derive(Debug, Clone, Default)]
pub struct MicroRun {
    pub trace: Vec<StepTrace>,
    pub distribution: BinnedDistribution,
    /// Fraction of devices opted out on the ON side at each sample.
    pub optout_on: Vec<f64>,
}

impl MicroRun {
    pub fn p_agg(&self) -> Vec<f64> {
        self.trace.iter().map(|s| s.p_agg).collect()
    }

    pub fn p_ref(&self) -> Vec<f64> {
        self.trace.iter().map(|s| s.p_ref).collect()
    }

    pub fn temperature_stats(&self) -> TempStats {
        TempStats {
            mean: self.trace.iter().map(|s| s.temp_mean).collect(),
            std: self.trace.iter().map(|s| s.temp_std).collect(),
        }
    }

    /// All completed packets with unit weight.
    pub fn completions(&self) -> Vec<(f64, f64)> {
        self.trace
            .iter()
            .flat_map(|s| s.packet_completions.iter().map(|l| (*l, 1.0)))
            .collect()
    }

    /// Writes the trace with one column per [`StepTrace`] field; packet
    /// completions are `;`-separated.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "time",
            "p_agg",
            "p_ref",
            "n_req_on",
            "n_req_off",
            "beta_on",
            "beta_off",
            "optout_fraction",
            "temp_mean",
            "temp_std",
            "packet_completions",
        ])?;
        for s in &self.trace {
            let packets = s
                .packet_completions
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                s.time.to_string(),
                s.p_agg.to_string(),
                s.p_ref.to_string(),
                s.n_req_on.to_string(),
                s.n_req_off.to_string(),
                s.beta_on.to_string(),
                s.beta_off.to_string(),
                s.optout_fraction.to_string(),
                s.temp_mean.to_string(),
                s.temp_std.to_string(),
                packets,
            ])?;
        }
        w.flush().map_err(|e| PemError::io(path, e))
    }
}

/// Run-wide settings of the agent simulation.
#[derive(Debug, Clone, Copy)]
pub struct MicroSettings {
    pub t_amb: f64,
    pub execution: Execution,
    /// Bins on which temperature distributions are recorded.
    pub grid: BinGrid,
}

/// PEM loop with OFF requests and nominal packet length.
pub fn simulate_micro(
    fleet: &mut MicroFleet,
    cfg: &PemConfig,
    signal: &ReferenceSignal,
    settings: &MicroSettings,
) -> Result<MicroRun> {
    run_fleet(fleet, cfg, signal, settings, &PacketPolicy::Pem)
}

/// Conventional PEM: no OFF requests, packet length from `policy`.
pub fn run_conventional_pem(
    fleet: &mut MicroFleet,
    cfg: &PemConfig,
    signal: &ReferenceSignal,
    settings: &MicroSettings,
    policy: &PacketPolicy,
) -> Result<MicroRun> {
    if matches!(policy, PacketPolicy::Pem) {
        return Err(PemError::InvalidParameter(
            "conventional PEM needs a fixed or sampled packet policy".into(),
        ));
    }
    run_fleet(fleet, cfg, signal, settings, policy)
}

fn run_fleet(
    fleet: &mut MicroFleet,
    cfg: &PemConfig,
    signal: &ReferenceSignal,
    settings: &MicroSettings,
    policy: &PacketPolicy,
) -> Result<MicroRun> {
    cfg.validate()?;
    policy.validate(cfg)?;
    if (signal.dt() - cfg.dt).abs() > 1e-9 {
        return Err(PemError::Signal(format!(
            "reference sampled every {} s but devices step {} s",
            signal.dt(),
            cfg.dt
        )));
    }
    let off_requests = policy.off_requests();
    let nominal_steps = cfg.to_steps(cfg.packet_len);
    let p_ref = signal.power();
    let size = fleet.len().max(1) as f64;
    let mut run = MicroRun::default();
    let mut requests = vec![Request::None; fleet.len()];
    let mut grants = vec![Grant::None; fleet.len()];

    for k in 0..p_ref.len() {
        let p_agg = fleet.aggregate_power();
        let (temp_mean, temp_std) = fleet.temperature_moments();
        let counts = fleet.mode_counts();
        let mut step = StepTrace {
            time: signal.time(k),
            p_agg,
            p_ref: p_ref[k],
            optout_fraction: (counts[2] + counts[3]) as f64 / size,
            temp_mean,
            temp_std,
            ..StepTrace::default()
        };
        run.distribution.steps.push(fleet.temperature_distribution(&settings.grid));
        run.optout_on.push(counts[2] as f64 / size);
        if k + 1 == p_ref.len() {
            run.trace.push(step);
            break;
        }

        sample_requests(fleet, cfg, off_requests, &mut requests, settings.execution);
        let mut on_ids = Vec::new();
        let mut off_ids = Vec::new();
        let mut committed = p_agg;
        for (i, (d, r)) in fleet.devices.iter().zip(&requests).enumerate() {
            match r {
                Request::On => on_ids.push(i),
                Request::Off => off_ids.push(i),
                Request::None => {}
            }
            if d.packet_expiring() {
                committed -= d.params.p_rate;
            }
        }
        let devices = &fleet.devices;
        let decision = coordinator_decide(
            &on_ids,
            &off_ids,
            committed,
            p_ref[k + 1],
            |i| devices[i].params.p_rate,
            &mut fleet.coordinator,
        );
        grants.iter_mut().for_each(|g| *g = Grant::None);
        for &i in &decision.on {
            let steps = match policy {
                PacketPolicy::Pem => nominal_steps,
                PacketPolicy::Fixed(l) => cfg.to_steps(*l),
                PacketPolicy::Sampled(d) => cfg.to_steps(d.sample(&mut fleet.coordinator)),
            };
            grants[i] = Grant::On { packet_steps: steps };
        }
        for &i in &decision.off {
            grants[i] = Grant::Off;
        }
        step.n_req_on = on_ids.len();
        step.n_req_off = off_ids.len();
        step.beta_on = ratio(decision.on.len(), on_ids.len());
        step.beta_off = ratio(decision.off.len(), off_ids.len());
        step.packet_completions = step_devices(fleet, &requests, &grants, cfg, settings);
        run.trace.push(step);
    }
    Ok(run)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn sample_requests(
    fleet: &mut MicroFleet,
    cfg: &PemConfig,
    off_requests: bool,
    out: &mut [Request],
    execution: Execution,
) {
    let sample = |(d, rng, r): (&MicroDevice, &mut ChaCha8Rng, &mut Request)| {
        let u: f64 = rng.random();
        *r = d.sample_request(cfg, off_requests, u);
    };
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            fleet
                .devices
                .par_iter()
                .zip(fleet.rngs.par_iter_mut())
                .zip(out.par_iter_mut())
                .for_each(|((d, rng), r)| sample((d, rng, r)));
        }
        _ => fleet
            .devices
            .iter()
            .zip(fleet.rngs.iter_mut())
            .zip(out.iter_mut())
            .for_each(|((d, rng), r)| sample((d, rng, r))),
    }
}

fn step_devices(
    fleet: &mut MicroFleet,
    requests: &[Request],
    grants: &[Grant],
    cfg: &PemConfig,
    settings: &MicroSettings,
) -> Vec<f64> {
    let t_amb = settings.t_amb;
    let advance = |(d, rng): (&mut MicroDevice, &mut ChaCha8Rng), r: Request, g: Grant| {
        d.step(r, g, cfg, t_amb, rng).completed_packet
    };
    let completed: Vec<Option<f64>> = match settings.execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            fleet
                .devices
                .par_iter_mut()
                .zip(fleet.rngs.par_iter_mut())
                .zip(requests.par_iter().zip(grants.par_iter()))
                .map(|(dr, (r, g))| advance(dr, *r, *g))
                .collect()
        }
        _ => fleet
            .devices
            .iter_mut()
            .zip(fleet.rngs.iter_mut())
            .zip(requests.iter().zip(grants))
            .map(|(dr, (r, g))| advance(dr, *r, *g))
            .collect(),
    };
    completed.into_iter().flatten().collect()
}

/// ON fraction over time of a fleet under plain thermostat control.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisRun {
    pub on_fraction: Vec<f64>,
}

impl HysteresisRun {
    /// Mean ON fraction after discarding the first `skip` samples.
    pub fn mean_duty(&self, skip: usize) -> f64 {
        let tail = &self.on_fraction[skip.min(self.on_fraction.len())..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Homogeneous fleet cycling under hysteresis only, started at uniformly
/// random temperatures and modes. `visit` sees every transition
/// `(mode, T) → (mode', T')`.
pub fn simulate_hysteresis(
    params: &DeviceParams,
    band: &ThermalBand,
    t_amb: f64,
    dt: f64,
    devices: usize,
    horizon_s: f64,
    seed: u64,
    mut visit: impl FnMut((Mode, f64), (Mode, f64)),
) -> Result<HysteresisRun> {
    params.validate()?;
    crate::thermal::ensure_cycling(params, band, t_amb)?;
    if devices == 0 {
        return Err(PemError::InvalidParameter("hysteresis run needs devices".into()));
    }
    let mut rng = stream(seed, SETUP_STREAM);
    let mut state: Vec<(Mode, f64)> = (0..devices)
        .map(|_| {
            let mode = if rng.random_bool(0.5) { Mode::On } else { Mode::Off };
            (mode, rng.random_range(band.t_min()..band.t_max()))
        })
        .collect();
    let steps = (horizon_s / dt).round() as usize;
    let mut on_fraction = Vec::with_capacity(steps + 1);
    let noise_sd = params.step_noise_std(dt) / (dt / crate::thermal::SECONDS_PER_HOUR);
    for _ in 0..=steps {
        let on = state.iter().filter(|(m, _)| m.is_on()).count();
        on_fraction.push(on as f64 / devices as f64);
        for s in state.iter_mut() {
            let noise = if noise_sd > 0.0 {
                noise_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                0.0
            };
            let t_next = etp_step_unchecked(params, s.1, s.0, t_amb, dt, noise);
            let m_next = hysteresis_next_mode(s.0, s.1, band);
            visit(*s, (m_next, t_next));
            *s = (m_next, t_next);
        }
    }
    Ok(HysteresisRun { on_fraction })
}

/// Hysteresis transition frequencies counted from an agent run. States never
/// visited keep their mass.
pub fn empirical_hysteresis_matrix(
    params: &DeviceParams,
    grid: &BinGrid,
    t_amb: f64,
    dt: f64,
    devices: usize,
    horizon_s: f64,
    seed: u64,
) -> Result<SparseMatrix> {
    let n = grid.n_bins;
    let mut counts = vec![vec![0u64; 2 * n]; 2 * n];
    simulate_hysteresis(params, &grid.band, t_amb, dt, devices, horizon_s, seed, |from, to| {
        let a = hysteresis_index(n, from.0, grid.bin_of(from.1));
        let b = hysteresis_index(n, to.0, grid.bin_of(to.1));
        counts[a][b] += 1;
    })?;
    let mut m = SparseMatrix::zeros(2 * n);
    for (col, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            m.add(col, col, 1.0);
            continue;
        }
        for (to, c) in row.iter().enumerate() {
            if *c > 0 {
                m.add(to, col, *c as f64 / total as f64);
            }
        }
    }
    Ok(m)
}
