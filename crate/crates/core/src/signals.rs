//! Reference power signals: generation, CSV ingestion, scaling and persistence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PemError, Result};

/// Uniformly sampled power trajectory starting at `t0` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    t0: f64,
    dt: f64,
    power: Vec<f64>,
}

impl ReferenceSignal {
    pub fn new(t0: f64, dt: f64, power: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(PemError::Signal(format!("resolution must be positive, got {dt}")));
        }
        if power.is_empty() {
            return Err(PemError::Signal("signal has no samples".into()));
        }
        if let Some(p) = power.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(PemError::Signal(format!("power must be finite and non-negative, got {p}")));
        }
        Ok(Self { t0, dt, power })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.power.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    #[inline]
    pub fn power(&self) -> &[f64] {
        &self.power
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Duration covered by the samples.
    pub fn horizon(&self) -> f64 {
        (self.power.len() - 1) as f64 * self.dt
    }

    pub fn mean(&self) -> f64 {
        self.power.iter().sum::<f64>() / self.power.len() as f64
    }

    /// Writes `time_s,power` CSV with shortest round-trip float formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| PemError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| PemError::io(path, e);
        writeln!(w, "time_s,power").map_err(io)?;
        for (k, p) in self.power.iter().enumerate() {
            writeln!(w, "{},{}", self.time(k), p).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a `time_s,power` CSV exactly as written; spacing must be uniform.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let (times, values) = read_two_column(path)?;
        if times.len() < 2 {
            return Err(PemError::Signal("need at least two samples".into()));
        }
        let dt = times[1] - times[0];
        for (k, t) in times.iter().enumerate() {
            let expected = times[0] + k as f64 * dt;
            if (t - expected).abs() > 1e-9 * dt.max(1.0) {
                return Err(PemError::Signal(format!("non-uniform spacing at row {}", k + 1)));
            }
        }
        Self::new(times[0], dt, values)
    }
}

fn read_two_column(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => PemError::Signal(format!("cannot open {}: {e}", path.display())),
            _ => PemError::Csv(e),
        })?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(PemError::Signal(format!("row {}: expected 2 columns, got {}", row + 1, rec.len())));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| PemError::Signal(format!("row {}: cannot parse {s:?}", row + 1)))
        };
        let t = parse(&rec[0])?;
        let v = parse(&rec[1])?;
        if !t.is_finite() || !v.is_finite() {
            return Err(PemError::Signal(format!("row {}: non-finite value", row + 1)));
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(PemError::Signal(format!("row {}: time not strictly increasing", row + 1)));
            }
        }
        times.push(t);
        values.push(v);
    }
    if times.is_empty() {
        return Err(PemError::Signal(format!("{} has no data rows", path.display())));
    }
    Ok((times, values))
}

/// Sinusoidal reference `offset + amplitude·sin(2πt/period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sinusoid {
    pub amplitude_kw: f64,
    pub offset_kw: f64,
    pub period_s: f64,
}

impl Default for Sinusoid {
    fn default() -> Self {
        Self {
            amplitude_kw: 1000.0,
            offset_kw: 1800.0,
            period_s: 240.0,
        }
    }
}

fn sample_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(PemError::Signal(format!("horizon and dt must be positive ({horizon}, {dt})")));
    }
    Ok((horizon / dt).round() as usize + 1)
}

/// `1000·sin(πt/120) + 1800` kW sampled every `dt` seconds over `[0, horizon]`.
pub fn sinusoid_ref(horizon: f64, dt: f64) -> Result<ReferenceSignal> {
    sinusoid_with(&Sinusoid::default(), horizon, dt)
}

pub fn sinusoid_with(shape: &Sinusoid, horizon: f64, dt: f64) -> Result<ReferenceSignal> {
    let n = sample_count(horizon, dt)?;
    let w = 2.0 * std::f64::consts::PI / shape.period_s;
    let power = (0..n)
        .map(|k| shape.offset_kw + shape.amplitude_kw * (w * k as f64 * dt).sin())
        .collect();
    ReferenceSignal::new(0.0, dt, power)
}

/// Target scaling for a loaded or synthetic regulation signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalScale {
    pub target_mean_kw: f64,
    /// Largest excursion from the mean after scaling.
    pub amplitude_kw: f64,
}

/// Shifts and scales raw samples so their mean is `target_mean_kw` and their
/// largest deviation from the mean is `amplitude_kw`. A constant input maps to
/// the constant target mean.
pub fn scale_samples(raw: &[f64], scale: &SignalScale) -> Vec<f64> {
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let max_dev = raw.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if max_dev == 0.0 {
        return vec![scale.target_mean_kw; raw.len()];
    }
    let gain = scale.amplitude_kw / max_dev;
    raw.iter()
        .map(|v| scale.target_mean_kw + gain * (v - mean))
        .collect()
}

fn interpolate(times: &[f64], values: &[f64], dt: f64) -> Vec<f64> {
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let n = (span / dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        while j + 2 < times.len() && times[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (times[j], times[j + 1]);
        let f = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(values[j] + f * (values[j + 1] - values[j]));
    }
    out
}

/// Loads a `time_s,power` CSV, resamples it to `dt` by linear interpolation
/// and rescales it around `target_mean_kw`.
pub fn load_and_scale_signal(path: &Path, scale: &SignalScale, dt: f64) -> Result<ReferenceSignal> {
    if !(dt > 0.0) {
        return Err(PemError::Signal(format!("resolution must be positive, got {dt}")));
    }
    let (times, values) = read_two_column(path)?;
    if times.len() < 2 {
        return Err(PemError::Signal("need at least two samples".into()));
    }
    let resampled = interpolate(&times, &values, dt);
    ReferenceSignal::new(times[0], dt, scale_samples(&resampled, scale))
}

/// Low-pass time constant of the synthetic regulation signal, s.
const REGD_FILTER_TAU: f64 = 45.0;

/// Normalized regulation-like signal: white noise through two cascaded
/// first-order low-pass stages, de-meaned and scaled into `[-1, 1]`.
pub fn synth_regd(horizon: f64, dt: f64, seed: u64) -> Result<ReferenceSignal> {
    let n = sample_count(horizon, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (-dt / REGD_FILTER_TAU).exp();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    // burn-in so the filter starts in its stationary regime
    let burn = (5.0 * REGD_FILTER_TAU / dt).ceil() as usize;
    let mut raw = Vec::with_capacity(n);
    for k in 0..burn + n {
        let z: f64 = StandardNormal.sample(&mut rng);
        s1 = a * s1 + (1.0 - a) * z;
        s2 = a * s2 + (1.0 - a) * s1;
        if k >= burn {
            raw.push(s2);
        }
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let max_dev = raw.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let normalized: Vec<f64> = raw.iter().map(|v| ((v - mean) / max_dev).clamp(-1.0, 1.0)).collect();
    // normalized values may be negative; bypass the non-negative power check
    Ok(ReferenceSignal {
        t0: 0.0,
        dt,
        power: normalized,
    })
}

/// Synthetic regulation signal already scaled to kW.
pub fn synth_regd_scaled(horizon: f64, dt: f64, seed: u64, scale: &SignalScale) -> Result<ReferenceSignal> {
    let raw = synth_regd(horizon, dt, seed)?;
    ReferenceSignal::new(0.0, dt, scale_samples(raw.power(), scale))
}
