//! Flat key-value summaries, run manifests and tracking-loss detection.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use crate::error::{PemError, Result};
use crate::scenario::config::{EventConfig, ScenarioConfig};

/// Ordered `key = value` summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| PemError::io(path, e))
    }
}

/// Writes `manifest.txt` describing how the outputs in `dir` were produced.
/// Contains no timestamps so identical runs give identical manifests.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ScenarioConfig, artifacts: &[&str]) -> Result<()> {
    let mut m = Summary::default();
    m.push("command", command);
    m.push("seed", cfg.seed);
    m.push("config_sha256", cfg.hash());
    m.push("pem_core_version", env!("CARGO_PKG_VERSION"));
    m.push("artifacts", artifacts.join(","));
    m.write(&dir.join("manifest.txt"))
}

/// Tracking behaviour of one power trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackingEvent {
    /// First time the rolling error fell below the loss threshold.
    pub acquired_at: Option<f64>,
    /// First time after acquisition that the rolling error exceeds the
    /// threshold while the opt-out fraction is at or above the surge level.
    pub loss_at: Option<f64>,
    /// First time the opt-out fraction reached the surge level.
    pub surge_at: Option<f64>,
    pub max_optout: f64,
}

impl TrackingEvent {
    pub fn surge(&self) -> bool {
        self.surge_at.is_some()
    }
}

/// Rolling RMS of `a − b` over `window` samples ending at each index.
pub fn rolling_rms(a: &[f64], b: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    let mut out = Vec::with_capacity(sq.len());
    let mut acc = 0.0;
    for k in 0..sq.len() {
        acc += sq[k];
        if k >= w {
            acc -= sq[k - w];
        }
        let n = (k + 1).min(w);
        out.push((acc.max(0.0) / n as f64).sqrt());
    }
    out
}

/// Locates the opt-out driven loss of tracking in a power trajectory.
pub fn detect_tracking_loss(
    time: &[f64],
    p_agg: &[f64],
    p_ref: &[f64],
    optout: &[f64],
    event: &EventConfig,
    nominal_kw: f64,
) -> TrackingEvent {
    let dt = if time.len() > 1 { time[1] - time[0] } else { 1.0 };
    let window = (event.window_s / dt).round() as usize;
    let rms = rolling_rms(p_agg, p_ref, window);
    let threshold = event.loss_fraction * nominal_kw;
    let mut out = TrackingEvent {
        max_optout: optout.iter().cloned().fold(0.0, f64::max),
        surge_at: optout
            .iter()
            .position(|o| *o >= event.surge_fraction)
            .map(|k| time[k]),
        ..TrackingEvent::default()
    };
    for k in window.min(rms.len())..rms.len() {
        if out.acquired_at.is_none() {
            if rms[k] <= threshold {
                out.acquired_at = Some(time[k]);
            }
        } else if rms[k] > threshold && optout[k] >= event.surge_fraction {
            out.loss_at = Some(time[k]);
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rolling_rms_matches_naive() {
        let a = [1.0, 3.0, -2.0, 5.0, 0.5];
        let b = [0.0; 5];
        let r = rolling_rms(&a, &b, 2);
        for k in 0usize..5 {
            let lo = k.saturating_sub(1);
            let naive = (a[lo..=k].iter().map(|v| v * v).sum::<f64>() / (k - lo + 1) as f64).sqrt();
            assert!((r[k] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_follows_acquisition() {
        let time: Vec<f64> = (0..200).map(|k| k as f64 * 2.0).collect();
        let p_ref = vec![1000.0; 200];
        let mut p = vec![1000.0; 200];
        p[..20].iter_mut().for_each(|v| *v = 0.0);
        p[150..].iter_mut().for_each(|v| *v = 1500.0);
        let mut opt = vec![0.0; 200];
        opt[145..].iter_mut().for_each(|v| *v = 0.2);
        let ev = detect_tracking_loss(&time, &p, &p_ref, &opt, &EventConfig::default(), 1800.0);
        assert!(ev.acquired_at.unwrap() > 40.0);
        assert_eq!(ev.surge_at, Some(290.0));
        let loss = ev.loss_at.unwrap();
        assert!((300.0..=310.0).contains(&loss), "{loss}");
        // no opt-outs, no event
        let ev = detect_tracking_loss(&time, &p, &p_ref, &[0.0; 200], &EventConfig::default(), 1800.0);
        assert!(ev.loss_at.is_none() && !ev.surge());
        let flat = vec![1000.0; 200];
        let ev = detect_tracking_loss(&time, &flat, &p_ref, &opt, &EventConfig::default(), 1800.0);
        assert!(ev.loss_at.is_none());
    }

    #[test]
    fn summary_renders_in_order() {
        let mut s = Summary::default();
        s.push("b", 2);
        s.push("a", 1.5);
        assert_eq!(s.render(), "b = 2\na = 1.5\n");
        assert_eq!(s.get_f64("a"), Some(1.5));
    }
}
