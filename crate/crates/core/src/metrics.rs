//! Validation metrics comparing macro, micro and reference trajectories.

use serde::Serialize;

use crate::error::{PemError, Result};

/// Per-step fleet temperature mean and standard deviation, °F.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TempStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TempStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Per-step probability vectors over a common set of temperature bins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinnedDistribution {
    pub steps: Vec<Vec<f64>>,
}

impl BinnedDistribution {
    /// Adds `eps` to every entry and renormalizes each step.
    pub fn smoothed(&self, eps: f64) -> Self {
        let steps = self
            .steps
            .iter()
            .map(|row| {
                let total: f64 = row.iter().map(|v| v + eps).sum();
                row.iter().map(|v| (v + eps) / total).collect()
            })
            .collect();
        Self { steps }
    }
}

/// Smoothing added to empirical bins before taking logarithms.
pub const KLD_SMOOTHING: f64 = 1e-9;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(PemError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(PemError::Degenerate("rmse of empty series".into()));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Norms of the macro-minus-micro temperature statistic differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TempNorms {
    pub mean_2norm: f64,
    pub mean_infnorm: f64,
    pub std_2norm: f64,
    pub std_infnorm: f64,
    /// 2-norms divided by √K.
    pub mean_2norm_per_step: f64,
    pub std_2norm_per_step: f64,
}

pub fn temp_stat_norms(macro_stats: &TempStats, micro_stats: &TempStats) -> Result<TempNorms> {
    check_len(macro_stats.mean.len(), micro_stats.mean.len())?;
    check_len(macro_stats.std.len(), micro_stats.std.len())?;
    check_len(macro_stats.mean.len(), macro_stats.std.len())?;
    let k = macro_stats.len();
    if k == 0 {
        return Err(PemError::Degenerate("empty temperature statistics".into()));
    }
    let norms = |a: &[f64], b: &[f64]| {
        let mut two = 0.0f64;
        let mut inf = 0.0f64;
        for (x, y) in a.iter().zip(b) {
            let d = (x - y).abs();
            two += d * d;
            inf = inf.max(d);
        }
        (two.sqrt(), inf)
    };
    let (m2, minf) = norms(&macro_stats.mean, &micro_stats.mean);
    let (s2, sinf) = norms(&macro_stats.std, &micro_stats.std);
    let root_k = (k as f64).sqrt();
    Ok(TempNorms {
        mean_2norm: m2,
        mean_infnorm: minf,
        std_2norm: s2,
        std_infnorm: sinf,
        mean_2norm_per_step: m2 / root_k,
        std_2norm_per_step: s2 / root_k,
    })
}

/// KL divergence `Σ p log(p/q)` of one pair of distributions, `0·log 0 = 0`.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p.len(), q.len())?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(PemError::Degenerate(format!("reference bin {i} is empty; smooth first")));
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Per-step KL divergences of macro against micro.
pub fn kld_series(macro_dist: &BinnedDistribution, micro_dist: &BinnedDistribution) -> Result<Vec<f64>> {
    check_len(macro_dist.steps.len(), micro_dist.steps.len())?;
    macro_dist
        .steps
        .iter()
        .zip(&micro_dist.steps)
        .map(|(p, q)| kld(p, q))
        .collect()
}

/// Time-averaged KL divergence in nats.
pub fn mean_kld(macro_dist: &BinnedDistribution, micro_dist: &BinnedDistribution) -> Result<f64> {
    let series = kld_series(macro_dist, micro_dist)?;
    if series.is_empty() {
        return Err(PemError::Degenerate("no time steps".into()));
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let n = a.len() as f64;
    if a.len() < 2 {
        return Err(PemError::Degenerate("pearson needs at least two points".into()));
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(PemError::Degenerate("zero variance series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    pearson(&ranks(a), &ranks(b))
}

/// Histogram and moments of realized packet lengths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketLengthStats {
    /// Left bin edges, s.
    pub edges: Vec<f64>,
    /// Fraction of (weighted) packets per bin.
    pub histogram: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Total weight of the packets counted.
    pub count: f64,
}

/// Packets shorter than this are attributed to lockout and excluded, s.
pub const MIN_COUNTED_PACKET: f64 = 60.0;

/// Statistics over weighted packet completions `(length s, weight)`.
///
/// Lengths below [`MIN_COUNTED_PACKET`] are dropped; the histogram spans
/// `[t_lockout, max_len]` in bins of `bin_width` seconds with the last bin
/// closed on the right.
pub fn packet_length_stats(
    completions: &[(f64, f64)],
    t_lockout: f64,
    max_len: f64,
    bin_width: f64,
) -> Result<PacketLengthStats> {
    if !(bin_width > 0.0) || !(max_len > t_lockout) {
        return Err(PemError::InvalidParameter("invalid histogram range".into()));
    }
    let counted: Vec<(f64, f64)> = completions
        .iter()
        .copied()
        .filter(|(len, w)| *len >= MIN_COUNTED_PACKET && *w > 0.0)
        .collect();
    let total: f64 = counted.iter().map(|(_, w)| w).sum();
    if counted.is_empty() || total <= 0.0 {
        return Err(PemError::Degenerate("no packet completions".into()));
    }
    let mean = counted.iter().map(|(l, w)| l * w).sum::<f64>() / total;
    let var = counted.iter().map(|(l, w)| w * (l - mean) * (l - mean)).sum::<f64>() / total;
    let n_bins = ((max_len - t_lockout) / bin_width).ceil().max(1.0) as usize;
    let edges: Vec<f64> = (0..n_bins).map(|i| t_lockout + i as f64 * bin_width).collect();
    let mut histogram = vec![0.0; n_bins];
    for (len, w) in &counted {
        let i = (((len - t_lockout) / bin_width).floor().max(0.0) as usize).min(n_bins - 1);
        histogram[i] += w;
    }
    histogram.iter_mut().for_each(|h| *h /= total);
    Ok(PacketLengthStats {
        edges,
        histogram,
        mean,
        std: var.max(0.0).sqrt(),
        count: total,
    })
}
