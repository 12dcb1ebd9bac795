use crate::error::{PemError, Result};
use crate::thermal::ThermalBand;

/// Uniform temperature bins spanning the deadband.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    pub n_bins: usize,
    pub band: ThermalBand,
}

impl BinGrid {
    pub fn new(n_bins: usize, band: ThermalBand) -> Result<Self> {
        if n_bins == 0 {
            return Err(PemError::InvalidParameter("need at least one temperature bin".into()));
        }
        Ok(Self { n_bins, band })
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.band.deadband / self.n_bins as f64
    }

    /// Lower edge of bin `i`.
    #[inline]
    pub fn edge(&self, i: usize) -> f64 {
        self.band.t_min() + i as f64 * self.width()
    }

    #[inline]
    pub fn midpoint(&self, i: usize) -> f64 {
        self.band.t_min() + (i as f64 + 0.5) * self.width()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.midpoint(i)).collect()
    }

    /// Bin containing `t`, clamped to the grid.
    pub fn bin_of(&self, t: f64) -> usize {
        let x = (t - self.band.t_min()) / self.width();
        if x <= 0.0 {
            0
        } else {
            (x.floor() as usize).min(self.n_bins - 1)
        }
    }

    /// Number of whole bins needed to cover `depth` °F.
    pub fn bins_for_depth(&self, depth: f64) -> usize {
        let x = depth / self.width();
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            r as usize
        } else {
            x.ceil() as usize
        }
    }
}

/// Index layout of the augmented aggregate state
/// `(q_on_optout, q_off_optout, q_on, q_off)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub z_on: usize,
    pub z_off: usize,
    pub n_bins: usize,
}

impl StateLayout {
    #[inline]
    pub fn z(&self) -> usize {
        self.z_on + self.z_off
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.z() + 2 * self.n_bins
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn opt_on(&self, k: usize) -> usize {
        k
    }

    #[inline]
    pub fn opt_off(&self, k: usize) -> usize {
        self.z_on + k
    }

    #[inline]
    pub fn on(&self, i: usize) -> usize {
        self.z() + i
    }

    #[inline]
    pub fn off(&self, i: usize) -> usize {
        self.z() + self.n_bins + i
    }

    pub fn on_range(&self) -> std::ops::Range<usize> {
        self.z()..self.z() + self.n_bins
    }

    pub fn off_range(&self) -> std::ops::Range<usize> {
        self.z() + self.n_bins..self.len()
    }

    pub fn opt_on_range(&self) -> std::ops::Range<usize> {
        0..self.z_on
    }

    pub fn opt_off_range(&self) -> std::ops::Range<usize> {
        self.z_on..self.z()
    }

    pub fn is_opt_out(&self, s: usize) -> bool {
        s < self.z()
    }
}
