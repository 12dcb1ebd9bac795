//! Construction of the aggregate model's transition and control matrices.

use crate::device::{off_request_probability, p_req_on, PemConfig};
use crate::error::{PemError, Result};
use crate::macro_model::grid::{BinGrid, StateLayout};
use crate::macro_model::sparse::{write_dense_rows, SparseMatrix};
use crate::thermal::{ensure_cycling, etp_step, transit_time, DeviceParams, Mode};

/// How the hysteresis transition matrix is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransitionMethod {
    /// Linear interpolation of each bin midpoint's one-step image.
    Analytic,
    /// Transition frequencies counted from a hysteresis-only agent run.
    Empirical { devices: usize, horizon_s: f64, seed: u64 },
}

/// Splits mass of a state with midpoint `mid` whose one-step image is `image`:
/// returns (fraction moving to the neighbour, direction up?).
fn interpolation_split(mid: f64, image: f64, width: f64) -> Result<(f64, bool)> {
    let d = image - mid;
    if d.abs() > width {
        return Err(PemError::DriftExceedsBin { drift: d.abs(), width });
    }
    Ok((d.abs() / width, d >= 0.0))
}

/// Index of a 2N hysteresis-chain state: ON bins first, then OFF bins.
#[inline]
pub fn hysteresis_index(n_bins: usize, mode: Mode, bin: usize) -> usize {
    match mode {
        Mode::On => bin,
        Mode::Off => n_bins + bin,
    }
}

/// Column-stochastic 2N×2N chain of uncontrolled hysteresis cycling, state
/// order `(q_on, q_off)`.
pub fn build_transition_matrix(
    params: &DeviceParams,
    grid: &BinGrid,
    t_amb: f64,
    dt: f64,
    method: TransitionMethod,
) -> Result<SparseMatrix> {
    params.validate()?;
    match method {
        TransitionMethod::Analytic => analytic_hysteresis(params, grid, t_amb, dt),
        TransitionMethod::Empirical {
            devices,
            horizon_s,
            seed,
        } => crate::micro::empirical_hysteresis_matrix(params, grid, t_amb, dt, devices, horizon_s, seed),
    }
}

fn analytic_hysteresis(params: &DeviceParams, grid: &BinGrid, t_amb: f64, dt: f64) -> Result<SparseMatrix> {
    let n = grid.n_bins;
    let w = grid.width();
    let mut m = SparseMatrix::zeros(2 * n);
    for mode in [Mode::On, Mode::Off] {
        for i in 0..n {
            let mid = grid.midpoint(i);
            let image = etp_step(params, mid, mode, t_amb, dt, 0.0)?;
            let (f, up) = interpolation_split(mid, image, w)?;
            let src = hysteresis_index(n, mode, i);
            let dst = match (mode, up) {
                (_, true) if i + 1 < n => hysteresis_index(n, mode, i + 1),
                (_, false) if i > 0 => hysteresis_index(n, mode, i - 1),
                // crossing t_max switches the unit ON, crossing t_min switches it OFF
                (_, true) => hysteresis_index(n, Mode::On, n - 1),
                (_, false) => hysteresis_index(n, Mode::Off, 0),
            };
            m.add(src, src, 1.0 - f);
            m.add(dst, src, f);
        }
    }
    Ok(m)
}

/// Diagonal of the ON request matrix: request probability at each bin midpoint.
pub fn build_t_req(grid: &BinGrid, m_r_on: f64, dt: f64) -> Vec<f64> {
    (0..grid.n_bins)
        .map(|i| p_req_on(grid.midpoint(i), &grid.band, m_r_on, dt))
        .collect()
}

/// Diagonal of the OFF request matrix over timer bins `r = 1..=n`.
pub fn build_m_off(n: usize, r_lo: usize, m_r_off: f64, dt: f64) -> Vec<f64> {
    (1..=n)
        .map(|r| off_request_probability(r, r_lo, n, m_r_off, dt))
        .collect()
}

/// Timer placement of newly accepted ON mass for every temperature bin (the
/// non-zero row of each ON column of C_p).
///
/// A bin whose noise-free ON trajectory would reach `t_min` before the packet
/// completes is given a shortened packet: it starts at timer index
/// ⌊(δ − t_j)/Δt⌋, where t_j is its time to reach `t_min`.
pub fn build_placement(
    params: &DeviceParams,
    grid: &BinGrid,
    t_amb: f64,
    cfg: &PemConfig,
) -> Vec<usize> {
    let n = cfg.n_timer_bins();
    (0..grid.n_bins)
        .map(|i| {
            let residence = transit_time(params, grid.midpoint(i), grid.band.t_min(), Mode::On, t_amb)
                .unwrap_or(f64::INFINITY)
                .min(cfg.packet_len);
            let j = ((cfg.packet_len - residence) / cfg.dt + 1e-9).floor() as usize;
            j.min(n - 1)
        })
        .collect()
}

/// Dense n×n timer shift (ones on the first subdiagonal).
pub fn m_p_dense(n: usize) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for r in 1..n {
        d[r][r - 1] = 1.0;
    }
    d
}

/// Representative temperatures of the opt-out chains.
#[derive(Debug, Clone, PartialEq)]
pub struct OptOutChains {
    pub layout: StateLayout,
    /// In-PEM OFF bin receiving ON-side opt-out mass on re-entry.
    pub reentry_from_on: usize,
    /// In-PEM OFF bin receiving OFF-side opt-out mass on re-entry.
    pub reentry_from_off: usize,
}

/// Full natural dynamics of the augmented state: in-PEM drift, entry into the
/// opt-out chains at the deadband edges, drift along the chains and re-entry
/// into PEM as OFF devices.
///
/// ON-side chain bins start one bin above `t_max` and step down in bin widths
/// until the re-entry depth is reached; the OFF side mirrors this below
/// `t_min`.
pub fn build_m_exit(
    grid: &BinGrid,
    cfg: &PemConfig,
    params: &DeviceParams,
    t_amb: f64,
) -> Result<(SparseMatrix, OptOutChains)> {
    ensure_cycling(params, &grid.band, t_amb)?;
    let n = grid.n_bins;
    let w = grid.width();
    let depth = grid.bins_for_depth(cfg.optout_reentry);
    if depth >= n {
        return Err(PemError::OptOutDepth(format!(
            "re-entry offset {} °F needs {depth} bins but the deadband has {n}",
            cfg.optout_reentry
        )));
    }
    let layout = StateLayout {
        z_on: depth + 1,
        z_off: depth + 1,
        n_bins: n,
    };
    let chains = OptOutChains {
        layout,
        reentry_from_on: n - 1 - depth,
        reentry_from_off: depth,
    };
    let temps = representative_temperatures(grid, &layout);
    let mut m = SparseMatrix::zeros(layout.len());

    let mut place = |src: usize, mode: Mode, up_dst: usize, down_dst: usize| -> Result<()> {
        let mid = temps[src];
        let image = etp_step(params, mid, mode, t_amb, cfg.dt, 0.0)?;
        let (f, up) = interpolation_split(mid, image, w)?;
        m.add(src, src, 1.0 - f);
        m.add(if up { up_dst } else { down_dst }, src, f);
        Ok(())
    };

    for i in 0..n {
        let up_on = if i + 1 < n { layout.on(i + 1) } else { layout.opt_on(0) };
        let down_on = if i > 0 { layout.on(i - 1) } else { layout.opt_off(0) };
        place(layout.on(i), Mode::On, up_on, down_on)?;
        let up_off = if i + 1 < n { layout.off(i + 1) } else { layout.opt_on(0) };
        let down_off = if i > 0 { layout.off(i - 1) } else { layout.opt_off(0) };
        place(layout.off(i), Mode::Off, up_off, down_off)?;
    }
    for k in 0..layout.z_on {
        let src = layout.opt_on(k);
        let down = if k + 1 < layout.z_on {
            layout.opt_on(k + 1)
        } else {
            layout.off(chains.reentry_from_on)
        };
        let up = if k > 0 { layout.opt_on(k - 1) } else { src };
        place(src, Mode::On, up, down)?;
    }
    for k in 0..layout.z_off {
        let src = layout.opt_off(k);
        let up = if k + 1 < layout.z_off {
            layout.opt_off(k + 1)
        } else {
            layout.off(chains.reentry_from_off)
        };
        let down = if k > 0 { layout.opt_off(k - 1) } else { src };
        place(src, Mode::Off, up, down)?;
    }
    Ok((m, chains))
}

/// Temperature assigned to every augmented state for statistics.
pub fn representative_temperatures(grid: &BinGrid, layout: &StateLayout) -> Vec<f64> {
    let w = grid.width();
    let (lo, hi) = (grid.band.t_min(), grid.band.t_max());
    let mut t = vec![0.0; layout.len()];
    for k in 0..layout.z_on {
        t[layout.opt_on(k)] = hi + 0.5 * w - k as f64 * w;
    }
    for k in 0..layout.z_off {
        t[layout.opt_off(k)] = lo - 0.5 * w + k as f64 * w;
    }
    for i in 0..grid.n_bins {
        t[layout.on(i)] = grid.midpoint(i);
        t[layout.off(i)] = grid.midpoint(i);
    }
    t
}

/// Every matrix the aggregate model needs for one parameter set.
#[derive(Debug, Clone)]
pub struct MacroMatrices {
    pub grid: BinGrid,
    pub cfg: PemConfig,
    pub params: DeviceParams,
    pub t_amb: f64,
    pub layout: StateLayout,
    pub chains: OptOutChains,
    /// Uncontrolled 2N hysteresis chain.
    pub hysteresis: SparseMatrix,
    /// Augmented natural dynamics including opt-out entry and exit.
    pub exit: SparseMatrix,
    pub t_req: Vec<f64>,
    pub m_off: Vec<f64>,
    /// C_p row for each ON temperature bin.
    pub placement: Vec<usize>,
    pub temperatures: Vec<f64>,
    /// `(from, to, probability)` entries of `exit` that cross between PEM and
    /// opt-out states.
    pub boundary: Vec<(usize, usize, f64)>,
}

impl MacroMatrices {
    /// Builds all matrices from nominal parameters with the analytic method.
    pub fn build(params: &DeviceParams, grid: BinGrid, cfg: &PemConfig, t_amb: f64) -> Result<Self> {
        Self::build_with(params, grid, cfg, t_amb, TransitionMethod::Analytic)
    }

    pub fn build_with(
        params: &DeviceParams,
        grid: BinGrid,
        cfg: &PemConfig,
        t_amb: f64,
        method: TransitionMethod,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let hysteresis = build_transition_matrix(params, &grid, t_amb, cfg.dt, method)?;
        let (exit, chains) = build_m_exit(&grid, cfg, params, t_amb)?;
        let layout = chains.layout;
        let n = cfg.n_timer_bins();
        let boundary = (0..layout.len())
            .flat_map(|from| {
                exit.column(from)
                    .iter()
                    .filter(move |(to, _)| layout.is_opt_out(from) != layout.is_opt_out(*to))
                    .map(move |&(to, p)| (from, to, p))
            })
            .collect();
        Ok(Self {
            t_req: build_t_req(&grid, cfg.m_r_on(), cfg.dt),
            m_off: build_m_off(n, cfg.lockout_bin(), cfg.m_r_off(), cfg.dt),
            placement: build_placement(params, &grid, t_amb, cfg),
            temperatures: representative_temperatures(&grid, &layout),
            grid,
            cfg: *cfg,
            params: *params,
            t_amb,
            layout,
            chains,
            hysteresis,
            exit,
            boundary,
        })
    }

    #[inline]
    pub fn n_timer(&self) -> usize {
        self.m_off.len()
    }

    /// Output map C: ones on ON opt-out and in-PEM ON states.
    pub fn readout(&self) -> crate::policy::PowerReadout {
        let l = &self.layout;
        let c = (0..l.len())
            .map(|s| {
                if l.opt_on_range().contains(&s) || l.on_range().contains(&s) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        crate::policy::PowerReadout { c }
    }

    /// Dense n×2N timer placement matrix over `(q_on, q_off)`.
    pub fn c_p_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_timer();
        let nb = self.grid.n_bins;
        let mut d = vec![vec![0.0; 2 * nb]; n];
        for (i, &j) in self.placement.iter().enumerate() {
            d[j][i] = 1.0;
        }
        d
    }

    /// Writes every matrix as dense CSV into `dir`.
    pub fn export(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PemError::io(dir, e))?;
        self.hysteresis.write_dense_csv(&dir.join("m_hysteresis.csv"))?;
        self.exit.write_dense_csv(&dir.join("m_exit.csv"))?;
        let diag = |v: &[f64]| {
            (0..v.len())
                .map(|i| (0..v.len()).map(|j| if i == j { v[i] } else { 0.0 }).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        write_dense_rows(&dir.join("t_req.csv"), &diag(&self.t_req))?;
        write_dense_rows(&dir.join("m_off.csv"), &diag(&self.m_off))?;
        write_dense_rows(&dir.join("m_p.csv"), &m_p_dense(self.n_timer()))?;
        write_dense_rows(&dir.join("c_p.csv"), &self.c_p_dense())
    }
}
