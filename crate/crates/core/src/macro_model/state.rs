//! Aggregate state and the one-step controlled update.

use crate::error::{PemError, Result};
use crate::macro_model::grid::{BinGrid, StateLayout};
use crate::macro_model::matrices::MacroMatrices;
use crate::macro_model::sparse::SparseMatrix;
use crate::metrics::{BinnedDistribution, TempStats};

/// Tolerated float noise below zero before an entry is treated as a bug.
pub const NEGATIVE_TOL: f64 = 1e-12;
/// Allowed deviation of total probability mass from one.
pub const MASS_TOL: f64 = 1e-9;
/// Allowed mismatch between timer mass and in-PEM ON mass.
pub const TIMER_TOL: f64 = 1e-6;

/// Probability mass over the augmented temperature states plus the packet
/// timer of the in-PEM ON population.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub q: Vec<f64>,
    pub x_p: Vec<f64>,
}

impl MacroState {
    pub fn total_mass(&self) -> f64 {
        self.q.iter().sum()
    }

    pub fn timer_mass(&self) -> f64 {
        self.x_p.iter().sum()
    }

    pub fn on_mass(&self, layout: &StateLayout) -> f64 {
        self.q[layout.on_range()].iter().sum()
    }

    pub fn optout_on_mass(&self, layout: &StateLayout) -> f64 {
        self.q[layout.opt_on_range()].iter().sum()
    }

    pub fn optout_off_mass(&self, layout: &StateLayout) -> f64 {
        self.q[layout.opt_off_range()].iter().sum()
    }

    /// Checks shape, sign, mass and timer consistency.
    pub fn check(&self, layout: &StateLayout, n_timer: usize, step: usize) -> Result<()> {
        if self.q.len() != layout.len() {
            return Err(PemError::LengthMismatch {
                left: self.q.len(),
                right: layout.len(),
            });
        }
        if self.x_p.len() != n_timer {
            return Err(PemError::LengthMismatch {
                left: self.x_p.len(),
                right: n_timer,
            });
        }
        let violation = |detail: String| PemError::Invariant { step, detail };
        if let Some(v) = self.q.iter().chain(&self.x_p).find(|v| !(**v >= 0.0)) {
            return Err(violation(format!("negative or non-finite entry {v}")));
        }
        let mass = self.total_mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(violation(format!("total mass {mass} deviates from 1")));
        }
        let mismatch = (self.timer_mass() - self.on_mass(layout)).abs();
        if mismatch > TIMER_TOL {
            return Err(violation(format!("timer mass differs from ON mass by {mismatch}")));
        }
        Ok(())
    }

    /// Mean and std of temperature under the representative state temperatures.
    pub fn temperature_moments(&self, temperatures: &[f64]) -> (f64, f64) {
        let mass = self.total_mass();
        let mean = self.q.iter().zip(temperatures).map(|(p, t)| p * t).sum::<f64>() / mass;
        let var = self
            .q
            .iter()
            .zip(temperatures)
            .map(|(p, t)| p * (t - mean) * (t - mean))
            .sum::<f64>()
            / mass;
        (mean, var.max(0.0).sqrt())
    }

    /// Temperature distribution over the N in-PEM bins, with opt-out mass
    /// assigned to the bin its representative temperature clamps into.
    pub fn temperature_distribution(&self, grid: &BinGrid, layout: &StateLayout, temperatures: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; grid.n_bins];
        for (s, p) in self.q.iter().enumerate() {
            let bin = if layout.is_opt_out(s) {
                grid.bin_of(temperatures[s])
            } else {
                (s - layout.z()) % grid.n_bins
            };
            d[bin] += p;
        }
        d
    }
}

/// `q⁺`: accepted ON requests, added to ON bins and removed from OFF bins.
pub fn on_request_flow(q: &[f64], layout: &StateLayout, t_req: &[f64], beta_on: f64) -> Vec<f64> {
    let mut flow = vec![0.0; q.len()];
    if beta_on == 0.0 {
        return flow;
    }
    for (i, p) in t_req.iter().enumerate() {
        let moved = beta_on * p * q[layout.off(i)];
        flow[layout.on(i)] += moved;
        flow[layout.off(i)] -= moved;
    }
    flow
}

/// Aggregate ON requests `1ᵀ T_req q_off`.
pub fn n_req_on(q: &[f64], layout: &StateLayout, t_req: &[f64]) -> f64 {
    t_req.iter().enumerate().map(|(i, p)| p * q[layout.off(i)]).sum()
}

/// OFF request flows from the timer.
#[derive(Debug, Clone, PartialEq)]
pub struct OffFlow {
    /// Expected requesting mass per timer bin.
    pub x_hat_off: Vec<f64>,
    /// Accepted requesting mass per timer bin.
    pub x_p_off: Vec<f64>,
    pub n_req_off: f64,
}

pub fn off_request_flow(x_p: &[f64], m_off: &[f64], beta_off: f64) -> OffFlow {
    let x_hat_off: Vec<f64> = x_p.iter().zip(m_off).map(|(x, p)| x * p).collect();
    let x_p_off = x_hat_off.iter().map(|v| beta_off * v).collect();
    OffFlow {
        n_req_off: x_hat_off.iter().sum(),
        x_hat_off,
        x_p_off,
    }
}

fn clamp_small_negative(v: &mut [f64], step: usize, what: &str) -> Result<()> {
    for x in v.iter_mut() {
        if *x < 0.0 {
            if *x < -NEGATIVE_TOL {
                return Err(PemError::Invariant {
                    step,
                    detail: format!("{what} entry {x} below zero"),
                });
            }
            *x = 0.0;
        }
    }
    Ok(())
}

/// `M_p x_p + C_p q⁺ − M_p x_p_off`: shift the surviving timer mass one bin,
/// drop the final bin and place newly accepted ON mass.
pub fn timer_step(
    x_p: &[f64],
    q_plus: &[f64],
    x_p_off: &[f64],
    placement: &[usize],
    layout: &StateLayout,
) -> Result<Vec<f64>> {
    timer_step_at(x_p, q_plus, x_p_off, placement, layout, 0)
}

fn timer_step_at(
    x_p: &[f64],
    q_plus: &[f64],
    x_p_off: &[f64],
    placement: &[usize],
    layout: &StateLayout,
    step: usize,
) -> Result<Vec<f64>> {
    let n = x_p.len();
    let mut next = vec![0.0; n];
    for r in 1..n {
        next[r] = x_p[r - 1] - x_p_off[r - 1];
    }
    for (i, &j) in placement.iter().enumerate() {
        next[j] += q_plus[layout.on(i)];
    }
    clamp_small_negative(&mut next, step, "timer")?;
    Ok(next)
}

/// Fraction of the in-PEM ON population leaving ON this step through accepted
/// OFF requests and expiries.
pub fn beta_off_minus(beta_off: f64, x_p: &[f64], m_off: &[f64]) -> f64 {
    let total: f64 = x_p.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let requested: f64 = x_p.iter().zip(m_off).map(|(x, p)| x * p).sum();
    let last = *x_p.last().unwrap_or(&0.0);
    ((beta_off * requested + (1.0 - beta_off) * last) / total).clamp(0.0, 1.0)
}

/// `q⁻`: uniform removal of `β⁻` of every ON bin into the matching OFF bin.
pub fn off_flow_to_temperature(q: &[f64], layout: &StateLayout, beta_minus: f64) -> Vec<f64> {
    let mut flow = vec![0.0; q.len()];
    if beta_minus == 0.0 {
        return flow;
    }
    for i in 0..layout.n_bins {
        let moved = beta_minus * q[layout.on(i)];
        flow[layout.on(i)] += moved;
        flow[layout.off(i)] -= moved;
    }
    flow
}

/// Quantities observed during one aggregate step, all as fleet fractions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepFlows {
    pub n_req_on: f64,
    pub n_req_off: f64,
    pub x_p_last: f64,
    pub beta_minus: f64,
    /// Mass entering opt-out states.
    pub optout_influx: f64,
    /// Mass returning from opt-out into PEM.
    pub optout_outflux: f64,
    /// In-PEM ON mass that left the deadband at `t_min` this step.
    pub on_leakage: f64,
    /// Weighted packet terminations `(length s, mass)`.
    pub completions: Vec<(f64, f64)>,
}

/// Request pools visible to the coordinator before it chooses the betas.
pub fn request_pools(state: &MacroState, mats: &MacroMatrices) -> (f64, f64, f64) {
    let on = n_req_on(&state.q, &mats.layout, &mats.t_req);
    let off: f64 = state.x_p.iter().zip(&mats.m_off).map(|(x, p)| x * p).sum();
    (on, off, *state.x_p.last().unwrap_or(&0.0))
}

/// One controlled step `q ↦ M_exit · M̄ · q` with the matching timer update.
pub fn macro_step(state: &MacroState, mats: &MacroMatrices, beta_on: f64, beta_off: f64) -> Result<MacroState> {
    macro_step_with_flows(state, mats, beta_on, beta_off, 0).map(|(s, _)| s)
}

/// [`macro_step`] that also reports the step's flows; `step` labels
/// invariant violations.
pub fn macro_step_with_flows(
    state: &MacroState,
    mats: &MacroMatrices,
    beta_on: f64,
    beta_off: f64,
    step: usize,
) -> Result<(MacroState, StepFlows)> {
    if !(0.0..=1.0).contains(&beta_on) || !(0.0..=1.0).contains(&beta_off) {
        return Err(PemError::InvalidParameter(format!(
            "betas ({beta_on}, {beta_off}) outside [0, 1]"
        )));
    }
    if beta_on * beta_off != 0.0 {
        return Err(PemError::InvalidParameter("both betas positive".into()));
    }
    let layout = &mats.layout;
    let n = mats.n_timer();
    let q = &state.q;

    let q_plus = on_request_flow(q, layout, &mats.t_req, beta_on);
    let off = off_request_flow(&state.x_p, &mats.m_off, beta_off);
    let beta_minus = beta_off_minus(beta_off, &state.x_p, &mats.m_off);
    let q_minus = off_flow_to_temperature(q, layout, beta_minus);

    let mut controlled: Vec<f64> = (0..q.len()).map(|s| q[s] + q_plus[s] - q_minus[s]).collect();
    clamp_small_negative(&mut controlled, step, "controlled state")?;
    let mut x_next = timer_step_at(&state.x_p, &q_plus, &off.x_p_off, &mats.placement, layout, step)?;

    let mut q_next = mats.exit.mul_vec(&controlled);
    clamp_small_negative(&mut q_next, step, "state")?;

    // ON mass drifting out of the deadband leaves the timer proportionally
    let on_before: f64 = controlled[layout.on_range()].iter().sum();
    let on_after: f64 = q_next[layout.on_range()].iter().sum();
    if on_before > 0.0 {
        let scale = on_after / on_before;
        x_next.iter_mut().for_each(|v| *v *= scale);
    }

    let (influx, outflux) = boundary_flux(&mats.boundary, layout, &controlled);
    let dt = mats.cfg.dt;
    let mut completions: Vec<(f64, f64)> = (0..n - 1)
        .filter(|r| off.x_p_off[*r] > 0.0)
        .map(|r| ((r + 1) as f64 * dt, off.x_p_off[r]))
        .collect();
    if state.x_p[n - 1] > 0.0 {
        completions.push((n as f64 * dt, state.x_p[n - 1]));
    }

    let next = MacroState { q: q_next, x_p: x_next };
    next.check(layout, n, step)?;
    Ok((
        next,
        StepFlows {
            n_req_on: n_req_on(q, layout, &mats.t_req),
            n_req_off: off.n_req_off,
            x_p_last: state.x_p[n - 1],
            beta_minus,
            optout_influx: influx,
            optout_outflux: outflux,
            on_leakage: on_before - on_after,
            completions,
        },
    ))
}

fn boundary_flux(boundary: &[(usize, usize, f64)], layout: &StateLayout, q: &[f64]) -> (f64, f64) {
    let mut influx = 0.0;
    let mut outflux = 0.0;
    for &(from, _, p) in boundary {
        if layout.is_opt_out(from) {
            outflux += p * q[from];
        } else {
            influx += p * q[from];
        }
    }
    (influx, outflux)
}

/// Iteration cap for [`stationary_distribution`].
const STATIONARY_MAX_ITER: usize = 20_000_000;

/// Eigenvalue-one eigenvector of a column-stochastic matrix, normalized to
/// unit mass, by power iteration from the uniform vector.
pub fn stationary_distribution(m: &SparseMatrix, tol: f64) -> Result<Vec<f64>> {
    let dim = m.dim();
    let mut v = vec![1.0 / dim as f64; dim];
    let mut next = vec![0.0; dim];
    for iter in 0..STATIONARY_MAX_ITER {
        m.mul_vec_into(&v, &mut next);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        std::mem::swap(&mut v, &mut next);
        if iter % 64 == 0 {
            let diff: f64 = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            if diff < tol {
                return Ok(v);
            }
        }
    }
    Err(PemError::Degenerate("power iteration did not converge".into()))
}

/// Stationary ON fraction of the uncontrolled hysteresis chain.
pub fn stationary_on_mass(mats: &MacroMatrices) -> Result<f64> {
    let pi = stationary_distribution(&mats.hysteresis, 1e-14)?;
    Ok(pi[..mats.grid.n_bins].iter().sum())
}

/// Steady-state aggregate state: the hysteresis stationary vector on the
/// in-PEM bins, empty opt-out chains and each ON bin's mass spread evenly
/// over the timer bins its packets can occupy.
pub fn steady_state_init(mats: &MacroMatrices) -> Result<MacroState> {
    let nb = mats.grid.n_bins;
    let pi = stationary_distribution(&mats.hysteresis, 1e-14)?;
    let layout = &mats.layout;
    let n = mats.n_timer();
    let mut q = vec![0.0; layout.len()];
    let mut x_p = vec![0.0; n];
    for i in 0..nb {
        q[layout.on(i)] = pi[i];
        q[layout.off(i)] = pi[nb + i];
        let j = mats.placement[i];
        let share = pi[i] / (n - j) as f64;
        x_p[j..].iter_mut().for_each(|v| *v += share);
    }
    let state = MacroState { q, x_p };
    state.check(layout, n, 0)?;
    Ok(state)
}

/// Every device OFF, spread uniformly over the deadband.
pub fn uniform_off_init(mats: &MacroMatrices) -> MacroState {
    let layout = &mats.layout;
    let mut q = vec![0.0; layout.len()];
    let nb = mats.grid.n_bins;
    for i in 0..nb {
        q[layout.off(i)] = 1.0 / nb as f64;
    }
    MacroState {
        q,
        x_p: vec![0.0; mats.n_timer()],
    }
}

/// Per-step mean/std and binned distribution for a sequence of states.
pub fn temperature_summary(states: &[MacroState], mats: &MacroMatrices) -> (TempStats, BinnedDistribution) {
    let mut stats = TempStats::default();
    let mut dist = BinnedDistribution::default();
    for s in states {
        let (m, sd) = s.temperature_moments(&mats.temperatures);
        stats.mean.push(m);
        stats.std.push(sd);
        dist.steps
            .push(s.temperature_distribution(&mats.grid, &mats.layout, &mats.temperatures));
    }
    (stats, dist)
}
