//! Closed-loop aggregate simulation against a reference signal.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{PemError, Result};
use crate::macro_model::matrices::MacroMatrices;
use crate::macro_model::state::{macro_step_with_flows, request_pools, MacroState, StepFlows};
use crate::policy::{aggregate_power, compute_betas, predicted_power_step, BetaPair};
use crate::signals::ReferenceSignal;

/// Per-step record of a closed-loop aggregate run. Index `k` describes the
/// state at time `k·dt`; control quantities at `k` drive the step to `k + 1`
/// and are zero at the final sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MacroTrace {
    pub time: Vec<f64>,
    pub p_ref: Vec<f64>,
    pub p_agg: Vec<f64>,
    pub p_predicted: Vec<f64>,
    pub beta_on: Vec<f64>,
    pub beta_off: Vec<f64>,
    pub clamped: Vec<bool>,
    pub n_req_on: Vec<f64>,
    pub n_req_off: Vec<f64>,
    pub optout_on: Vec<f64>,
    pub optout_off: Vec<f64>,
    pub optout_influx: Vec<f64>,
    pub optout_outflux: Vec<f64>,
    pub mass_error: Vec<f64>,
    pub timer_mismatch: Vec<f64>,
    /// Weighted packet terminations in device counts.
    pub completions: Vec<(f64, f64)>,
}

impl MacroTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "time_s",
            "p_ref",
            "p_agg",
            "p_predicted",
            "beta_on",
            "beta_off",
            "clamped",
            "n_req_on",
            "n_req_off",
            "optout_on",
            "optout_off",
            "optout_influx",
            "optout_outflux",
            "mass_error",
            "timer_mismatch",
        ])?;
        for k in 0..self.len() {
            w.write_record([
                self.time[k].to_string(),
                self.p_ref[k].to_string(),
                self.p_agg[k].to_string(),
                self.p_predicted[k].to_string(),
                self.beta_on[k].to_string(),
                self.beta_off[k].to_string(),
                u8::from(self.clamped[k]).to_string(),
                self.n_req_on[k].to_string(),
                self.n_req_off[k].to_string(),
                self.optout_on[k].to_string(),
                self.optout_off[k].to_string(),
                self.optout_influx[k].to_string(),
                self.optout_outflux[k].to_string(),
                self.mass_error[k].to_string(),
                self.timer_mismatch[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| PemError::io(path, e))
    }
}

/// Outcome of [`simulate_macro`].
#[derive(Debug, Clone)]
pub struct MacroRun {
    pub trace: MacroTrace,
    /// States at every sample, including the initial one.
    pub states: Vec<MacroState>,
}

/// How the coordinator treats OFF requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffRequests {
    /// Devices may ask to end packets early.
    Enabled,
    /// Packets always run to expiry.
    Disabled,
}

/// Runs the aggregate model in closed loop with the complementarity policy.
pub fn simulate_macro(
    mats: &MacroMatrices,
    init: MacroState,
    reference: &ReferenceSignal,
    fleet_size: usize,
) -> Result<MacroRun> {
    simulate_macro_with(mats, init, reference, fleet_size, OffRequests::Enabled)
}

pub fn simulate_macro_with(
    mats: &MacroMatrices,
    init: MacroState,
    reference: &ReferenceSignal,
    fleet_size: usize,
    off_requests: OffRequests,
) -> Result<MacroRun> {
    if (reference.dt() - mats.cfg.dt).abs() > 1e-9 {
        return Err(PemError::Signal(format!(
            "reference sampled every {} s but the model steps {} s",
            reference.dt(),
            mats.cfg.dt
        )));
    }
    if fleet_size == 0 {
        return Err(PemError::InvalidParameter("fleet size must be positive".into()));
    }
    let layout = mats.layout;
    let n_timer = mats.n_timer();
    init.check(&layout, n_timer, 0)?;
    let unit = mats.params.p_rate * fleet_size as f64;
    let readout = mats.readout();
    let p_ref = reference.power();
    let k_total = p_ref.len();

    let mut trace = MacroTrace::default();
    let mut states = Vec::with_capacity(k_total);
    let mut state = init;
    for k in 0..k_total {
        let p_agg = aggregate_power(&state.q, &readout, unit)?;
        trace.time.push(reference.time(k));
        trace.p_ref.push(p_ref[k]);
        trace.p_agg.push(p_agg);
        trace.optout_on.push(state.optout_on_mass(&layout));
        trace.optout_off.push(state.optout_off_mass(&layout));
        trace.mass_error.push(state.total_mass() - 1.0);
        trace.timer_mismatch.push(state.timer_mass() - state.on_mass(&layout));
        if k + 1 == k_total {
            push_idle(&mut trace, p_agg);
            states.push(state);
            break;
        }
        let (on_pool, off_pool, x_last) = request_pools(&state, mats);
        let off_pool = match off_requests {
            OffRequests::Enabled => off_pool,
            // only expiries are visible
            OffRequests::Disabled => x_last,
        };
        let betas = compute_betas(p_agg, p_ref[k + 1], on_pool, off_pool, x_last, unit);
        let betas = match off_requests {
            OffRequests::Enabled => betas,
            OffRequests::Disabled => BetaPair { beta_off: 0.0, ..betas },
        };
        let (next, flows) = macro_step_with_flows(&state, mats, betas.beta_on, betas.beta_off, k + 1)?;
        record_control(&mut trace, p_agg, &betas, &flows, off_pool, unit, fleet_size);
        states.push(state);
        state = next;
    }
    Ok(MacroRun { trace, states })
}

fn push_idle(trace: &mut MacroTrace, p_agg: f64) {
    trace.p_predicted.push(p_agg);
    trace.beta_on.push(0.0);
    trace.beta_off.push(0.0);
    trace.clamped.push(false);
    trace.n_req_on.push(0.0);
    trace.n_req_off.push(0.0);
    trace.optout_influx.push(0.0);
    trace.optout_outflux.push(0.0);
}

fn record_control(
    trace: &mut MacroTrace,
    p_agg: f64,
    betas: &BetaPair,
    flows: &StepFlows,
    off_pool: f64,
    unit: f64,
    fleet_size: usize,
) {
    trace
        .p_predicted
        .push(predicted_power_step(p_agg, betas, flows.n_req_on, off_pool, flows.x_p_last, unit));
    trace.beta_on.push(betas.beta_on);
    trace.beta_off.push(betas.beta_off);
    trace.clamped.push(betas.clamped);
    trace.n_req_on.push(flows.n_req_on);
    trace.n_req_off.push(flows.n_req_off);
    trace.optout_influx.push(flows.optout_influx);
    trace.optout_outflux.push(flows.optout_outflux);
    let devices = fleet_size as f64;
    trace
        .completions
        .extend(flows.completions.iter().map(|(len, w)| (*len, w * devices)));
}

/// Writes per-step `q` and `x_p` snapshots, one state per line.
pub fn write_state_snapshots(path: &Path, states: &[MacroState]) -> Result<()> {
    let f = File::create(path).map_err(|e| PemError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| PemError::io(path, e);
    writeln!(w, "step,kind,values").map_err(io)?;
    for (k, s) in states.iter().enumerate() {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        writeln!(w, "{k},q,{}", join(&s.q)).map_err(io)?;
        writeln!(w, "{k},x_p,{}", join(&s.x_p)).map_err(io)?;
    }
    w.flush().map_err(io)
}
