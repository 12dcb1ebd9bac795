//! Brute-force reference for one aggregate step on a 4-bin, 3-timer-bin
//! instance, enumerating every (state, event) pair a single device can go
//! through.

#![allow(dead_code)]

use pem_core::device::PemConfig;
use pem_core::macro_model::{BinGrid, MacroMatrices};
use pem_core::thermal::{DeviceParams, ThermalBand};

pub const N: usize = 4;
const DEPTH: usize = 1;
const Z: usize = DEPTH + 1;
const T_AMB: f64 = 89.0;

fn cfg() -> PemConfig {
    PemConfig {
        packet_len: 180.0,
        dt: 60.0,
        mttr_on: 300.0,
        mttr_off: 120.0,
        t_lockout: 60.0,
        t_on_max: 180.0,
        optout_reentry: 0.25,
        denial_backoff: false,
    }
}

fn params() -> DeviceParams {
    DeviceParams {
        r_eq: 2.5,
        c_eq: 1.8,
        eta: 3.5,
        p_rate: 6.0,
        noise_std: 0.0,
    }
}

pub fn mats() -> MacroMatrices {
    let grid = BinGrid::new(N, ThermalBand { t_set: 73.0, deadband: 2.0 }).unwrap();
    MacroMatrices::build(&params(), grid, &cfg(), T_AMB).unwrap()
}

// Index helpers written out for the (opt_on, opt_off, on, off) ordering.
fn opt_on(k: usize) -> usize {
    k
}
fn opt_off(k: usize) -> usize {
    Z + k
}
pub fn on(i: usize) -> usize {
    2 * Z + i
}
pub fn off(i: usize) -> usize {
    2 * Z + N + i
}
pub const LEN: usize = 2 * Z + 2 * N;
pub const N_TIMER: usize = 3;

const WIDTH: f64 = 0.5;
const T_MIN: f64 = 72.0;
const T_MAX: f64 = 74.0;

pub fn temp_of(s: usize) -> f64 {
    if s < Z {
        T_MAX + 0.5 * WIDTH - s as f64 * WIDTH
    } else if s < 2 * Z {
        T_MIN - 0.5 * WIDTH + (s - Z) as f64 * WIDTH
    } else {
        let i = (s - 2 * Z) % N;
        T_MIN + (i as f64 + 0.5) * WIDTH
    }
}

/// Fraction of mass that moves one bin in one step and whether it moves up.
pub fn drift(t: f64, on_mode: bool) -> (f64, bool) {
    let p = params();
    let tau_h = p.r_eq * p.c_eq;
    let a = (cfg().dt / 3600.0) / tau_h;
    let eq = if on_mode { T_AMB - p.eta * p.p_rate * p.r_eq } else { T_AMB };
    let image = (1.0 - a) * t + a * eq;
    ((image - t).abs() / WIDTH, image >= t)
}

/// Where a moving share of state `s` lands.
fn neighbour(s: usize, up: bool) -> usize {
    if s < Z {
        // ON-side opt-out chain, cooling toward re-entry
        match (up, s) {
            (true, 0) => s,
            (true, k) => opt_on(k - 1),
            (false, k) if k + 1 < Z => opt_on(k + 1),
            (false, _) => off(N - 1 - DEPTH),
        }
    } else if s < 2 * Z {
        let k = s - Z;
        match (up, k) {
            (false, 0) => s,
            (false, k) => opt_off(k - 1),
            (true, k) if k + 1 < Z => opt_off(k + 1),
            (true, _) => off(DEPTH),
        }
    } else {
        let is_on = s < 2 * Z + N;
        let i = (s - 2 * Z) % N;
        let same = |j: usize| if is_on { on(j) } else { off(j) };
        match up {
            true if i + 1 < N => same(i + 1),
            true => opt_on(0),
            false if i > 0 => same(i - 1),
            false => opt_off(0),
        }
    }
}

fn state_is_on_mode(s: usize) -> bool {
    s < Z || (2 * Z..2 * Z + N).contains(&s)
}

fn p_req_on(t: f64) -> f64 {
    let mu = (t - T_MIN) / (T_MAX - t) / cfg().mttr_on;
    1.0 - (-mu * cfg().dt).exp()
}

/// OFF request probability at timer index r (elapsed (r+1)·Δt).
fn p_req_off(r: usize) -> f64 {
    let elapsed_bins = r + 1;
    let (r_lo, n) = (1, N_TIMER);
    if elapsed_bins <= r_lo {
        0.0
    } else if elapsed_bins >= n {
        1.0
    } else {
        let mu = (elapsed_bins - r_lo) as f64 / (n - elapsed_bins) as f64 / cfg().mttr_off;
        1.0 - (-mu * cfg().dt).exp()
    }
}

/// Timer index a fresh packet starts in when accepted from ON bin i.
pub fn placement(i: usize) -> usize {
    let p = params();
    let eq = T_AMB - p.eta * p.p_rate * p.r_eq;
    let t0 = T_MIN + (i as f64 + 0.5) * WIDTH;
    let residence_s = p.r_eq * p.c_eq * ((t0 - eq) / (T_MIN - eq)).ln() * 3600.0;
    let residence = residence_s.min(cfg().packet_len);
    (((cfg().packet_len - residence) / cfg().dt + 1e-9).floor() as usize).min(N_TIMER - 1)
}

pub fn brute_force(q: &[f64], x_p: &[f64], beta_on: f64, beta_off: f64) -> (Vec<f64>, Vec<f64>) {
    // expected fraction of the ON population whose packet ends this step
    let timer_total: f64 = x_p.iter().sum();
    let mut leaving = 0.0;
    for r in 0..N_TIMER {
        let accepted = beta_off * p_req_off(r);
        let ends = if r == N_TIMER - 1 { 1.0 } else { accepted };
        leaving += x_p[r] * ends;
    }
    let beta_minus = if timer_total > 0.0 { leaving / timer_total } else { 0.0 };

    // request phase, one device state at a time
    let mut mid = [0.0; LEN];
    let mut accepted_on = [0.0; N];
    for s in 0..LEN {
        let mass = q[s];
        if (2 * Z..2 * Z + N).contains(&s) {
            let i = s - 2 * Z;
            mid[off(i)] += mass * beta_minus;
            mid[s] += mass * (1.0 - beta_minus);
        } else if s >= 2 * Z + N {
            let i = s - 2 * Z - N;
            let g = beta_on * p_req_on(temp_of(s));
            mid[on(i)] += mass * g;
            accepted_on[i] += mass * g;
            mid[s] += mass * (1.0 - g);
        } else {
            mid[s] += mass;
        }
    }

    // drift phase
    let mut next = vec![0.0; LEN];
    for s in 0..LEN {
        let (f, up) = drift(temp_of(s), state_is_on_mode(s));
        next[s] += mid[s] * (1.0 - f);
        next[neighbour(s, up)] += mid[s] * f;
    }

    // timer: survivors age by one bin, fresh packets start at their placement
    let mut timer = vec![0.0; N_TIMER];
    for r in 0..N_TIMER - 1 {
        timer[r + 1] += x_p[r] * (1.0 - beta_off * p_req_off(r));
    }
    for i in 0..N {
        timer[placement(i)] += accepted_on[i];
    }
    let on_before: f64 = (0..N).map(|i| mid[on(i)]).sum();
    let on_after: f64 = (0..N).map(|i| next[on(i)]).sum();
    if on_before > 0.0 {
        timer.iter_mut().for_each(|v| *v *= on_after / on_before);
    }
    (next, timer)
}

