//! Acceptance gate: every criterion runs at its stated size and tolerance,
//! prints one PASS/FAIL line, and any failure makes the process exit non-zero.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pem_core::device::PemConfig;
use pem_core::macro_model::{
    macro_step, simulate_macro, stationary_on_mass, uniform_off_init, BinGrid, MacroMatrices, MacroRun, MacroState,
};
use pem_core::micro::{simulate_hysteresis, MicroRun};
use pem_core::scenario::{run_packet_study, run_robustness, run_track, run_validate, ScenarioConfig};
use pem_core::signals::sinusoid_ref;
use pem_core::thermal::{analytic_duty_cycle, DeviceParams, ThermalBand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOMINAL_KW: f64 = 1800.0;

// 1
const MASS_TOL: f64 = 1e-9;
const TIMER_TOL: f64 = 1e-6;
const MASS_RUN_LIMIT: Duration = Duration::from_secs(5);
// 2
const DUTY_MICRO_REL: f64 = 0.01;
const DUTY_MACRO_REL: f64 = 0.02;
const DUTY_LIMIT: Duration = Duration::from_secs(30);
// 3
const ORACLE_STATES: usize = 1000;
const ORACLE_TOL: f64 = 1e-12;
// 4
const VALIDATE_RMSE_FRACTION: f64 = 0.15;
const EVENT_WINDOW_S: f64 = 300.0;
const VALIDATE_LIMIT: Duration = Duration::from_secs(120);
// 5
const MEAN_NORM_MAX: f64 = 0.2;
const STD_NORM_MAX: f64 = 0.15;
const PEARSON_MIN: f64 = 0.8;
// 6
const TRACK_RMSE_FRACTION: f64 = 0.05;
const TRACK_LIMIT: Duration = Duration::from_secs(120);
// 7
const EXACT_TRACKING_TOL_KW: f64 = 1e-9;
// 8
const PACKET_MEAN_DIFF_S: f64 = 10.0;
const PACKET_STD_DIFF_S: f64 = 15.0;
// 9
const SPEARMAN_MIN: f64 = 0.6;
const ROBUSTNESS_LIMIT: Duration = Duration::from_secs(600);

struct Gate {
    results: Vec<bool>,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push(pass);
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn default_mats() -> MacroMatrices {
    let grid = BinGrid::new(40, ThermalBand::default()).unwrap();
    MacroMatrices::build(&DeviceParams::default(), grid, &PemConfig::default(), 89.0).unwrap()
}

fn mass_conservation(gate: &mut Gate) -> MacroRun {
    let started = Instant::now();
    let mats = default_mats();
    let reference = sinusoid_ref(3600.0, 2.0).unwrap();
    let run = simulate_macro(&mats, uniform_off_init(&mats), &reference, 2000).unwrap();
    let elapsed = started.elapsed();
    let steps = run.trace.len() - 1;
    let mass = run.trace.mass_error.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    let timer = run.trace.timer_mismatch.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    gate.report(
        1,
        "mass conservation",
        steps == 1800 && mass <= MASS_TOL && timer <= TIMER_TOL && elapsed < MASS_RUN_LIMIT,
        format!(
            "{steps} steps, max |1ᵀq−1| = {mass:.2e} (≤ {MASS_TOL:.0e}), max timer mismatch = {timer:.2e} (≤ {TIMER_TOL:.0e}), {} (< {})",
            secs(elapsed),
            secs(MASS_RUN_LIMIT)
        ),
    );
    run
}

fn duty_cycle(gate: &mut Gate) {
    let started = Instant::now();
    let params = DeviceParams::default();
    let band = ThermalBand::default();
    let duty = analytic_duty_cycle(&params, &band, 89.0).unwrap();
    let run = simulate_hysteresis(&params, &band, 89.0, 2.0, 500, 24.0 * 3600.0, 1, |_, _| {}).unwrap();
    let micro = run.mean_duty(0);
    let macro_on = stationary_on_mass(&default_mats()).unwrap();
    let elapsed = started.elapsed();
    let (e_micro, e_macro) = ((micro - duty).abs() / duty, (macro_on - duty).abs() / duty);
    gate.report(
        2,
        "duty-cycle oracle",
        e_micro <= DUTY_MICRO_REL && e_macro <= DUTY_MACRO_REL && elapsed < DUTY_LIMIT,
        format!(
            "analytic {duty:.5}; micro {micro:.5} ({:.3}% ≤ {}%), macro stationary {macro_on:.5} ({:.3}% ≤ {}%), {} (< {})",
            100.0 * e_micro,
            100.0 * DUTY_MICRO_REL,
            100.0 * e_macro,
            100.0 * DUTY_MACRO_REL,
            secs(elapsed),
            secs(DUTY_LIMIT)
        ),
    );
}

fn small_instance(gate: &mut Gate) {
    let mats = common::mats();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..ORACLE_STATES {
        let raw: Vec<f64> = (0..common::LEN).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let on: f64 = (0..common::N).map(|i| q[common::on(i)]).sum();
        let x_raw: Vec<f64> = (0..common::N_TIMER).map(|_| rng.random::<f64>() + 1e-6).collect();
        let xt: f64 = x_raw.iter().sum();
        let x_p: Vec<f64> = x_raw.iter().map(|v| v / xt * on).collect();
        let beta: f64 = rng.random();
        let (b_on, b_off) = match k % 3 {
            0 => (beta, 0.0),
            1 => (0.0, beta),
            _ => (0.0, 0.0),
        };
        let got = macro_step(&MacroState { q: q.clone(), x_p: x_p.clone() }, &mats, b_on, b_off).unwrap();
        let (q_ref, x_ref) = common::brute_force(&q, &x_p, b_on, b_off);
        for (a, b) in got.q.iter().zip(&q_ref).chain(got.x_p.iter().zip(&x_ref)) {
            worst = worst.max((a - b).abs());
        }
    }
    gate.report(
        3,
        "small-instance oracle",
        worst <= ORACLE_TOL,
        format!("N = 4, n = 3, {ORACLE_STATES} random states, max deviation {worst:.2e} (≤ {ORACLE_TOL:.0e})"),
    );
}

fn complementary_macro(run: &MacroRun) -> bool {
    run.trace.beta_on.iter().zip(&run.trace.beta_off).all(|(a, b)| a * b == 0.0)
}

fn complementary_micro(run: &MicroRun) -> bool {
    run.trace.iter().all(|s| s.beta_on * s.beta_off == 0.0)
}

/// Largest |predicted − reference| over unclamped steps, and their count.
fn exact_tracking(run: &MacroRun) -> (f64, usize) {
    let t = &run.trace;
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..t.len() - 1 {
        if !t.clamped[k] {
            worst = worst.max((t.p_predicted[k] - t.p_ref[k + 1]).abs());
            count += 1;
        }
    }
    (worst, count)
}

fn main() -> ExitCode {
    let mut gate = Gate { results: Vec::new() };

    let mass_run = mass_conservation(&mut gate);
    duty_cycle(&mut gate);
    small_instance(&mut gate);

    // 4 and 5 share the validation run
    let started = Instant::now();
    let v = run_validate(&ScenarioConfig::validation(), None).unwrap();
    let elapsed = started.elapsed();
    let (me, mi) = (&v.macro_event, &v.micro_event);
    let event_gap = match (me.loss_at, mi.loss_at) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    let show = |t: Option<f64>| t.map_or_else(|| "none".to_string(), |t| format!("{t:.0} s"));
    gate.report(
        4,
        "sinusoid validation",
        v.power_rmse <= VALIDATE_RMSE_FRACTION * NOMINAL_KW
            && me.surge()
            && mi.surge()
            && event_gap.is_some_and(|g| g <= EVENT_WINDOW_S)
            && elapsed < VALIDATE_LIMIT,
        format!(
            "RMSE {:.1} kW = {:.2}% (≤ {}%); tracking loss macro {} / micro {}, surge macro {} / micro {}, gap {} (≤ {EVENT_WINDOW_S:.0} s); {} (< {})",
            v.power_rmse,
            100.0 * v.power_rmse / NOMINAL_KW,
            100.0 * VALIDATE_RMSE_FRACTION,
            show(me.loss_at),
            show(mi.loss_at),
            show(me.surge_at),
            show(mi.surge_at),
            show(event_gap),
            secs(elapsed),
            secs(VALIDATE_LIMIT)
        ),
    );
    let n = &v.norms;
    gate.report(
        5,
        "temperature statistics",
        n.mean_2norm_per_step <= MEAN_NORM_MAX && n.std_2norm_per_step <= STD_NORM_MAX && v.final_pearson >= PEARSON_MIN,
        format!(
            "per-step 2-norm mean {:.4} °F (≤ {MEAN_NORM_MAX}), std {:.4} °F (≤ {STD_NORM_MAX}); final Pearson {:.3} (≥ {PEARSON_MIN})",
            n.mean_2norm_per_step, n.std_2norm_per_step, v.final_pearson
        ),
    );

    let started = Instant::now();
    let t = run_track(&ScenarioConfig::tracking(), None).unwrap();
    let elapsed = started.elapsed();
    let cross = t.comparison.power_rmse;
    gate.report(
        6,
        "regulation tracking",
        cross <= TRACK_RMSE_FRACTION * NOMINAL_KW && t.macro_tracking_rmse <= t.micro_tracking_rmse && elapsed < TRACK_LIMIT,
        format!(
            "macro-micro RMSE {cross:.1} kW (≤ {:.0} kW); tracking RMSE macro {:.2} kW ≤ micro {:.2} kW; {} (< {})",
            TRACK_RMSE_FRACTION * NOMINAL_KW,
            t.macro_tracking_rmse,
            t.micro_tracking_rmse,
            secs(elapsed),
            secs(TRACK_LIMIT)
        ),
    );

    let macro_runs = [&mass_run, &v.macro_run, &t.comparison.macro_run];
    let micro_runs = [&v.micro_run, &t.comparison.micro_run];
    let mut worst = 0.0f64;
    let mut unclamped = 0;
    for r in macro_runs {
        let (w, c) = exact_tracking(r);
        worst = worst.max(w);
        unclamped += c;
    }
    let complementary = macro_runs.iter().all(|r| complementary_macro(r)) && micro_runs.iter().all(|r| complementary_micro(r));
    gate.report(
        7,
        "policy exactness",
        unclamped > 0 && worst <= EXACT_TRACKING_TOL_KW && complementary,
        format!(
            "{unclamped} unclamped steps, max |predicted − reference| {worst:.2e} kW (≤ {EXACT_TRACKING_TOL_KW:.0e}); complementarity on every step: {complementary}"
        ),
    );

    let p = run_packet_study(&ScenarioConfig::tracking(), None).unwrap();
    let mean_diff = (p.macro_packets.mean - p.micro_packets.mean).abs();
    let std_diff = (p.macro_packets.std - p.micro_packets.std).abs();
    gate.report(
        8,
        "packet-length study",
        mean_diff <= PACKET_MEAN_DIFF_S
            && std_diff <= PACKET_STD_DIFF_S
            && p.rmse_fixed > p.rmse_sampled
            && p.rmse_sampled > p.rmse_enhanced,
        format!(
            "mean macro {:.1} / micro {:.1} s (Δ {mean_diff:.1} ≤ {PACKET_MEAN_DIFF_S}), std {:.1} / {:.1} s (Δ {std_diff:.1} ≤ {PACKET_STD_DIFF_S}); RMSE fixed {:.1} > sampled {:.1} > enhanced {:.1} kW",
            p.macro_packets.mean,
            p.micro_packets.mean,
            p.macro_packets.std,
            p.micro_packets.std,
            p.rmse_fixed,
            p.rmse_sampled,
            p.rmse_enhanced
        ),
    );

    let started = Instant::now();
    let r = run_robustness(&ScenarioConfig::tracking(), None).unwrap();
    let elapsed = started.elapsed();
    let kld0 = r.points.first().map_or(f64::NAN, |p| p.kld_mean);
    gate.report(
        9,
        "robustness sweep",
        kld0 > 0.0 && r.kld_trend >= SPEARMAN_MIN && r.rmse_vs_kld >= SPEARMAN_MIN && elapsed < ROBUSTNESS_LIMIT,
        format!(
            "KLD at 0% {kld0:.4} (> 0); Spearman(heterogeneity, KLD) {:.3} (≥ {SPEARMAN_MIN}); Spearman(KLD, %RMSE) {:.3} (≥ {SPEARMAN_MIN}); {} (< {})",
            r.kld_trend,
            r.rmse_vs_kld,
            secs(elapsed),
            secs(ROBUSTNESS_LIMIT)
        ),
    );

    let cfg = ScenarioConfig::validation();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_validate(&cfg, Some(a.path())).unwrap();
    run_validate(&cfg, Some(b.path())).unwrap();
    let same = ["macro_trace.csv", "micro_trace.csv"].iter().all(|f| {
        let x = fs::read(a.path().join(f)).unwrap();
        !x.is_empty() && x == fs::read(b.path().join(f)).unwrap()
    });
    gate.report(
        10,
        "determinism",
        same,
        format!("two validate runs with seed {}: trace CSVs byte-identical: {same}", cfg.seed),
    );

    let passed = gate.results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", gate.results.len());
    if passed == gate.results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
