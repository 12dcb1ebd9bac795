//! The experiment workflows: sinusoid validation, regulation tracking,
//! heterogeneity robustness sweep, packet-length study and steady state.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{PemError, Result};
use crate::macro_model::{
    simulate_macro, stationary_distribution, steady_state_init, temperature_summary, uniform_off_init, MacroMatrices,
    MacroRun,
};
use crate::metrics::{
    kld_series, mean_kld, packet_length_stats, pearson, rmse, spearman, temp_stat_norms, PacketLengthStats,
    TempNorms, TempStats, KLD_SMOOTHING, MIN_COUNTED_PACKET,
};
use crate::micro::{
    run_conventional_pem, simulate_micro, Execution, Heterogeneity, MicroFleet, MicroRun, MicroSettings,
    PacketDistribution, PacketPolicy,
};
use crate::scenario::config::ScenarioConfig;
use crate::scenario::report::{detect_tracking_loss, write_manifest, Summary, TrackingEvent};
use crate::signals::ReferenceSignal;
use crate::thermal::analytic_duty_cycle;

fn matrices(cfg: &ScenarioConfig) -> Result<MacroMatrices> {
    let mut nominal = cfg.params()?;
    nominal.noise_std = 0.0;
    MacroMatrices::build(&nominal, cfg.grid()?, &cfg.pem, cfg.band.ambient)
}

fn settings(cfg: &ScenarioConfig, execution: Execution) -> Result<MicroSettings> {
    Ok(MicroSettings {
        t_amb: cfg.band.ambient,
        execution,
        grid: cfg.grid()?,
    })
}

fn execution(cfg: &ScenarioConfig) -> Execution {
    if cfg.fleet.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PemError::io(dir, e))
}

fn write_temp_stats(path: &Path, time: &[f64], macro_stats: &TempStats, micro_stats: &TempStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "macro_mean", "macro_std", "micro_mean", "micro_std"])?;
    for k in 0..time.len() {
        w.write_record([
            time[k].to_string(),
            macro_stats.mean[k].to_string(),
            macro_stats.std[k].to_string(),
            micro_stats.mean[k].to_string(),
            micro_stats.std[k].to_string(),
        ])?;
    }
    w.flush().map_err(|e| PemError::io(path, e))
}

fn write_distribution(path: &Path, midpoints: &[f64], macro_d: &[f64], micro_d: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_midpoint", "macro", "micro"])?;
    for i in 0..midpoints.len() {
        w.write_record([midpoints[i].to_string(), macro_d[i].to_string(), micro_d[i].to_string()])?;
    }
    w.flush().map_err(|e| PemError::io(path, e))
}

fn write_histogram(path: &Path, columns: &[(&str, &PacketLengthStats)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["bin_start_s".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    let edges = &columns[0].1.edges;
    for (i, e) in edges.iter().enumerate() {
        let mut row = vec![e.to_string()];
        row.extend(columns.iter().map(|(_, s)| s.histogram[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| PemError::io(path, e))
}

fn push_norms(s: &mut Summary, n: &TempNorms) {
    s.push("temp_mean_2norm", n.mean_2norm);
    s.push("temp_mean_2norm_per_step", n.mean_2norm_per_step);
    s.push("temp_mean_infnorm", n.mean_infnorm);
    s.push("temp_std_2norm", n.std_2norm);
    s.push("temp_std_2norm_per_step", n.std_2norm_per_step);
    s.push("temp_std_infnorm", n.std_infnorm);
}

fn push_event(s: &mut Summary, prefix: &str, e: &TrackingEvent) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |t| t.to_string());
    s.push(format!("{prefix}_acquired_s"), fmt(e.acquired_at));
    s.push(format!("{prefix}_tracking_loss_s"), fmt(e.loss_at));
    s.push(format!("{prefix}_optout_surge_s"), fmt(e.surge_at));
    s.push(format!("{prefix}_max_optout"), e.max_optout);
}

fn macro_optout(run: &MacroRun) -> Vec<f64> {
    run.trace
        .optout_on
        .iter()
        .zip(&run.trace.optout_off)
        .map(|(a, b)| a + b)
        .collect()
}

fn micro_optout(run: &MicroRun) -> Vec<f64> {
    run.trace.iter().map(|s| s.optout_fraction).collect()
}

/// Outputs of the sinusoid validation experiment.
#[derive(Debug, Clone)]
pub struct ValidateReport {
    pub summary: Summary,
    pub macro_run: MacroRun,
    pub micro_run: MicroRun,
    pub macro_stats: TempStats,
    pub micro_stats: TempStats,
    pub norms: TempNorms,
    pub power_rmse: f64,
    pub final_pearson: f64,
    pub mean_kld: f64,
    pub macro_event: TrackingEvent,
    pub micro_event: TrackingEvent,
}

/// Micro and macro models on the same reference from an all-OFF fleet
/// spread uniformly over the deadband.
pub fn run_validate(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<ValidateReport> {
    cfg.validate()?;
    let mats = matrices(cfg)?;
    let reference = cfg.reference()?;
    let macro_run = simulate_macro(&mats, uniform_off_init(&mats), &reference, cfg.fleet.size)?;
    let mut fleet = MicroFleet::uniform_off(
        cfg.fleet.size,
        &cfg.params()?,
        cfg.band()?,
        cfg.fleet.heterogeneity(),
        cfg.seed,
    )?;
    let micro_run = simulate_micro(&mut fleet, &cfg.pem, &reference, &settings(cfg, execution(cfg))?)?;
    let report = compare(cfg, &mats, &reference, macro_run, micro_run)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        report.macro_run.trace.write_csv(&dir.join("macro_trace.csv"))?;
        report.micro_run.write_csv(&dir.join("micro_trace.csv"))?;
        write_temp_stats(
            &dir.join("temperature_stats.csv"),
            &report.macro_run.trace.time,
            &report.macro_stats,
            &report.micro_stats,
        )?;
        let (_, dist) = temperature_summary(&report.macro_run.states, &mats);
        write_distribution(
            &dir.join("final_distribution.csv"),
            &mats.grid.midpoints(),
            dist.steps.last().expect("non-empty run"),
            report.micro_run.distribution.steps.last().expect("non-empty run"),
        )?;
        report.summary.write(&dir.join("summary.txt"))?;
        write_manifest(
            dir,
            "validate",
            cfg,
            &[
                "macro_trace.csv",
                "micro_trace.csv",
                "temperature_stats.csv",
                "final_distribution.csv",
                "summary.txt",
            ],
        )?;
    }
    Ok(report)
}

fn compare(
    cfg: &ScenarioConfig,
    mats: &MacroMatrices,
    reference: &ReferenceSignal,
    macro_run: MacroRun,
    micro_run: MicroRun,
) -> Result<ValidateReport> {
    let (macro_stats, macro_dist) = temperature_summary(&macro_run.states, mats);
    let micro_stats = micro_run.temperature_stats();
    let norms = temp_stat_norms(&macro_stats, &micro_stats)?;
    let micro_p = micro_run.p_agg();
    let power_rmse = rmse(&macro_run.trace.p_agg, &micro_p)?;
    let final_macro = macro_dist.steps.last().expect("non-empty run");
    let final_micro = micro_run.distribution.steps.last().expect("non-empty run");
    let final_pearson = pearson(final_macro, final_micro).unwrap_or(f64::NAN);
    let kld = mean_kld(&macro_dist, &micro_run.distribution.smoothed(KLD_SMOOTHING))?;
    let time = &macro_run.trace.time;
    let macro_event = detect_tracking_loss(
        time,
        &macro_run.trace.p_agg,
        reference.power(),
        &macro_optout(&macro_run),
        &cfg.event,
        cfg.nominal_kw,
    );
    let micro_event = detect_tracking_loss(
        time,
        &micro_p,
        reference.power(),
        &micro_optout(&micro_run),
        &cfg.event,
        cfg.nominal_kw,
    );

    let mut s = Summary::default();
    s.push("fleet_size", cfg.fleet.size);
    s.push("steps", time.len().saturating_sub(1));
    s.push("power_rmse_macro_micro_kw", power_rmse);
    s.push("power_rmse_macro_micro_pct", 100.0 * power_rmse / cfg.nominal_kw);
    s.push("power_rmse_macro_ref_kw", rmse(&macro_run.trace.p_agg, reference.power())?);
    s.push("power_rmse_micro_ref_kw", rmse(&micro_p, reference.power())?);
    push_norms(&mut s, &norms);
    s.push("temp_mean_rmse", rmse(&macro_stats.mean, &micro_stats.mean)?);
    s.push("final_distribution_pearson", final_pearson);
    s.push("final_macro_mean", *macro_stats.mean.last().unwrap());
    s.push("final_macro_std", *macro_stats.std.last().unwrap());
    s.push("final_micro_mean", *micro_stats.mean.last().unwrap());
    s.push("final_micro_std", *micro_stats.std.last().unwrap());
    s.push("mean_kld", kld);
    push_event(&mut s, "macro", &macro_event);
    push_event(&mut s, "micro", &micro_event);
    Ok(ValidateReport {
        summary: s,
        macro_run,
        micro_run,
        macro_stats,
        micro_stats,
        norms,
        power_rmse,
        final_pearson,
        mean_kld: kld,
        macro_event,
        micro_event,
    })
}

/// Outputs of the regulation tracking experiment.
#[derive(Debug, Clone)]
pub struct TrackReport {
    pub summary: Summary,
    pub comparison: ValidateReport,
    pub macro_tracking_rmse: f64,
    pub micro_tracking_rmse: f64,
    pub temp_mean_rmse: f64,
}

/// Both models tracking the configured signal from the steady state.
pub fn run_track(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<TrackReport> {
    cfg.validate()?;
    let mats = matrices(cfg)?;
    let reference = cfg.reference()?;
    let (macro_run, micro_run) = steady_state_pair(cfg, &mats, &reference, cfg.fleet.heterogeneity(), cfg.seed, execution(cfg))?;
    let comparison = compare(cfg, &mats, &reference, macro_run, micro_run)?;
    let macro_tracking_rmse = rmse(&comparison.macro_run.trace.p_agg, reference.power())?;
    let micro_tracking_rmse = rmse(&comparison.micro_run.p_agg(), reference.power())?;
    let temp_mean_rmse = rmse(&comparison.macro_stats.mean, &comparison.micro_stats.mean)?;
    let summary = comparison.summary.clone();
    let report = TrackReport {
        summary,
        macro_tracking_rmse,
        micro_tracking_rmse,
        temp_mean_rmse,
        comparison,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        reference.write_csv(&dir.join("reference.csv"))?;
        report.comparison.macro_run.trace.write_csv(&dir.join("macro_trace.csv"))?;
        report.comparison.micro_run.write_csv(&dir.join("micro_trace.csv"))?;
        write_temp_stats(
            &dir.join("temperature_stats.csv"),
            &report.comparison.macro_run.trace.time,
            &report.comparison.macro_stats,
            &report.comparison.micro_stats,
        )?;
        report.summary.write(&dir.join("summary.txt"))?;
        write_manifest(
            dir,
            "track",
            cfg,
            &["reference.csv", "macro_trace.csv", "micro_trace.csv", "temperature_stats.csv", "summary.txt"],
        )?;
    }
    Ok(report)
}

fn steady_state_pair(
    cfg: &ScenarioConfig,
    mats: &MacroMatrices,
    reference: &ReferenceSignal,
    heterogeneity: Heterogeneity,
    seed: u64,
    exec: Execution,
) -> Result<(MacroRun, MicroRun)> {
    let macro_run = simulate_macro(mats, steady_state_init(mats)?, reference, cfg.fleet.size)?;
    let mut fleet = MicroFleet::steady_state(cfg.fleet.size, &cfg.params()?, heterogeneity, mats, seed)?;
    let micro_run = simulate_micro(&mut fleet, &cfg.pem, reference, &settings(cfg, exec)?)?;
    Ok((macro_run, micro_run))
}

/// One heterogeneity level of the robustness sweep, worst case over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessPoint {
    pub heterogeneity: f64,
    /// Largest mean KLD over the seeds.
    pub kld_mean: f64,
    /// Standard deviation over time of the per-step KLD of the worst seed.
    pub kld_std: f64,
    /// Largest macro-vs-micro power RMSE over the seeds, % of nominal.
    pub rmse_pct: f64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub summary: Summary,
    pub points: Vec<RobustnessPoint>,
    pub kld_trend: f64,
    pub rmse_vs_kld: f64,
}

struct SubRun {
    kld_mean: f64,
    kld_std: f64,
    rmse_pct: f64,
}

/// Sweeps the heterogeneity of R, C and rated power; sub-runs execute
/// concurrently and are merged in grid order.
pub fn run_robustness(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<RobustnessReport> {
    cfg.validate()?;
    let mats = matrices(cfg)?;
    let reference = cfg.reference()?;
    let sub_cfg = ScenarioConfig {
        fleet: crate::scenario::config::FleetConfig {
            size: cfg.robustness.fleet_size,
            ..cfg.fleet.clone()
        },
        ..cfg.clone()
    };
    let macro_run = simulate_macro(&mats, steady_state_init(&mats)?, &reference, sub_cfg.fleet.size)?;
    let (_, macro_dist) = temperature_summary(&macro_run.states, &mats);
    let seeds = cfg.robustness.seeds_per_point;
    let jobs: Vec<(usize, f64, u64)> = cfg
        .robustness
        .grid
        .iter()
        .enumerate()
        .flat_map(|(i, h)| (0..seeds as u64).map(move |s| (i, *h, s)))
        .collect();
    let run_one = |&(_, h, s): &(usize, f64, u64)| -> Result<SubRun> {
        let mut fleet =
            MicroFleet::steady_state(sub_cfg.fleet.size, &sub_cfg.params()?, Heterogeneity::uniform(h), &mats, cfg.seed.wrapping_add(s))?;
        let micro = simulate_micro(&mut fleet, &sub_cfg.pem, &reference, &settings(&sub_cfg, Execution::Sequential)?)?;
        let series = kld_series(&macro_dist, &micro.distribution.smoothed(KLD_SMOOTHING))?;
        let k = series.len() as f64;
        let mean = series.iter().sum::<f64>() / k;
        let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        let rmse_kw = rmse(&macro_run.trace.p_agg, &micro.p_agg())?;
        Ok(SubRun {
            kld_mean: mean,
            kld_std: var.sqrt(),
            rmse_pct: 100.0 * rmse_kw / cfg.nominal_kw,
        })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<SubRun>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<SubRun>> = jobs.iter().map(run_one).collect();

    let mut by_point: BTreeMap<usize, Vec<Result<SubRun>>> = BTreeMap::new();
    for ((i, _, _), r) in jobs.iter().zip(results) {
        by_point.entry(*i).or_default().push(r);
    }
    let mut points = Vec::new();
    for (i, runs) in by_point {
        let failures = runs.iter().filter(|r| r.is_err()).count();
        let ok: Vec<SubRun> = runs.into_iter().filter_map(|r| r.ok()).collect();
        let worst = ok.iter().max_by(|a, b| a.kld_mean.total_cmp(&b.kld_mean));
        points.push(RobustnessPoint {
            heterogeneity: cfg.robustness.grid[i],
            kld_mean: worst.map_or(f64::NAN, |w| w.kld_mean),
            kld_std: worst.map_or(f64::NAN, |w| w.kld_std),
            rmse_pct: ok.iter().map(|r| r.rmse_pct).fold(f64::NAN, f64::max),
            failures,
        });
    }
    let valid: Vec<&RobustnessPoint> = points.iter().filter(|p| p.kld_mean.is_finite()).collect();
    let h: Vec<f64> = valid.iter().map(|p| p.heterogeneity).collect();
    let kl: Vec<f64> = valid.iter().map(|p| p.kld_mean).collect();
    let rm: Vec<f64> = valid.iter().map(|p| p.rmse_pct).collect();
    let kld_trend = spearman(&h, &kl).unwrap_or(f64::NAN);
    let rmse_vs_kld = spearman(&kl, &rm).unwrap_or(f64::NAN);

    let mut s = Summary::default();
    s.push("points", points.len());
    s.push("seeds_per_point", seeds);
    s.push("fleet_size", sub_cfg.fleet.size);
    s.push("failed_subruns", points.iter().map(|p| p.failures).sum::<usize>());
    s.push("spearman_heterogeneity_kld", kld_trend);
    s.push("spearman_kld_rmse", rmse_vs_kld);
    if let Some(first) = points.first() {
        s.push("kld_at_lowest_heterogeneity", first.kld_mean);
    }
    let cutoff = points
        .iter()
        .find(|p| p.rmse_pct > 10.0)
        .map_or_else(|| "none".to_string(), |p| p.heterogeneity.to_string());
    s.push("first_heterogeneity_above_10pct_rmse", cutoff);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let path = dir.join("robustness.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["heterogeneity", "kld_mean", "kld_std", "rmse_pct", "failures"])?;
        for p in &points {
            w.write_record([
                p.heterogeneity.to_string(),
                p.kld_mean.to_string(),
                p.kld_std.to_string(),
                p.rmse_pct.to_string(),
                p.failures.to_string(),
            ])?;
        }
        w.flush().map_err(|e| PemError::io(&path, e))?;
        s.write(&dir.join("summary.txt"))?;
        write_manifest(dir, "robustness", cfg, &["robustness.csv", "summary.txt"])?;
    }
    Ok(RobustnessReport {
        summary: s,
        points,
        kld_trend,
        rmse_vs_kld,
    })
}

#[derive(Debug, Clone)]
pub struct PacketStudyReport {
    pub summary: Summary,
    pub macro_packets: PacketLengthStats,
    pub micro_packets: PacketLengthStats,
    pub fixed_length_s: f64,
    pub rmse_fixed: f64,
    pub rmse_sampled: f64,
    /// Tracking error of the aggregate model with OFF requests.
    pub rmse_enhanced: f64,
    pub rmse_enhanced_micro: f64,
}

/// Packet lengths emerging from OFF requests, and how conventional PEM fares
/// with a fixed length equal to their mean or with lengths drawn from them.
pub fn run_packet_study(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<PacketStudyReport> {
    cfg.validate()?;
    let mats = matrices(cfg)?;
    let reference = cfg.reference()?;
    let exec = execution(cfg);
    let (macro_run, micro_run) = steady_state_pair(cfg, &mats, &reference, cfg.fleet.heterogeneity(), cfg.seed, exec)?;
    let t_lo = cfg.pem.t_lockout;
    let t_hi = cfg.pem.packet_len;
    let macro_packets = packet_length_stats(&macro_run.trace.completions, t_lo, t_hi, cfg.packet_bin_s)?;
    let micro_packets = packet_length_stats(&micro_run.completions(), t_lo, t_hi, cfg.packet_bin_s)?;

    let mut support: BTreeMap<u64, f64> = BTreeMap::new();
    for (len, w) in &macro_run.trace.completions {
        if *len >= MIN_COUNTED_PACKET {
            *support.entry(cfg.pem.to_steps(*len) as u64).or_default() += w;
        }
    }
    let lengths: Vec<f64> = support.keys().map(|s| *s as f64 * cfg.pem.dt).collect();
    let weights: Vec<f64> = support.values().copied().collect();
    let distribution = PacketDistribution::new(lengths, &weights)?;
    let fixed_length_s = (macro_packets.mean / cfg.pem.dt).round() * cfg.pem.dt;

    let run_conventional = |policy: &PacketPolicy| -> Result<MicroRun> {
        let mut fleet = MicroFleet::steady_state(cfg.fleet.size, &cfg.params()?, cfg.fleet.heterogeneity(), &mats, cfg.seed)?;
        run_conventional_pem(&mut fleet, &cfg.pem, &reference, &settings(cfg, exec)?, policy)
    };
    let fixed = run_conventional(&PacketPolicy::Fixed(fixed_length_s))?;
    let sampled = run_conventional(&PacketPolicy::Sampled(distribution))?;
    let rmse_fixed = rmse(&fixed.p_agg(), reference.power())?;
    let rmse_sampled = rmse(&sampled.p_agg(), reference.power())?;
    let rmse_enhanced = rmse(&macro_run.trace.p_agg, reference.power())?;
    let rmse_enhanced_micro = rmse(&micro_run.p_agg(), reference.power())?;

    let mut s = Summary::default();
    s.push("macro_packet_mean_s", macro_packets.mean);
    s.push("macro_packet_std_s", macro_packets.std);
    s.push("micro_packet_mean_s", micro_packets.mean);
    s.push("micro_packet_std_s", micro_packets.std);
    s.push("fixed_packet_length_s", fixed_length_s);
    s.push("rmse_conventional_fixed_kw", rmse_fixed);
    s.push("rmse_conventional_sampled_kw", rmse_sampled);
    s.push("rmse_enhanced_macro_kw", rmse_enhanced);
    s.push("rmse_enhanced_micro_kw", rmse_enhanced_micro);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_histogram(
            &dir.join("packet_histogram.csv"),
            &[("macro", &macro_packets), ("micro", &micro_packets)],
        )?;
        fixed.write_csv(&dir.join("conventional_fixed_trace.csv"))?;
        sampled.write_csv(&dir.join("conventional_sampled_trace.csv"))?;
        macro_run.trace.write_csv(&dir.join("macro_trace.csv"))?;
        let table = dir.join("tracking_table.csv");
        let mut w = csv::Writer::from_path(&table)?;
        w.write_record(["method", "rmse_kw"])?;
        w.write_record(["conventional_fixed", &rmse_fixed.to_string()])?;
        w.write_record(["conventional_sampled", &rmse_sampled.to_string()])?;
        w.write_record(["enhanced", &rmse_enhanced.to_string()])?;
        w.flush().map_err(|e| PemError::io(&table, e))?;
        s.write(&dir.join("summary.txt"))?;
        write_manifest(
            dir,
            "packet-study",
            cfg,
            &[
                "packet_histogram.csv",
                "conventional_fixed_trace.csv",
                "conventional_sampled_trace.csv",
                "macro_trace.csv",
                "tracking_table.csv",
                "summary.txt",
            ],
        )?;
    }
    Ok(PacketStudyReport {
        summary: s,
        macro_packets,
        micro_packets,
        fixed_length_s,
        rmse_fixed,
        rmse_sampled,
        rmse_enhanced,
        rmse_enhanced_micro,
    })
}

#[derive(Debug, Clone)]
pub struct SteadyStateReport {
    pub summary: Summary,
    /// Stationary mass per bin, ON then OFF.
    pub q_on: Vec<f64>,
    pub q_off: Vec<f64>,
}

/// Stationary distribution of the uncontrolled hysteresis chain.
pub fn steady_state(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<SteadyStateReport> {
    cfg.validate()?;
    let mats = matrices(cfg)?;
    let pi = stationary_distribution(&mats.hysteresis, 1e-14)?;
    let nb = mats.grid.n_bins;
    let (q_on, q_off) = (pi[..nb].to_vec(), pi[nb..].to_vec());
    let on: f64 = q_on.iter().sum();
    let duty = analytic_duty_cycle(&mats.params, &mats.grid.band, cfg.band.ambient)?;
    let mut s = Summary::default();
    s.push("bins", nb);
    s.push("stationary_on_fraction", on);
    s.push("analytic_duty_cycle", duty);
    s.push("stationary_power_kw", on * mats.params.p_rate * cfg.fleet.size as f64);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let path = dir.join("stationary.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["bin", "midpoint", "q_on", "q_off"])?;
        for i in 0..nb {
            w.write_record([
                i.to_string(),
                mats.grid.midpoint(i).to_string(),
                q_on[i].to_string(),
                q_off[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| PemError::io(&path, e))?;
        s.write(&dir.join("summary.txt"))?;
        write_manifest(dir, "steady-state", cfg, &["stationary.csv", "summary.txt"])?;
    }
    Ok(SteadyStateReport { summary: s, q_on, q_off })
}
