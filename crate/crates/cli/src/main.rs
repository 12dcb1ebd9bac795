//! `pem`: runs the fleet experiments from a TOML scenario file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pem_core::scenario::{self, ScenarioConfig, Summary};
use pem_core::PemError;

#[derive(Parser)]
#[command(name = "pem", version, about = "Packetized energy management fleet experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Validation,
    Tracking,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file; omitted keys take the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (also settable via PEM_OUT).
    #[arg(long, env = "PEM_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Macro vs micro on the sinusoid from an all-OFF fleet.
    Validate(Common),
    /// Regulation signal tracking from the steady state.
    Track(Common),
    /// Heterogeneity sweep of macro/micro divergence.
    Robustness(Common),
    /// Packet-length distribution and conventional PEM comparison.
    PacketStudy(Common),
    /// Stationary distribution of the uncontrolled chain.
    SteadyState(Common),
}

fn load(common: &Common, preset: Preset) -> Result<ScenarioConfig, PemError> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => match preset {
            Preset::Validation => ScenarioConfig::validation(),
            Preset::Tracking => ScenarioConfig::tracking(),
        },
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Summary, PemError> {
    let (common, preset) = match &cli.command {
        Command::Validate(c) | Command::SteadyState(c) => (c, Preset::Validation),
        Command::Track(c) | Command::Robustness(c) | Command::PacketStudy(c) => (c, Preset::Tracking),
    };
    let cfg = load(common, preset)?;
    let out = cfg.output_dir.clone();
    let out = Some(out.as_path());
    Ok(match cli.command {
        Command::Validate(_) => scenario::run_validate(&cfg, out)?.summary,
        Command::Track(_) => scenario::run_track(&cfg, out)?.summary,
        Command::Robustness(_) => scenario::run_robustness(&cfg, out)?.summary,
        Command::PacketStudy(_) => scenario::run_packet_study(&cfg, out)?.summary,
        Command::SteadyState(_) => {
            let report = scenario::steady_state(&cfg, out)?;
            let mut s = report.summary;
            for (i, (on, off)) in report.q_on.iter().zip(&report.q_off).enumerate() {
                s.push(format!("q_on[{i}]"), on);
                s.push(format!("q_off[{i}]"), off);
            }
            s
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            print!("{}", summary.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for model-invariant violations during a run, 1 for everything else.
fn exit_code(e: &PemError) -> u8 {
    if e.is_runtime_violation() {
        2
    } else {
        1
    }
}
