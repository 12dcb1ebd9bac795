//! Configured experiments and their on-disk artifacts.

pub mod config;
pub mod report;
pub mod runs;

pub use config::{ScenarioConfig, SignalKind};
pub use report::{detect_tracking_loss, rolling_rms, write_manifest, Summary, TrackingEvent};
pub use runs::{
    run_packet_study, run_robustness, run_track, run_validate, steady_state, PacketStudyReport, RobustnessPoint,
    RobustnessReport, SteadyStateReport, TrackReport, ValidateReport,
};
