//! Bin-based aggregate Markov model of a PEM-coordinated fleet with packet
//! timers, OFF requests and opt-out states.

pub mod grid;
pub mod matrices;
pub mod sim;
pub mod sparse;
pub mod state;

pub use grid::{BinGrid, StateLayout};
pub use matrices::{
    build_m_exit, build_m_off, build_placement, build_t_req, build_transition_matrix, hysteresis_index,
    MacroMatrices, TransitionMethod,
};
pub use sim::{simulate_macro, simulate_macro_with, write_state_snapshots, MacroRun, MacroTrace, OffRequests};
pub use sparse::SparseMatrix;
pub use state::{
    beta_off_minus, macro_step, macro_step_with_flows, n_req_on, off_flow_to_temperature, off_request_flow,
    on_request_flow, stationary_distribution, stationary_on_mass, steady_state_init, temperature_summary,
    timer_step, uniform_off_init, MacroState, OffFlow, StepFlows,
};
