//! Simulation toolkit for fleets of air-conditioning units coordinated by
//! packetized energy management: an agent-based micro model, a bin-based
//! Markov macro model, the coordinator policy, reference signals, validation
//! metrics and scenario runners.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod device;
pub mod error;
pub mod macro_model;
pub mod metrics;
pub mod micro;
pub mod policy;
pub mod scenario;
pub mod signals;
pub mod thermal;

pub use error::{PemError, Result};
