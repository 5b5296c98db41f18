//! Simulation and analysis of large heterogeneous load-balancing systems in which the
//! service rate depends on both the task type and the server.
//!
//! * [`model`]: rate surfaces `f`, arrival intensities, membership maps, instances.
//! * [`criticality`]: per-type loads, min-max routing LPs, slack allocations and the
//!   dyadic search for a subcritical partition.
//! * [`policies`]: routing policies and capacity reservation.
//! * [`simulator`]: exact continuous-time simulation, traces, steady-state summaries and
//!   the coupled dominance run.
//! * [`fluid`]: closed-form fluid-limit curves and fixed points.

pub mod criticality;
pub mod error;
pub mod fluid;
pub mod model;
pub mod policies;
pub mod simulator;

pub use error::{Error, Result};
