//! Exact simulation of the many-server system, trace recording and the coupled run.

mod coupled;
mod engine;
mod estimate;
mod state;
mod structures;
mod trace;

pub use coupled::{coupled_dominance_run, CoupledOutcome, CouplingMode, DominanceViolation};
pub use engine::{simulate, simulate_with_router, InitialState, SimOptions, SimParams};
pub use estimate::{mean_and_stderr, steady_state_estimate, SteadyStateSummary};
pub use state::SimState;
pub use structures::{IndexedSet, RateTree};
pub use trace::{uniform_grid, Sample, Trace, TraceDims, TraceLayout, DEFAULT_L_CAP};
