//! Capacity maximization over measurement setups for a fixed state, and
//! sweeps over the `GammaState` family.

mod setup_search;
mod sweep;

pub use setup_search::{
    maximize_bell_violation, optimize_from, optimize_setup, setup_hash, stream_rng, OptimizeConfig,
    OptimizeOutcome, OptimizeTrace, SetupRun, TraceStep,
};
pub use sweep::{
    default_grid, preset_setup, reference_functional, sweep_gamma, Execution, FixedSetup,
    SweepConfig, SweepMode, SweepPoint, SweepTable, CSV_HEADER,
};
