//! Allocation search: discrete spaces with budget constraints, a TPE
//! sampler, the trial loop and its ledger.

mod ledger;
mod run;
mod space;
mod tpe;

pub use ledger::{load_ledger, read_ledger, save_ledger, write_ledger, TrialRecord};
pub use run::{
    evaluate_assignment, opposite_profile, run_search, search_loop, Objective, SearchOptions, SearchOutcome,
    DEFAULT_TRIALS, MAX_REDRAWS,
};
pub use space::{
    check_feasible, layer_dim_name, Dim, SearchSpace, SpaceKind, BANDWIDTH_CHOICES, SPARSITY_OFFSETS, SPARSITY_STEP,
};
pub use tpe::{Densities, Observation, TpeConfig, TpeState};
