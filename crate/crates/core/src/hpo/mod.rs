//! Grid search with successive halving and cross-validated scoring.

mod halving;
mod objective;
mod search;
mod space;

pub use halving::{successive_halving, HalvingOutcome, DEFAULT_RUNGS};
pub use objective::{apply_config, fold_partition, PipelineObjective, PipelineSettings};
pub use search::{read_trace, search, trial_seed, write_trace, Objective, SearchOutcome, SearchSettings, TrialResult};
pub use space::*;
