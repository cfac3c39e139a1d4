//! Hyperparameter grids, best-of-N analysis and throughput measurement.

mod best_of_n;
mod grid;
mod results;
mod task;
mod throughput;

pub use best_of_n::{
    best_of_n_gain, gain_curve_csv, param_scores, BestOfNSpec, Defaults, GainPoint, Hyperparameter,
    Replicates,
};
pub use grid::{
    default_betas, default_modes, default_seeds, default_temperatures, default_top_ps, run_grid,
    run_grid_with_model, trial_seed, GridSpec,
};
pub use results::{ResultRow, ResultsTable, ERROR_MARKER, RESULTS_HEADER};
pub use task::{encode_bytes, greedy_recovery_score, ModelSource, TaskKind, TaskSpec};
pub use throughput::{throughput_bench, RateSummary, ThroughputReport, DEFAULT_RUNS};
