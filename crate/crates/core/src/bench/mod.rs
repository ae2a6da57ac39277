//! Experiment harness: method grids, length and rank-correlation sweeps, cost model.

pub mod cost;
pub mod experiment;
pub mod proposition;
pub mod report;

pub use cost::{cost_model, scalar_cost, CostModelResult};
pub use experiment::{
    run_grid, run_length_sweep, run_method, storage_columns, CellReport, CellStatus,
    ExperimentConfig, InputSpec, LengthRow, Method, PqOverrides, StorageColumns, SummaryRow,
};
pub use proposition::{run_proposition_sweep, PropositionOptions, PropositionTable};
pub use report::{run_experiment, write_report, ExperimentReport};
