//! Training runs, hyperparameter grids, and the proxy-to-target transfer
//! pipeline.

mod sweep;
mod train;
mod transfer;

pub use sweep::{
    sweep, sweep_with, write_landscape_csv, write_optimum_csv, SelectBy, SweepAxis, SweepResult, SweepSpec,
};
pub use train::{steps_per_epoch, train, train_model, TrainRecord, DIVERGENCE_FACTOR};
pub use transfer::{mu_transfer, records_cost, step_cost, CostReport, TransferOutcome};
