//! Trainer, evaluation metrics, split management and benchmark tables.

mod benchmark;
mod metrics;
mod optim;
mod splits;
mod trainer;

pub use benchmark::{
    run_benchmark, BenchmarkResult, BenchmarkRow, MeanStd, RepetitionResult, CSV_HEADER,
    STD_CONVENTION,
};
pub use metrics::{
    auroc, compute_metrics, format_mean_std, mean_std, Confusion, Metrics, DECISION_THRESHOLD,
};
pub use optim::{Adam, OptimizerKind};
pub use splits::{Split, SplitSet};
pub use trainer::{
    evaluate, predict_probs, train, CheckpointPolicy, EpochRecord, RunConfig, TrainHistory,
};
