//! Task-by-task training: branch expansion, constrained gates, subspace
//! growth, evaluation and metrics.

mod metrics;
mod params;
mod strategy;
mod trainer;

pub use metrics::{compute_ap, compute_ft, AccuracyMatrix};
pub use params::{count_trainable_params, AdaptedWeights, ArchSpec, ParamStrategy, PRESETS};
pub use strategy::{ConstraintFlags, GatingMode, StrategyConfig};
pub use trainer::{
    finalize, gate_shape, learn_task, resume_sequence, run_sequence, ContinualState, GateSample, RunResult, TaskHook,
    TaskLog, TaskTrainer,
};
