//! Desk-scale backbone and task data.

mod backbone;
pub mod data;

pub use backbone::{argmax, BackboneShape, BranchVars, ToyBackbone};
pub use data::{
    generate_suite, generate_task, ingest_dataset, DataFormat, Dataset, Sample, SuiteSpec, TaskData, TaskSequence,
    TaskSpec,
};
