//! Continual learning with gated, expandable low-rank adapters.
//!
//! Each task gets a new low-rank branch on every adapted layer and a new
//! gating module that decides, per input, how strongly that branch
//! contributes. The new gate is initialized and updated orthogonally to the
//! subspaces spanned by earlier tasks' gate inputs, which keeps its output
//! at zero on those inputs and so shields old tasks from the new branch.

pub mod adapter;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod continual;
mod error;
pub mod experiment;
pub mod gating;
pub mod model;
pub mod numerics;
pub mod report;
pub mod subspace;

pub use error::{Error, Result};
