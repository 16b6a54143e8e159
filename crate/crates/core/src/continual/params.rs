//! Trainable-parameter accounting per new task.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::adapter::BranchStrategy;
use crate::gating::GatingShape;
use crate::{Error, Result};

/// A group of identically shaped adapted weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AdaptedWeights {
    pub d_out: usize,
    pub d_in: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArchSpec {
    pub name: String,
    pub weights: Vec<AdaptedWeights>,
    pub gate: GatingShape,
}

const fn w(d_out: usize, d_in: usize, count: usize) -> AdaptedWeights {
    AdaptedWeights { d_out, d_in, count }
}

pub const PRESETS: [&str; 5] = ["t5-large", "t5-xl", "llama-2-7b", "llama-2-13b", "llama-3-8b"];

impl ArchSpec {
    /// Query/value placement of the reference models.
    pub fn preset(name: &str) -> Result<Self> {
        let (weights, embed_dim, hidden) = match name {
            // 24 encoder self-attn + 24 decoder self-attn + 24 cross-attn, q and v each.
            "t5-large" => (vec![w(1024, 1024, 144)], 1024, 100),
            "t5-xl" => (vec![w(4096, 1024, 144)], 1024, 100),
            "llama-2-7b" => (vec![w(4096, 4096, 64)], 4096, 50),
            "llama-2-13b" => (vec![w(5120, 5120, 80)], 5120, 50),
            // Grouped-query attention: the value projection emits 1024 features.
            "llama-3-8b" => (vec![w(4096, 4096, 32), w(1024, 4096, 32)], 4096, 50),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            weights,
            gate: GatingShape {
                embed_dim,
                hidden,
                layers: 2,
            },
        })
    }

    /// The desk-scale backbone: two square-ish adapted layers.
    pub fn toy(embed_dim: usize, hidden: usize, gate_hidden: usize, gate_layers: usize) -> Self {
        Self {
            name: "toy".into(),
            weights: vec![w(hidden, embed_dim, 1), w(hidden, hidden, 1)],
            gate: GatingShape {
                embed_dim,
                hidden: gate_hidden,
                layers: gate_layers,
            },
        }
    }
}

/// Branch strategy plus whether a gating module is trained alongside it,
/// written `olora` or `gain+olora`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamStrategy {
    pub branch: BranchStrategy,
    pub gain: bool,
}

impl FromStr for ParamStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (gain, rest) = match s.strip_prefix("gain+") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        Ok(Self {
            branch: rest.parse()?,
            gain,
        })
    }
}

impl fmt::Display for ParamStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.gain {
            f.write_str("gain+")?;
        }
        f.write_str(self.branch.name())
    }
}

/// Parameters updated while learning one new task.
///
/// `A` (d_out×r) always trains; `B` (r×d_in) trains unless it is designed
/// and frozen. The gating module adds the sum of its layer sizes.
pub fn count_trainable_params(arch: &ArchSpec, strategy: ParamStrategy, r: usize) -> u64 {
    let branches: usize = arch
        .weights
        .iter()
        .map(|g| {
            let b = if strategy.branch.trains_b() { r * g.d_in } else { 0 };
            (g.d_out * r + b) * g.count
        })
        .sum();
    let gate = if strategy.gain { arch.gate.param_count() } else { 0 };
    (branches + gate) as u64
}
