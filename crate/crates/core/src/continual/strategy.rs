use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::BranchStrategy;
use crate::gating::GateFn;
use crate::numerics::AdamWConfig;
use crate::{Error, Result};

/// Which constraints the new gating module is held to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    /// Gated integration with both constraints.
    Gain,
    /// No gates; every branch contributes with coefficient 1.
    FixedOne,
    /// Sigmoid gate, final layer not projected; updates still projected.
    NoInit,
    /// Constrained initialization, unprojected updates.
    NoUpdate,
    /// Neither constraint.
    NoConstraints,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstraintFlags {
    pub init: bool,
    pub update: bool,
}

impl GatingMode {
    pub const ABLATIONS: [GatingMode; 5] = [
        GatingMode::Gain,
        GatingMode::NoInit,
        GatingMode::NoUpdate,
        GatingMode::NoConstraints,
        GatingMode::FixedOne,
    ];

    pub fn is_gated(self) -> bool {
        self != GatingMode::FixedOne
    }

    pub fn flags(self) -> Option<ConstraintFlags> {
        match self {
            GatingMode::Gain => Some(ConstraintFlags {
                init: true,
                update: true,
            }),
            GatingMode::NoInit => Some(ConstraintFlags {
                init: false,
                update: true,
            }),
            GatingMode::NoUpdate => Some(ConstraintFlags {
                init: true,
                update: false,
            }),
            GatingMode::NoConstraints => Some(ConstraintFlags {
                init: false,
                update: false,
            }),
            GatingMode::FixedOne => None,
        }
    }

    pub fn from_flags(flags: ConstraintFlags) -> Self {
        match (flags.init, flags.update) {
            (true, true) => GatingMode::Gain,
            (false, true) => GatingMode::NoInit,
            (true, false) => GatingMode::NoUpdate,
            (false, false) => GatingMode::NoConstraints,
        }
    }

    /// Drops the initialization constraint; no-op for `fixed_one`.
    pub fn without_init(self) -> Self {
        match self.flags() {
            Some(f) => Self::from_flags(ConstraintFlags { init: false, ..f }),
            None => self,
        }
    }

    /// Drops the update constraint; no-op for `fixed_one`.
    pub fn without_update(self) -> Self {
        match self.flags() {
            Some(f) => Self::from_flags(ConstraintFlags { update: false, ..f }),
            None => self,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GatingMode::Gain => "gain",
            GatingMode::FixedOne => "fixed_one",
            GatingMode::NoInit => "no_init",
            GatingMode::NoUpdate => "no_update",
            GatingMode::NoConstraints => "no_constraints",
        }
    }

    /// Gate function actually used: the no-init variants swap in a plain sigmoid.
    pub fn effective_gate(self, configured: GateFn) -> GateFn {
        match self.flags() {
            Some(ConstraintFlags { init: false, .. }) => GateFn::Sigmoid,
            _ => configured,
        }
    }
}

impl fmt::Display for GatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GatingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gain" => Ok(GatingMode::Gain),
            "fixed_one" => Ok(GatingMode::FixedOne),
            "no_init" => Ok(GatingMode::NoInit),
            "no_update" => Ok(GatingMode::NoUpdate),
            "no_constraints" => Ok(GatingMode::NoConstraints),
            other => Err(Error::Config(format!("unknown gating mode `{other}`"))),
        }
    }
}

/// Everything that governs how one continual run trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub branch: BranchStrategy,
    pub gating: GatingMode,
    pub gate_fn: GateFn,
    pub gate_hidden: usize,
    pub gate_layers: usize,
    pub gate_init_std: f64,
    pub rank: usize,
    pub lora_init_std: f64,
    pub lambda: f64,
    pub eps_th: f64,
    pub trace_samples: usize,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            branch: BranchStrategy::Olora,
            gating: GatingMode::Gain,
            gate_fn: GateFn::AbsSigmoid,
            gate_hidden: 32,
            gate_layers: 2,
            gate_init_std: crate::gating::DEFAULT_GATE_INIT_STD,
            rank: 4,
            lora_init_std: crate::adapter::DEFAULT_LORA_INIT_STD,
            lambda: crate::adapter::DEFAULT_OLORA_LAMBDA,
            eps_th: crate::subspace::DEFAULT_EPS_TH,
            trace_samples: 512,
            optimizer: AdamWConfig::default(),
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    // Negated comparisons on purpose: they also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.branch == BranchStrategy::Seq && self.gating.is_gated() {
            return Err(Error::Config(format!(
                "branch strategy `seq` keeps a single branch and cannot be gated (gating = `{}`); use `fixed_one`",
                self.gating
            )));
        }
        if self.gate_fn == GateFn::Sigmoid {
            return Err(Error::Config(
                "gate_fn `sigmoid` violates f(0) = 0; it is reserved for the no_init ablation".into(),
            ));
        }
        let positive = [
            ("rank", self.rank),
            ("batch_size", self.batch_size),
            ("trace_samples", self.trace_samples),
            ("gate_hidden", self.gate_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.eps_th > 0.0 && self.eps_th <= 1.0) {
            return Err(Error::Config(format!("eps_th must lie in (0, 1], got {}", self.eps_th)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config("optimizer hyperparameters out of range".into()));
        }
        if !(self.gate_init_std >= 0.0 && self.lora_init_std >= 0.0) {
            return Err(Error::Config("init std must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_composition() {
        assert_eq!(
            GatingMode::Gain.without_init().without_update(),
            GatingMode::NoConstraints
        );
        assert_eq!(
            GatingMode::Gain.without_update().without_init(),
            GatingMode::NoConstraints
        );
        assert_eq!(GatingMode::NoInit.without_update(), GatingMode::NoConstraints);
        assert_eq!(GatingMode::FixedOne.without_init(), GatingMode::FixedOne);
    }

    #[test]
    fn no_init_swaps_gate() {
        assert_eq!(GatingMode::NoInit.effective_gate(GateFn::AbsSine), GateFn::Sigmoid);
        assert_eq!(GatingMode::NoUpdate.effective_gate(GateFn::AbsSine), GateFn::AbsSine);
    }

    #[test]
    fn seq_cannot_be_gated() {
        let cfg = StrategyConfig {
            branch: BranchStrategy::Seq,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = StrategyConfig {
            gating: GatingMode::FixedOne,
            ..cfg
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn names_round_trip() {
        for m in GatingMode::ABLATIONS {
            assert_eq!(m.name().parse::<GatingMode>().unwrap(), m);
        }
    }
}
