//! Per-task gating modules.
//!
//! A gating module maps the mean-pooled token embedding `p₀` through `L`
//! SiLU layers and a final row vector to a scalar, then squashes it into
//! `[0, 1]` with a gate function satisfying `f(0) = 0`. New modules start
//! with their final layer orthogonal to the stored input subspace, and every
//! update is projected off the stored subspaces of the layer it touches.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{gaussian_init, sigmoid, silu, Graph, Mat, Rng, Var};
use crate::subspace::{SubspaceBasis, SubspaceMemory};
use crate::{Error, Result};

/// Std of freshly drawn gate weights.
pub const DEFAULT_GATE_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateFn {
    /// `|2·sigmoid(b) − 1|`
    AbsSigmoid,
    /// `min(|b|, 1)`
    ClampAbs,
    /// `|sin(πb/2)|`
    AbsSine,
    /// Plain `sigmoid(b)`. Has `f(0) = 1/2`; only used by the ablation that
    /// drops the initialization constraint.
    Sigmoid,
}

impl GateFn {
    pub fn eval(self, b: f64) -> f64 {
        match self {
            GateFn::AbsSigmoid => (2.0 * sigmoid(b) - 1.0).abs(),
            GateFn::ClampAbs => b.abs().min(1.0),
            GateFn::AbsSine => (FRAC_PI_2 * b).sin().abs(),
            GateFn::Sigmoid => sigmoid(b),
        }
    }

    pub fn apply(self, g: &mut Graph, b: Var) -> Var {
        match self {
            GateFn::AbsSigmoid => {
                let s = g.sigmoid(b);
                let s = g.scale(s, 2.0);
                let s = g.add_scalar(s, -1.0);
                g.abs(s)
            }
            GateFn::ClampAbs => {
                let a = g.abs(b);
                g.min_scalar(a, 1.0)
            }
            GateFn::AbsSine => {
                let s = g.scale(b, FRAC_PI_2);
                let s = g.sin(s);
                g.abs(s)
            }
            GateFn::Sigmoid => g.sigmoid(b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateFn::AbsSigmoid => "abs-sigmoid",
            GateFn::ClampAbs => "clamp-abs",
            GateFn::AbsSine => "abs-sine",
            GateFn::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for GateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs-sigmoid" => Ok(GateFn::AbsSigmoid),
            "clamp-abs" => Ok(GateFn::ClampAbs),
            "abs-sine" => Ok(GateFn::AbsSine),
            "sigmoid" => Ok(GateFn::Sigmoid),
            other => Err(Error::Config(format!("unknown gate function `{other}`"))),
        }
    }
}

/// Checked scalar gate evaluation.
pub fn gate_fn(gate: GateFn, b: f64) -> Result<f64> {
    if !b.is_finite() {
        return Err(Error::NonFinite("gate input"));
    }
    Ok(gate.eval(b))
}

/// Mean of the embedding rows selected by `tokens`.
pub fn pool_embed(tokens: &[u32], embed: &Mat) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = vec![0.0; embed.cols()];
    for &t in tokens {
        let t = t as usize;
        if t >= embed.rows() {
            return Err(Error::IdOutOfRange {
                id: t,
                vocab: embed.rows(),
            });
        }
        for (o, e) in out.iter_mut().zip(embed.row(t)) {
            *o += e;
        }
    }
    let n = tokens.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Layer shapes of a gating module: `L` hidden layers alternating between
/// `hidden` and `embed_dim` outputs, then a `1 × in_{L+1}` row vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatingShape {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl GatingShape {
    /// `(out, in)` for each of the `L + 1` weights.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.layers + 1);
        let mut input = self.embed_dim;
        for l in 0..self.layers {
            let out = if l % 2 == 0 { self.hidden } else { self.embed_dim };
            shapes.push((out, input));
            input = out;
        }
        shapes.push((1, input));
        shapes
    }

    /// Input dimension of every layer, `in₁ … in_{L+1}`.
    pub fn input_dims(&self) -> Vec<usize> {
        self.weight_shapes().iter().map(|&(_, i)| i).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weight_shapes().iter().map(|&(o, i)| o * i).sum()
    }
}

/// Layer inputs `p₀ … p_L` for a batch, one matrix per layer (rows = samples).
pub type GateTrace = Vec<Mat>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingModule {
    weights: Vec<Mat>,
    gate: GateFn,
    frozen: bool,
}

impl GatingModule {
    pub fn new(weights: Vec<Mat>, gate: GateFn) -> Result<Self> {
        let Some(last) = weights.last() else {
            return Err(Error::ShapeMismatch("gating module needs at least one layer".into()));
        };
        if last.rows() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "final gate layer must be a row vector, got {:?}",
                last.shape()
            )));
        }
        for w in weights.windows(2) {
            if w[1].cols() != w[0].rows() {
                return Err(Error::ShapeMismatch(format!(
                    "gate layers do not chain: {:?} then {:?}",
                    w[0].shape(),
                    w[1].shape()
                )));
            }
        }
        Ok(Self {
            weights,
            gate,
            frozen: false,
        })
    }

    pub fn random(shape: GatingShape, gate: GateFn, std: f64, rng: &mut Rng) -> Self {
        let weights = shape
            .weight_shapes()
            .iter()
            .map(|&(o, i)| gaussian_init(rng, o, i, std))
            .collect();
        Self {
            weights,
            gate,
            frozen: false,
        }
    }

    pub fn hidden_layers(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn embed_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    /// Mutable weights; refuses once the module is frozen.
    pub fn weights_mut(&mut self) -> Option<&mut [Mat]> {
        if self.frozen {
            None
        } else {
            Some(&mut self.weights)
        }
    }

    pub fn gate(&self) -> GateFn {
        self.gate
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.weights.iter().map(Mat::cols).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Mat::len).sum()
    }

    /// Integration coefficient for one pooled embedding, plus the layer inputs.
    pub fn forward(&self, p0: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        if p0.len() != self.embed_dim() {
            return Err(Error::ShapeMismatch(format!(
                "gate expects a {}-vector, got {}",
                self.embed_dim(),
                p0.len()
            )));
        }
        let mut trace = Vec::with_capacity(self.weights.len());
        let mut p = p0.to_vec();
        let (last, hidden) = self.weights.split_last().expect("non-empty");
        for w in hidden {
            let next: Vec<f64> = w.matvec(&p).into_iter().map(silu).collect();
            trace.push(std::mem::replace(&mut p, next));
        }
        let b = last.matvec(&p)[0];
        trace.push(p);
        Ok((gate_fn(self.gate, b)?, trace))
    }

    /// Batched forward: `x` is n×d, returns n coefficients and the traces.
    pub fn forward_batch(&self, x: &Mat) -> Result<(Vec<f64>, GateTrace)> {
        if x.cols() != self.embed_dim() {
            return Err(Error::ShapeMismatch(format!(
                "gate expects {} columns, got {}",
                self.embed_dim(),
                x.cols()
            )));
        }
        let mut trace = Vec::with_capacity(self.weights.len());
        let mut p = x.clone();
        let (last, hidden) = self.weights.split_last().expect("non-empty");
        for w in hidden {
            let next = p.matmul_t(w).map(silu);
            trace.push(std::mem::replace(&mut p, next));
        }
        let b = p.matmul_t(last);
        trace.push(p);
        let coeffs = b
            .as_slice()
            .iter()
            .map(|&v| gate_fn(self.gate, v))
            .collect::<Result<Vec<_>>>()?;
        Ok((coeffs, trace))
    }

    /// Records the module on `g` with weights bound to `params` (one per
    /// layer). Returns the n×1 coefficient node.
    pub fn build(&self, g: &mut Graph, x: Var, params: &[Var]) -> Var {
        assert_eq!(params.len(), self.weights.len());
        let (last, hidden) = params.split_last().expect("non-empty");
        let mut p = x;
        for &w in hidden {
            let z = g.matmul_t(p, w);
            p = g.silu(z);
        }
        let b = g.matmul_t(p, *last);
        self.gate.apply(g, b)
    }
}

/// Builds the gating module for a new task.
///
/// The first `L` layers are copied from `prev` (drawn fresh when there is no
/// previous module). The final layer is drawn fresh and, when `project` is
/// set, replaced by its component orthogonal to the last memory subspace.
pub fn init_new_gating(
    prev: Option<&GatingModule>,
    shape: GatingShape,
    gate: GateFn,
    memory: &SubspaceMemory,
    rng: &mut Rng,
    std: f64,
    project: bool,
) -> Result<GatingModule> {
    let shapes = shape.weight_shapes();
    let dims = shape.input_dims();
    if memory.input_dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "memory layer dims {:?} do not match gating inputs {:?}",
            memory.input_dims(),
            dims
        )));
    }
    let mut weights: Vec<Mat> = match prev {
        Some(p) => {
            if p.input_dims() != dims {
                return Err(Error::ShapeMismatch(
                    "previous gating module has a different shape".into(),
                ));
            }
            p.weights[..shape.layers].to_vec()
        }
        None => shapes[..shape.layers]
            .iter()
            .map(|&(o, i)| gaussian_init(rng, o, i, std))
            .collect(),
    };
    let (o, i) = shapes[shape.layers];
    let mut last = gaussian_init(rng, o, i, std);
    if project {
        let basis = memory.layer(shape.layers);
        last = basis.project_out(&last.transpose())?.transpose();
    }
    weights.push(last);
    GatingModule::new(weights, gate)
}

/// `ΔG (I − M Mᵀ)`: every row of the update projected off the input subspace.
pub fn constrain_update(delta: &Mat, basis: &SubspaceBasis) -> Result<Mat> {
    if delta.cols() != basis.dim() {
        return Err(Error::DimMismatch {
            expected: basis.dim(),
            got: delta.cols(),
        });
    }
    if basis.rank() == 0 {
        return Ok(delta.clone());
    }
    let m = basis.basis();
    Ok(delta.sub(&delta.matmul(m).matmul_t(m)))
}

/// Ordered gating modules; only the newest is trainable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GatingBank {
    modules: Vec<GatingModule>,
}

impl GatingBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn modules(&self) -> &[GatingModule] {
        &self.modules
    }

    pub fn last(&self) -> Option<&GatingModule> {
        self.modules.last()
    }

    /// Freezes every existing module and appends `module` as the trainable one.
    pub fn push(&mut self, module: GatingModule) {
        for m in &mut self.modules {
            m.freeze();
        }
        self.modules.push(module);
    }

    pub fn trainable_mut(&mut self) -> Option<&mut GatingModule> {
        self.modules.last_mut().filter(|m| !m.is_frozen())
    }

    pub fn freeze_all(&mut self) {
        for m in &mut self.modules {
            m.freeze();
        }
    }

    /// n×t matrix of coefficients, column `i` from module `i`.
    pub fn coefficients(&self, x: &Mat) -> Result<Mat> {
        let mut out = Mat::zeros(x.rows(), self.modules.len());
        for (j, m) in self.modules.iter().enumerate() {
            let (a, _) = m.forward_batch(x)?;
            out.set_col(j, &a);
        }
        Ok(out)
    }
}
