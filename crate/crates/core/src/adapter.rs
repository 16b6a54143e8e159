//! Expandable low-rank branches over a frozen linear weight.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, gaussian_init, sym_eig, Mat, Rng};
use crate::subspace::SubspaceBasis;
use crate::{Error, Result};

/// Std of the Gaussian `B` initialization.
pub const DEFAULT_LORA_INIT_STD: f64 = 0.02;

/// Weight on the row-space orthogonality penalty.
pub const DEFAULT_OLORA_LAMBDA: f64 = 0.5;

/// How the branch of a new task is created and trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchStrategy {
    /// A single branch keeps training across tasks.
    Seq,
    /// A fresh branch per task, trained without extra terms.
    Inc,
    /// A fresh branch per task with the row-space orthogonality penalty.
    Olora,
    /// A fresh branch per task whose `B` is designed orthogonal to old inputs and frozen.
    Inflora,
}

impl BranchStrategy {
    pub fn name(self) -> &'static str {
        match self {
            BranchStrategy::Seq => "seq",
            BranchStrategy::Inc => "inc",
            BranchStrategy::Olora => "olora",
            BranchStrategy::Inflora => "inflora",
        }
    }

    pub fn expands(self) -> bool {
        self != BranchStrategy::Seq
    }

    pub fn trains_b(self) -> bool {
        self != BranchStrategy::Inflora
    }
}

impl fmt::Display for BranchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BranchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq" => Ok(BranchStrategy::Seq),
            "inc" => Ok(BranchStrategy::Inc),
            "olora" => Ok(BranchStrategy::Olora),
            "inflora" => Ok(BranchStrategy::Inflora),
            other => Err(Error::UnknownStrategy(other.to_string())),
        }
    }
}

/// One `(A, B)` pair: `A` is `d_out × r`, `B` is `r × d_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraBranch {
    pub a: Mat,
    pub b: Mat,
    frozen: bool,
    b_frozen: bool,
}

impl LoraBranch {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::ShapeMismatch(format!(
                "A {:?} and B {:?} ranks differ",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            a,
            b,
            frozen: false,
            b_frozen: false,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn is_b_frozen(&self) -> bool {
        self.frozen || self.b_frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// `A B`
    pub fn delta(&self) -> Mat {
        self.a.matmul(&self.b)
    }
}

/// A frozen weight `W` plus its branch stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedLinear {
    weight: Mat,
    branches: Vec<LoraBranch>,
}

impl AdaptedLinear {
    pub fn new(weight: Mat) -> Self {
        Self {
            weight,
            branches: Vec::new(),
        }
    }

    pub fn weight(&self) -> &Mat {
        &self.weight
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn branches(&self) -> &[LoraBranch] {
        &self.branches
    }

    pub fn trainable_branch_mut(&mut self) -> Option<&mut LoraBranch> {
        self.branches.last_mut().filter(|b| !b.is_frozen())
    }

    fn check_rank(&self, r: usize) -> Result<()> {
        if r == 0 || r > self.d_in().min(self.d_out()) {
            return Err(Error::Config(format!(
                "rank {r} invalid for a {}x{} layer",
                self.d_out(),
                self.d_in()
            )));
        }
        Ok(())
    }

    /// Freezes existing branches and appends `A = 0`, `B ~ N(0, std²)`.
    pub fn expand_branch(&mut self, r: usize, rng: &mut Rng, std: f64) -> Result<()> {
        self.check_rank(r)?;
        let b = gaussian_init(rng, r, self.d_in(), std);
        self.push_branch(LoraBranch::new(Mat::zeros(self.d_out(), r), b)?);
        Ok(())
    }

    /// Freezes existing branches and appends `A = 0` with a fixed, designed `B`.
    pub fn expand_designed(&mut self, b: Mat) -> Result<()> {
        self.check_rank(b.rows())?;
        if b.cols() != self.d_in() {
            return Err(Error::DimMismatch {
                expected: self.d_in(),
                got: b.cols(),
            });
        }
        let mut branch = LoraBranch::new(Mat::zeros(self.d_out(), b.rows()), b)?;
        branch.b_frozen = true;
        self.push_branch(branch);
        Ok(())
    }

    fn push_branch(&mut self, branch: LoraBranch) {
        self.freeze_all();
        self.branches.push(branch);
    }

    pub fn freeze_all(&mut self) {
        for b in &mut self.branches {
            b.freeze();
        }
    }

    /// `(W + Σ aᵢ AᵢBᵢ) h`
    pub fn forward(&self, coeffs: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        adapted_forward(self, coeffs, h)
    }

    /// Batched plain forward; `x` is n×d_in and `coeffs` n×t (or `None` for all ones).
    pub fn forward_batch(&self, x: &Mat, coeffs: Option<&Mat>) -> Result<Mat> {
        if x.cols() != self.d_in() {
            return Err(Error::DimMismatch {
                expected: self.d_in(),
                got: x.cols(),
            });
        }
        let mut out = x.matmul_t(&self.weight);
        for (i, br) in self.branches.iter().enumerate() {
            let low = x.matmul_t(&br.b).matmul_t(&br.a);
            match coeffs {
                Some(c) => {
                    if c.cols() != self.branches.len() || c.rows() != x.rows() {
                        return Err(Error::ShapeMismatch(format!(
                            "coefficients {:?} for {} samples and {} branches",
                            c.shape(),
                            x.rows(),
                            self.branches.len()
                        )));
                    }
                    for r in 0..out.rows() {
                        let a = c[(r, i)];
                        for (o, l) in out.row_mut(r).iter_mut().zip(low.row(r)) {
                            *o += a * l;
                        }
                    }
                }
                None => out.add_assign(&low),
            }
        }
        Ok(out)
    }
}

fn check_coeffs(n: usize, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients for {n} branches",
            coeffs.len()
        )));
    }
    if let Some(a) = coeffs.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::ShapeMismatch(format!(
            "integration coefficient {a} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `W_t = Σ aᵢ Aᵢ Bᵢ`
pub fn integrate(branches: &[LoraBranch], coeffs: &[f64]) -> Result<Mat> {
    check_coeffs(branches.len(), coeffs)?;
    let Some(first) = branches.first() else {
        return Err(Error::EmptyInput);
    };
    let (d_out, d_in) = (first.a.rows(), first.b.cols());
    let mut w = Mat::zeros(d_out, d_in);
    for (br, &a) in branches.iter().zip(coeffs) {
        if br.a.rows() != d_out || br.b.cols() != d_in {
            return Err(Error::ShapeMismatch("branches have different layer shapes".into()));
        }
        w.add_assign(&br.delta().scale(a));
    }
    Ok(w)
}

/// `W h + Σ aᵢ Aᵢ (Bᵢ h)`
pub fn adapted_forward(layer: &AdaptedLinear, coeffs: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    check_coeffs(layer.branches.len(), coeffs)?;
    if h.len() != layer.d_in() {
        return Err(Error::DimMismatch {
            expected: layer.d_in(),
            got: h.len(),
        });
    }
    let mut out = layer.weight.matvec(h);
    for (br, &a) in layer.branches.iter().zip(coeffs) {
        let low = br.a.matvec(&br.b.matvec(h));
        for (o, l) in out.iter_mut().zip(low) {
            *o += a * l;
        }
    }
    Ok(out)
}

/// `λ Σ_{i<t} ‖Bᵢ B_tᵀ‖_F²` with `B_t` the last branch.
pub fn olora_penalty(branches: &[LoraBranch], lambda: f64) -> f64 {
    let Some((new, old)) = branches.split_last() else {
        return 0.0;
    };
    lambda * old.iter().map(|b| b.b.matmul_t(&new.b).frob_sq()).sum::<f64>()
}

/// Designs a frozen `B` for a new branch: its rows are the top principal
/// directions of the new task's inputs after removing the old-task input
/// subspace, so the rows are orthonormal and orthogonal to that subspace.
///
/// `h_new` holds one input per column.
pub fn inflora_design(h_new: &Mat, grad_space: &SubspaceBasis, r: usize) -> Result<Mat> {
    let dim = grad_space.dim();
    let free = dim - grad_space.rank();
    if r == 0 || free < r {
        return Err(Error::NoFreeSubspace { free, rank: r });
    }
    let residual = grad_space.project_out(h_new)?;
    let eig = sym_eig(&residual.matmul_t(&residual))?;

    let basis = grad_space.basis();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(r);
    // Eigenvectors first, then axis vectors as fallback when the new inputs
    // span fewer than `r` free directions.
    let candidates = (0..dim).map(|j| eig.vectors.col(j)).chain((0..dim).map(|i| {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        e
    }));
    for mut v in candidates {
        if rows.len() == r {
            break;
        }
        for _ in 0..2 {
            for j in 0..basis.cols() {
                let c = basis.col(j);
                let p = dot(&v, &c);
                v.iter_mut().zip(&c).for_each(|(x, y)| *x -= p * y);
            }
            for row in &rows {
                let p = dot(&v, row);
                v.iter_mut().zip(row).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
    }
    if rows.len() < r {
        return Err(Error::NoFreeSubspace {
            free: rows.len(),
            rank: r,
        });
    }
    Ok(Mat::from_rows(&rows))
}
