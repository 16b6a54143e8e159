//! Gradient projection memory: per-layer orthonormal bases of the inputs seen
//! on earlier tasks, grown after each task by an energy-threshold rule.

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, sym_eig, Mat};
use crate::{Error, Result};

/// Default share of input energy the memory must capture.
pub const DEFAULT_EPS_TH: f64 = 0.99;

/// Eigenvalues below this fraction of the largest are treated as noise.
const EIG_FLOOR: f64 = 1e-12;

/// Slack on the energy criterion, relative to `‖H‖_F²`.
const CRITERION_SLACK: f64 = 1e-8;

/// Orthonormal columns spanning a subspace of `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    dim: usize,
    basis: Mat,
}

impl SubspaceBasis {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            basis: Mat::zeros(dim, 0),
        }
    }

    /// Wraps existing columns, checking orthonormality to 1e-6.
    pub fn from_columns(basis: Mat) -> Result<Self> {
        let k = basis.cols();
        if k > basis.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{k} basis columns in dimension {}",
                basis.rows()
            )));
        }
        let err = basis.t_matmul(&basis).max_abs_diff(&Mat::identity(k));
        if err > 1e-6 {
            return Err(Error::Schema(format!("basis columns not orthonormal (error {err:e})")));
        }
        Ok(Self {
            dim: basis.rows(),
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    /// `‖MᵀM − I‖_max`
    pub fn orthonormality_error(&self) -> f64 {
        self.basis
            .t_matmul(&self.basis)
            .max_abs_diff(&Mat::identity(self.rank()))
    }

    fn check_rows(&self, x: &Mat) -> Result<()> {
        if x.rows() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.rows(),
            });
        }
        Ok(())
    }

    /// `M Mᵀ X`
    pub fn captured(&self, x: &Mat) -> Result<Mat> {
        self.check_rows(x)?;
        if self.rank() == 0 {
            return Ok(Mat::zeros(x.rows(), x.cols()));
        }
        Ok(self.basis.matmul(&self.basis.t_matmul(x)))
    }

    /// `X − M Mᵀ X`
    pub fn project_out(&self, x: &Mat) -> Result<Mat> {
        self.check_rows(x)?;
        if self.rank() == 0 {
            return Ok(x.clone());
        }
        Ok(x.sub(&self.captured(x)?))
    }

    /// Single-vector form of [`SubspaceBasis::project_out`].
    pub fn project_out_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.project_out(&Mat::col_vector(v))?.into_vec())
    }

    /// Grows the basis with the dominant directions of the part of `h` (one
    /// input per column) that the basis does not yet capture.
    pub fn extend(&self, h: &Mat, eps: f64) -> Result<SubspaceBasis> {
        self.check_rows(h)?;
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Config(format!("energy threshold must lie in (0, 1], got {eps}")));
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("subspace input"));
        }
        let total_sq = h.frob_sq();
        if total_sq == 0.0 || h.cols() == 0 {
            return Ok(self.clone());
        }
        let residual = self.project_out(h)?;
        let captured_sq = self.captured(h)?.frob_sq();
        let eig = sym_eig(&residual.matmul_t(&residual))?;
        let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let kept: Vec<f64> = eig
            .values
            .iter()
            .map(|&x| x.max(0.0))
            .take_while(|&x| top > 0.0 && x > EIG_FLOOR * top)
            .collect();
        let u = choose_rank(&kept, captured_sq, total_sq, eps)?;
        if u == 0 {
            return Ok(self.clone());
        }

        let mut columns: Vec<Vec<f64>> = (0..self.rank()).map(|j| self.basis.col(j)).collect();
        let existing = columns.len();
        for j in 0..u {
            let mut v = eig.vectors.col(j);
            // one modified Gram-Schmidt pass against everything accepted so far
            for c in &columns {
                let proj = dot(&v, c);
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= proj * ci;
                }
            }
            let n = dot(&v, &v).sqrt();
            if n < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
            columns.push(v);
        }
        let mut basis = Mat::zeros(self.dim, columns.len());
        for (j, c) in columns.iter().enumerate() {
            basis.set_col(j, c);
        }
        debug_assert!(basis.cols() >= existing);
        Ok(SubspaceBasis { dim: self.dim, basis })
    }
}

/// Smallest `u` with `Σ_{k<u} eigs[k] + captured_sq ≥ eps · total_sq`.
///
/// `eigs` are the descending eigenvalues of `ĤĤᵀ`; their partial sums are the
/// energy of the residual inputs along the top directions.
pub fn choose_rank(eigs: &[f64], captured_sq: f64, total_sq: f64, eps: f64) -> Result<usize> {
    let required = eps * total_sq - CRITERION_SLACK * total_sq;
    let mut acc = captured_sq;
    if acc >= required {
        return Ok(0);
    }
    for (k, e) in eigs.iter().enumerate() {
        acc += e.max(0.0);
        if acc >= required {
            return Ok(k + 1);
        }
    }
    Err(Error::ThresholdUnreachable {
        achieved: acc,
        required,
    })
}

/// One basis per gating layer input, plus the energy threshold used to grow them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceMemory {
    layers: Vec<SubspaceBasis>,
    eps_th: f64,
}

impl SubspaceMemory {
    pub fn new(input_dims: &[usize], eps_th: f64) -> Result<Self> {
        if !(eps_th > 0.0 && eps_th <= 1.0) {
            return Err(Error::Config(format!("eps_th must lie in (0, 1], got {eps_th}")));
        }
        Ok(Self {
            layers: input_dims.iter().map(|&d| SubspaceBasis::empty(d)).collect(),
            eps_th,
        })
    }

    pub fn eps_th(&self) -> f64 {
        self.eps_th
    }

    pub fn layers(&self) -> &[SubspaceBasis] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &SubspaceBasis {
        &self.layers[l]
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.layers.iter().map(SubspaceBasis::dim).collect()
    }

    /// Extends every layer with its trace matrix (rows = samples, as produced
    /// by a batched forward pass).
    pub fn extend_with_traces(&mut self, traces: &[Mat]) -> Result<()> {
        if traces.len() != self.layers.len() {
            return Err(Error::DimMismatch {
                expected: self.layers.len(),
                got: traces.len(),
            });
        }
        for (basis, trace) in self.layers.iter_mut().zip(traces) {
            *basis = basis.extend(&trace.transpose(), self.eps_th)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_init, Rng};

    fn e(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn project_out_axis() {
        let m = SubspaceBasis::from_columns(Mat::col_vector(&e(2, 0))).unwrap();
        assert_eq!(m.project_out_vec(&[1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn project_out_empty_and_full() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(SubspaceBasis::empty(3).project_out(&x).unwrap(), x);
        let full = SubspaceBasis::from_columns(Mat::identity(3)).unwrap();
        assert_eq!(full.project_out(&x).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn project_out_dim_mismatch() {
        let m = SubspaceBasis::empty(3);
        assert!(matches!(
            m.project_out(&Mat::zeros(2, 1)),
            Err(Error::DimMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn choose_rank_examples() {
        assert_eq!(choose_rank(&[4.0, 1.0], 0.0, 5.0, 0.8).unwrap(), 1);
        assert_eq!(choose_rank(&[4.0, 1.0], 0.0, 5.0, 1.0).unwrap(), 2);
        assert_eq!(choose_rank(&[], 9.0, 9.0, 0.99).unwrap(), 0);
        assert!(matches!(
            choose_rank(&[1.0], 0.0, 5.0, 0.9),
            Err(Error::ThresholdUnreachable { .. })
        ));
    }

    #[test]
    fn extend_examples() {
        let h = Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]);
        let full = SubspaceBasis::empty(2).extend(&h, 1.0).unwrap();
        assert_eq!(full.rank(), 2);
        let abs = full.basis().map(f64::abs);
        assert!(abs.max_abs_diff(&Mat::identity(2)) < 1e-12);

        let one = SubspaceBasis::empty(2).extend(&h, 0.8).unwrap();
        assert_eq!(one.rank(), 1);
        assert!((one.basis()[(0, 0)].abs() - 1.0).abs() < 1e-12);

        let m = SubspaceBasis::from_columns(Mat::col_vector(&e(2, 0))).unwrap();
        let same = m.extend(&Mat::col_vector(&[3.0, 0.0]), 0.99).unwrap();
        assert_eq!(same, m);
    }

    #[test]
    fn extend_keeps_prefix() {
        let mut rng = Rng::new(2);
        let m0 = SubspaceBasis::empty(6)
            .extend(&gaussian_init(&mut rng, 6, 2, 1.0), 1.0)
            .unwrap();
        let m1 = m0.extend(&gaussian_init(&mut rng, 6, 2, 1.0), 1.0).unwrap();
        assert_eq!(m1.rank(), 4);
        assert_eq!(m1.basis().cols_range(0, 2), *m0.basis());
        assert!(m1.orthonormality_error() < 1e-10);
    }

    #[test]
    fn memory_rejects_bad_threshold() {
        assert!(SubspaceMemory::new(&[3], 0.0).is_err());
        assert!(SubspaceMemory::new(&[3], 1.5).is_err());
        assert!(SubspaceMemory::new(&[3], 1.0).is_ok());
    }
}
