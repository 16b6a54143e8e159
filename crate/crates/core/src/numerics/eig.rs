use crate::{Error, Result};

use super::Mat;

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Mat,
}

/// Cyclic Jacobi eigendecomposition `S = Q Λ Qᵀ`.
///
/// Sweeps over all off-diagonal pairs, rotating each one to zero, until the
/// off-diagonal mass is negligible relative to the Frobenius norm.
pub fn sym_eig(s: &Mat) -> Result<SymEig> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "sym_eig needs a square matrix, got {:?}",
            s.shape()
        )));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("sym_eig input"));
    }
    let scale = s.max_abs().max(1.0);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NonSymmetric(asym));
    }

    let mut a = Mat::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    let mut v = Mat::identity(n);
    let total = a.frob_sq();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= 1e-30 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    if !vectors.is_finite() || values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sym_eig output"));
    }
    Ok(SymEig { values, vectors })
}

/// `A ← Jᵀ A J`, `V ← V J` for the plane rotation in `(p, q)`.
fn rotate(a: &mut Mat, v: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_init, Rng};

    fn reconstruct(e: &SymEig) -> Mat {
        let n = e.values.len();
        let scaled = Mat::from_fn(n, n, |i, j| e.vectors[(i, j)] * e.values[j]);
        scaled.matmul_t(&e.vectors)
    }

    #[test]
    fn diagonal() {
        let s = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]);
        let e = sym_eig(&s).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(
            e.vectors.col(0).iter().map(|x| x.abs()).collect::<Vec<_>>(),
            vec![0.0, 1.0]
        );
    }

    #[test]
    fn two_by_two() {
        // characteristic polynomial (2-λ)² - 1 = 0 → λ ∈ {3, 1}
        let s = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let e = sym_eig(&s).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let v0 = e.vectors.col(0);
        assert!((v0[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v0[0] - v0[1]).abs() < 1e-12);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut rng = Rng::new(11);
        for &n in &[1usize, 3, 17, 64, 256] {
            let g = gaussian_init(&mut rng, n, n, 1.0);
            let s = g.add(&g.transpose());
            let e = sym_eig(&s).unwrap();
            assert!(reconstruct(&e).max_abs_diff(&s) <= 1e-8, "n={n}");
            let qtq = e.vectors.t_matmul(&e.vectors);
            assert!(qtq.max_abs_diff(&Mat::identity(n)) <= 1e-8, "n={n}");
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rejects_asymmetric_and_nan() {
        let s = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(sym_eig(&s), Err(Error::NonSymmetric(_))));
        let s = Mat::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(sym_eig(&s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rank_deficient_psd() {
        let mut rng = Rng::new(5);
        let h = gaussian_init(&mut rng, 10, 3, 1.0);
        let s = h.matmul_t(&h);
        let e = sym_eig(&s).unwrap();
        assert!(e.values[3..].iter().all(|x| x.abs() < 1e-10));
        assert!(reconstruct(&e).max_abs_diff(&s) <= 1e-8);
    }
}
