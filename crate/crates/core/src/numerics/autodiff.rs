//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. The op set is
//! deliberately closed: matmul (plain and right-transposed), add, scalar
//! scale/shift, SiLU, sigmoid, abs, sin, clamp-from-above, row scaling by a
//! column vector, mean over rows, sum of squares and softmax cross-entropy.

use crate::{Error, Result};

use super::Mat;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sin(Var),
    MinScalar(Var, f64),
    MulCol(Var, Var),
    MeanRows(Var),
    SumSq(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Mat,
    },
}

#[derive(Clone, Debug)]
pub struct DiffNode {
    value: Mat,
    grad: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

impl DiffNode {
    pub fn value(&self) -> &Mat {
        &self.value
    }

    pub fn gradient(&self) -> Option<&Mat> {
        self.grad.as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<DiffNode>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Param, true)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn node(&self, v: Var) -> &DiffNode {
        &self.nodes[v.0]
    }

    /// Gradient after [`Graph::backward`]; `None` for nodes the loss does not
    /// depend on through any parameter.
    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(silu);
        let ng = self.needs(a);
        self.push(value, Op::Silu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let ng = self.needs(a);
        self.push(value, Op::Abs(a), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sin);
        let ng = self.needs(a);
        self.push(value, Op::Sin(a), ng)
    }

    /// Elementwise `min(x, c)`.
    pub fn min_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x.min(c));
        let ng = self.needs(a);
        self.push(value, Op::MinScalar(a, c), ng)
    }

    /// Scales row `i` of `x` (n×k) by `s[i]` (s is n×1).
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(
            sv.shape(),
            (xv.rows(), 1),
            "mul_col: {:?} by {:?}",
            xv.shape(),
            sv.shape()
        );
        let value = Mat::from_fn(xv.rows(), xv.cols(), |i, j| xv[(i, j)] * sv[(i, 0)]);
        let ng = self.needs(x) || self.needs(s);
        self.push(value, Op::MulCol(x, s), ng)
    }

    /// Mean over rows, giving 1×k.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.rows().max(1) as f64;
        let value = Mat::from_fn(1, av.cols(), |_, j| (0..av.rows()).map(|i| av[(i, j)]).sum::<f64>() / n);
        let ng = self.needs(a);
        self.push(value, Op::MeanRows(a), ng)
    }

    /// Sum of squared entries, 1×1.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let value = Mat::filled(1, 1, self.value(a).frob_sq());
        let ng = self.needs(a);
        self.push(value, Op::SumSq(a), ng)
    }

    /// Mean softmax cross-entropy of the rows of `logits` against `labels`.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "one label per logit row");
        let mut probs = Mat::zeros(lv.rows(), lv.cols());
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < lv.cols(), "label {y} out of range");
            let row = lv.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for (j, x) in row.iter().enumerate() {
                probs[(i, j)] = (x - m).exp() / z;
            }
            loss += z.ln() + m - row[y];
        }
        let n = labels.len().max(1) as f64;
        let ng = self.needs(logits);
        self.push(
            Mat::filled(1, 1, loss / n),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        )
    }

    fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Populates gradients of `loss` for every node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        Self::accumulate(&mut grads, *a, g.matmul_t(val(*b)));
                    }
                    if needs(*b) {
                        Self::accumulate(&mut grads, *b, val(*a).t_matmul(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if needs(*a) {
                        Self::accumulate(&mut grads, *a, g.matmul(val(*b)));
                    }
                    if needs(*b) {
                        Self::accumulate(&mut grads, *b, g.t_matmul(val(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        Self::accumulate(&mut grads, *b, g);
                    }
                }
                Op::Scale(a, s) => Self::accumulate(&mut grads, *a, g.scale(*s)),
                Op::AddScalar(a) => Self::accumulate(&mut grads, *a, g),
                Op::Silu(a) => {
                    let d = val(*a).zip_map(&g, |x, gy| gy * silu_grad(x));
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = node.value.zip_map(&g, |y, gy| gy * y * (1.0 - y));
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let d = val(*a).zip_map(&g, |x, gy| gy * sign(x));
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Sin(a) => {
                    let d = val(*a).zip_map(&g, |x, gy| gy * x.cos());
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::MinScalar(a, c) => {
                    let c = *c;
                    let d = val(*a).zip_map(&g, |x, gy| if x < c { gy } else { 0.0 });
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::MulCol(x, s) => {
                    let (xv, sv) = (val(*x), val(*s));
                    if needs(*x) {
                        let d = Mat::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * sv[(i, 0)]);
                        Self::accumulate(&mut grads, *x, d);
                    }
                    if needs(*s) {
                        let d = Mat::from_fn(g.rows(), 1, |i, _| {
                            g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum()
                        });
                        Self::accumulate(&mut grads, *s, d);
                    }
                }
                Op::MeanRows(a) => {
                    let av = val(*a);
                    let n = av.rows().max(1) as f64;
                    let d = Mat::from_fn(av.rows(), av.cols(), |_, j| g[(0, j)] / n);
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::SumSq(a) => {
                    let gy = g[(0, 0)];
                    let d = val(*a).scale(2.0 * gy);
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let gy = g[(0, 0)];
                    let n = labels.len().max(1) as f64;
                    let mut d = probs.scale(gy / n);
                    for (i, &y) in labels.iter().enumerate() {
                        d[(i, y)] -= gy / n;
                    }
                    Self::accumulate(&mut grads, *logits, d);
                }
            }
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut g = Graph::new();
        let b = g.param(Mat::filled(1, 1, 0.0));
        let y = g.sigmoid(b);
        g.backward(y).unwrap();
        assert!((g.grad(b).unwrap()[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn silu_derivative_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Mat::filled(1, 1, 0.0));
        let y = g.silu(x);
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Mat::zeros(2, 1));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss { rows: 2, cols: 1 })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(Mat::identity(2));
        let x = g.param(Mat::col_vector(&[1.0, 2.0]));
        let y = g.matmul(w, x);
        let l = g.sum_sq(y);
        g.backward(l).unwrap();
        assert!(g.grad(w).is_none());
        assert_eq!(g.grad(x).unwrap().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        // l = sum((x + x)^2) = 4 x^2 → dl/dx = 8x
        let mut g = Graph::new();
        let x = g.param(Mat::filled(1, 1, 3.0));
        let y = g.add(x, x);
        let l = g.sum_sq(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap()[(0, 0)], 24.0);
    }

    #[test]
    fn softmax_ce_value() {
        let mut g = Graph::new();
        let z = g.param(Mat::from_rows(&[vec![0.0, 0.0]]));
        let l = g.softmax_ce(z, &[1]);
        assert!((g.value(l)[(0, 0)] - std::f64::consts::LN_2).abs() < 1e-15);
        g.backward(l).unwrap();
        assert_eq!(g.grad(z).unwrap().as_slice(), &[0.5, -0.5]);
    }
}
