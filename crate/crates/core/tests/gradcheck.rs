mod common;

use common::fd::{model_instance, op_instance, OPS};
use common::FD_TOL;
use gainlora::gating::GateFn;
use gainlora::numerics::{Graph, Mat, Rng};

#[test]
fn every_op_matches_central_differences() {
    let mut rng = Rng::new(11);
    for op in OPS {
        for i in 0..20 {
            let err = op_instance(op, &mut rng);
            assert!(err <= FD_TOL, "{op} instance {i}: relative error {err:.3e}");
        }
    }
}

#[test]
fn toy_model_with_gates_matches_central_differences() {
    let mut rng = Rng::new(12);
    for gate in [GateFn::AbsSigmoid, GateFn::ClampAbs, GateFn::AbsSine, GateFn::Sigmoid] {
        for classes in [2, 3] {
            for _ in 0..3 {
                let err = model_instance(gate, classes, &mut rng);
                assert!(err <= FD_TOL, "{gate} with {classes} classes: {err:.3e}");
            }
        }
    }
}

#[test]
fn softmax_ce_matches_hand_computation() {
    // logits [0, ln 3] with label 1: p = 3/4, loss = ln(4/3), dz = [1/4, -1/4]
    let mut g = Graph::new();
    let z = g.param(Mat::from_rows(&[vec![0.0, 3f64.ln()]]));
    let loss = g.softmax_ce(z, &[1]);
    assert!((g.value(loss)[(0, 0)] - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    g.backward(loss).unwrap();
    let dz = g.grad(z).unwrap();
    assert!((dz[(0, 0)] - 0.25).abs() < 1e-15);
    assert!((dz[(0, 1)] + 0.25).abs() < 1e-15);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.param(Mat::zeros(2, 2));
    assert!(g.backward(x).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Mat::filled(2, 2, 1.0));
    let p = g.param(Mat::filled(2, 2, 2.0));
    let y = g.matmul(c, p);
    let loss = g.sum_sq(y);
    g.backward(loss).unwrap();
    assert!(g.grad(c).is_none());
    assert!(g.grad(p).is_some());
}
