#![allow(dead_code)]

use gainlora::config::ExperimentConfig;
use gainlora::numerics::{Graph, Mat, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Worst relative gap between tape gradients and central differences, one
/// norm-wise ratio per parameter. `f` must rebuild the same scalar loss each call.
pub fn grad_rel_err(params: &[Mat], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss).expect("scalar loss");
    let analytic: Vec<Mat> = vars.iter().map(|&v| g.grad(v).expect("gradient").clone()).collect();

    let eval = |ps: &[Mat]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = f(&mut g, &vars);
        g.value(loss)[(0, 0)]
    };

    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let mut numeric = Mat::zeros(params[k].rows(), params[k].cols());
        for e in 0..params[k].len() {
            let mut ps = params.to_vec();
            ps[k].as_mut_slice()[e] += FD_STEP;
            let up = eval(&ps);
            ps[k].as_mut_slice()[e] -= 2.0 * FD_STEP;
            let down = eval(&ps);
            numeric.as_mut_slice()[e] = (up - down) / (2.0 * FD_STEP);
        }
        let diff = analytic[k].sub(&numeric).frob_sq().sqrt();
        let scale = analytic[k].frob_sq().sqrt().max(numeric.frob_sq().sqrt());
        let rel = if scale < 1e-10 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Reduces any node to a scalar whose gradient reaches every entry:
/// `Σ (v + c)²` with a fixed random offset `c`.
pub fn reduce(g: &mut Graph, v: Var, offset: &Mat) -> Var {
    let c = g.constant(offset.clone());
    let s = g.add(v, c);
    g.sum_sq(s)
}

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text, &[]).expect("valid test config")
}

/// Small gated setup used by several tests: 3 tasks, 64 training samples.
pub const SMALL: &str = r#"
seeds = [0]
[model]
embed_dim = 16
hidden = 16
[gating]
hidden = 16
[train]
epochs = 40
batch_size = 16
lr = 0.01
[tasks]
tasks = 3
train = 64
test = 40
"#;

pub mod fd {
    use super::{grad_rel_err, reduce};
    use gainlora::gating::{GateFn, GatingModule, GatingShape};
    use gainlora::model::{BackboneShape, ToyBackbone};
    use gainlora::numerics::{gaussian_init, Mat, Rng};

    pub const OPS: &[&str] = &[
        "matmul",
        "matmul_t",
        "add",
        "scale",
        "add_scalar",
        "silu",
        "sigmoid",
        "abs",
        "sin",
        "min_scalar",
        "mul_col",
        "mean_rows",
        "sum_sq",
        "softmax_ce",
    ];

    fn dims(rng: &mut Rng) -> (usize, usize, usize) {
        (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4))
    }

    fn randn(rng: &mut Rng, r: usize, c: usize) -> Mat {
        gaussian_init(rng, r, c, 1.0)
    }

    /// Entries pushed at least `gap` away from `kink`.
    fn away_from(rng: &mut Rng, r: usize, c: usize, kink: f64, gap: f64) -> Mat {
        randn(rng, r, c).map(|x| kink + x.signum() * (gap + x.abs()))
    }

    /// One random instance of op `name`; returns the relative gradient error.
    pub fn op_instance(name: &str, rng: &mut Rng) -> f64 {
        let (n, k, m) = dims(rng);
        let off = randn(rng, n, m);
        let off_nk = randn(rng, n, k);
        match name {
            "matmul" => grad_rel_err(&[randn(rng, n, k), randn(rng, k, m)], |g, v| {
                let y = g.matmul(v[0], v[1]);
                reduce(g, y, &off)
            }),
            "matmul_t" => grad_rel_err(&[randn(rng, n, k), randn(rng, m, k)], |g, v| {
                let y = g.matmul_t(v[0], v[1]);
                reduce(g, y, &off)
            }),
            "add" => grad_rel_err(&[randn(rng, n, k), randn(rng, n, k)], |g, v| {
                let y = g.add(v[0], v[1]);
                reduce(g, y, &off_nk)
            }),
            "scale" => {
                let s = rng.normal() * 2.0;
                grad_rel_err(&[randn(rng, n, k)], |g, v| {
                    let y = g.scale(v[0], s);
                    reduce(g, y, &off_nk)
                })
            }
            "add_scalar" => {
                let s = rng.normal();
                grad_rel_err(&[randn(rng, n, k)], |g, v| {
                    let y = g.add_scalar(v[0], s);
                    reduce(g, y, &off_nk)
                })
            }
            "silu" | "sigmoid" | "sin" => grad_rel_err(&[randn(rng, n, k).scale(2.0)], |g, v| {
                let y = match name {
                    "silu" => g.silu(v[0]),
                    "sigmoid" => g.sigmoid(v[0]),
                    _ => g.sin(v[0]),
                };
                reduce(g, y, &off_nk)
            }),
            "abs" => grad_rel_err(&[away_from(rng, n, k, 0.0, 0.05)], |g, v| {
                let y = g.abs(v[0]);
                reduce(g, y, &off_nk)
            }),
            "min_scalar" => {
                let c = rng.normal();
                grad_rel_err(&[away_from(rng, n, k, c, 0.05)], |g, v| {
                    let y = g.min_scalar(v[0], c);
                    reduce(g, y, &off_nk)
                })
            }
            "mul_col" => grad_rel_err(&[randn(rng, n, k), randn(rng, n, 1)], |g, v| {
                let y = g.mul_col(v[0], v[1]);
                reduce(g, y, &off_nk)
            }),
            "mean_rows" => {
                let off = randn(rng, 1, k);
                grad_rel_err(&[randn(rng, n, k)], |g, v| {
                    let y = g.mean_rows(v[0]);
                    reduce(g, y, &off)
                })
            }
            "sum_sq" => grad_rel_err(&[randn(rng, n, k)], |g, v| g.sum_sq(v[0])),
            "softmax_ce" => {
                let classes = 2 + rng.below(4);
                let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
                grad_rel_err(&[randn(rng, n, classes).scale(2.0)], |g, v| g.softmax_ce(v[0], &labels))
            }
            other => panic!("unknown op {other}"),
        }
    }

    /// Full training loss of the toy model with one frozen and one trainable
    /// branch per layer, a frozen gate column, a trainable gate and the
    /// orthogonality penalty. Parameters: A, B per layer, then gate weights.
    pub fn model_instance(gate: GateFn, classes: usize, rng: &mut Rng) -> f64 {
        let shape = BackboneShape {
            vocab: 12,
            embed_dim: 5,
            hidden: 4,
            classes,
        };
        let backbone = ToyBackbone::random(shape, rng.below(1000) as u64);
        let n = 6;
        let r = 2;
        let x = randn(rng, n, shape.embed_dim);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let frozen_coeff = Mat::from_fn(n, 1, |_, _| rng.uniform());
        let dims = [(shape.hidden, shape.embed_dim), (shape.hidden, shape.hidden)];
        let old: Vec<(Mat, Mat)> = dims
            .iter()
            .map(|&(o, i)| (randn(rng, o, r), randn(rng, r, i)))
            .collect();
        let gshape = GatingShape {
            embed_dim: shape.embed_dim,
            hidden: 3,
            layers: 2,
        };
        let module = GatingModule::random(gshape, gate, 0.7, rng);

        let mut params = Vec::new();
        for &(o, i) in &dims {
            params.push(randn(rng, o, r).scale(0.5));
            params.push(randn(rng, r, i).scale(0.5));
        }
        params.extend(module.weights().iter().cloned());
        let lambda = 0.3;

        grad_rel_err(&params, |g, v| {
            let xv = g.constant(x.clone());
            let mut branch_vars = Vec::new();
            for (l, (a0, b0)) in old.iter().enumerate() {
                let a0 = g.constant(a0.clone());
                let b0 = g.constant(b0.clone());
                branch_vars.push(vec![(a0, b0), (v[2 * l], v[2 * l + 1])]);
            }
            let c0 = g.constant(frozen_coeff.clone());
            let c1 = module.build(g, xv, &v[4..]);
            let logits = backbone.build(g, xv, &branch_vars, &[Some(c0), Some(c1)]);
            let mut loss = g.softmax_ce(logits, &labels);
            for (l, bv) in branch_vars.iter().enumerate() {
                let p = g.matmul_t(bv[0].1, v[2 * l + 1]);
                let s = g.sum_sq(p);
                let s = g.scale(s, lambda);
                loss = g.add(loss, s);
            }
            loss
        })
    }
}
