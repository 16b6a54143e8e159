//! Dense linear algebra, seeded randomness, symmetric eigendecomposition,
//! reverse-mode differentiation and the AdamW optimizer.

mod autodiff;
mod eig;
mod mat;
mod optim;
mod rng;

pub use autodiff::{sigmoid, silu, DiffNode, Graph, Var};
pub use eig::{sym_eig, SymEig};
pub use mat::{dot, norm, Mat};
pub use optim::{AdamW, AdamWConfig};
pub use rng::{gaussian_init, Rng, Stream};
