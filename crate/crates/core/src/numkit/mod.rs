//! Dense vectors, reverse-mode autodiff, ReLU networks and optimizers.

pub mod expr;
pub mod mlp;
pub mod optim;
pub mod sobol;
pub mod tape;
pub mod vector;

pub use expr::Expr;
pub use mlp::{Cache, Head, Mlp};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{finite_difference, grad, Tape, Var};
pub use vector::DenseVector;
