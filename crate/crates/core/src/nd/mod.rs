//! Numeric core: dense matrices, taped reverse-mode differentiation, MLPs
//! and optimizers.

mod gradcheck;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use mlp::{Activation, BoundMlp, Layer, Mlp, MlpParams, MlpSpec};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tape::{Gradients, Tape, ValueId, SQRT_EPS};
pub use tensor::Tensor2;
