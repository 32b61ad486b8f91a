//! Dense tensors, multilayer perceptrons with analytic reverse-mode
//! gradients, and first-order optimizers.
//!
//! Layers compute `y = act(x Wᵀ + b)` on row-major batches. `backward`
//! returns gradients for every parameter plus the gradient with respect to
//! the input, so losses that chain two networks (an actor feeding a critic)
//! can propagate through both.

mod checkpoint;
mod fit;
pub mod gradcheck;
mod mlp;
mod optim;
mod tensor;

pub use checkpoint::MlpCheckpoint;
pub use fit::{cosine_lr, fit_mse, mse, FitConfig};
pub use mlp::{Activation, Backward, Dense, ForwardTrace, Gradients, Mlp};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, StepOutcome};
pub use tensor::Tensor;
