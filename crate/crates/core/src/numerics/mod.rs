//! Tensors, seeded randomness, differentiable primitives and optimisers.

pub mod float;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use float::{gemm, Float};
pub use gradcheck::{grad_check, Differentiable, FnOp, GradCheckConfig, GradCheckReport, Projected};
pub use optim::{adamw_step, sgd_momentum_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use rng::RngStream;
pub use tensor::Tensor;
