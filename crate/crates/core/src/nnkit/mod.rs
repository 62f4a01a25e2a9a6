//! Dense MLP kernel: forward/backward passes, Adam, and a central
//! finite-difference oracle.

mod adam;
mod finite_diff;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use finite_diff::{finite_diff_grad, max_relative_error, relative_error};
pub use matrix::{dot, norm, Matrix};
pub use mlp::{
    mlp_backward, mlp_forward, Activation, DenseLayer, FlatParams, ForwardTrace, MlpSpec,
    ParamStore,
};
