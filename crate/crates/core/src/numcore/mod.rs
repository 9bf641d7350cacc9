//! Dense numeric layer: flat parameter vectors, row-major matrices and a
//! fully connected network with explicit backpropagation.

mod matrix;
mod mlp;
mod params;

pub use matrix::Matrix;
pub use mlp::{
    forward, init_params, loss, loss_and_gradient, Batch, HiddenActivation, LossKind, MlpSpec,
    OutputActivation,
};
pub use params::{sgd_step, ParamVector};
