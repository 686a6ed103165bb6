//! Dense tensors, tape-based reverse-mode differentiation and the MLP used as the
//! implicit mixing transform.

pub mod fd;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use fd::finite_diff_grad;
pub use mlp::{mlp_forward, Mlp, MlpVars};
pub use optim::{Adam, DecayedAscent};
pub use params::ParamVector;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{log_mean_exp, log_sum_exp, sigmoid, softplus, Tensor};
