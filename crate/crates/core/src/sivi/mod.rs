//! Semi-implicit posteriors: an implicit mixer `ψ = T_φ(ε)` feeding an
//! explicit conditional `q_ξ(z | ψ)`, the surrogate bounds on their ELBO and
//! the pathwise training loop.

pub mod bounds;
pub mod conditional;
pub mod mixer;
pub mod posterior;
pub mod train;

pub use bounds::{
    correction_a_k, iw_lower_bound, lower_bound_grad, lower_bound_k, lower_bound_k_pooled,
    regularizer_b_k, upper_bound_k, upper_bound_k_pooled, BoundEstimate, BoundGradient, TERM_CLIP,
};
pub use conditional::{
    ConjugateConditional, ExplicitConditional, Factor, GaussianConditional, Link, Scale,
};
pub use mixer::{mix_sample, ImplicitMixer, NoiseKind};
pub use posterior::{posterior_draws, PosteriorDocument, SemiImplicitPosterior, SCHEMA_VERSION};
pub use train::{train, KSchedule, LrDecay, TrainConfig, TrainOutput, XiOptimizer};
