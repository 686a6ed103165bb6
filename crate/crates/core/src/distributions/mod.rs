//! Log densities, exact samplers and reparameterized samplers.

mod dist;
pub mod rng;
pub mod samplers;

pub use dist::{normal_logpdf, DistSpec, LOGIT_CLAMP};
pub use rng::RngStream;
pub use samplers::{crt as crt_sample, polya_gamma as polya_gamma_sample};

/// Truncation level of the Pólya-Gamma series sampler.
pub const PG_TRUNCATION: usize = 5;
