pub mod baselines;
pub mod conjugate;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod models;
pub mod ndcore;
pub mod sivi;
pub mod special;

pub use error::{Error, Result};
