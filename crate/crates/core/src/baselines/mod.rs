//! Reference posteriors: exact Gibbs samplers and mean-field variational fits.

pub mod gibbs;
pub mod mfvi;

pub use gibbs::{
    nb_gibbs, nb_gibbs_step, p_conditional, pg_gibbs, pg_gibbs_step, poislog_gibbs,
    poislog_gibbs_step, r_conditional, CountState, GibbsConfig, PgState, CHOLESKY_JITTER,
};
pub use mfvi::{
    jj_bound, local_parameter, mfvi_logistic_diag, mfvi_logistic_diag_with_tol, mfvi_logistic_full,
    mfvi_logistic_full_with_tol, mfvi_nb, MfviLogistic, MfviNb, MFVI_TOL,
};
