use std::f64::consts::{LN_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_cols, column, Model};
use crate::distributions::samplers;
use crate::error::Result;
use crate::ndcore::{log_sum_exp, Tape, Tensor, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Data-free target densities used to probe expressiveness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyTarget {
    /// `Laplace(0, b = 2)`.
    Laplace,
    /// `0.3 N(-2, 1) + 0.7 N(2, 1)`.
    Bimodal,
    /// `Gamma(2, rate 1)`.
    Gamma,
    /// `N(z₁; z₂²/4, 1) N(z₂; 0, 4)`.
    Banana,
    /// `0.5 N(-2·1, I) + 0.5 N(2·1, I)` in two dimensions.
    TwoGaussians,
    /// Equal mixture of two zero-mean Gaussians with covariances `[[2, ±1.8], [±1.8, 2]]`.
    XShaped,
    /// `N(0, 1)`; the target of the closed-form bound checks.
    StandardNormal,
}

const X_DET: f64 = 4.0 - 1.8 * 1.8;

impl ToyTarget {
    pub const ALL: [ToyTarget; 7] = [
        Self::Laplace,
        Self::Bimodal,
        Self::Gamma,
        Self::Banana,
        Self::TwoGaussians,
        Self::XShaped,
        Self::StandardNormal,
    ];

    pub fn dim(self) -> usize {
        match self {
            Self::Laplace | Self::Bimodal | Self::Gamma | Self::StandardNormal => 1,
            Self::Banana | Self::TwoGaussians | Self::XShaped => 2,
        }
    }

    /// True when the support is the positive half-line (a log-normal conditional fits).
    pub fn positive_support(self) -> bool {
        matches!(self, Self::Gamma)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Laplace => "laplace",
            Self::Bimodal => "bimodal",
            Self::Gamma => "gamma",
            Self::Banana => "banana",
            Self::TwoGaussians => "two_gaussians",
            Self::XShaped => "x_shaped",
            Self::StandardNormal => "standard_normal",
        }
    }
}

/// Exact log density; `-inf` outside the support.
pub fn toy_target_logpdf(target: ToyTarget, z: &[f64]) -> f64 {
    assert_eq!(z.len(), target.dim(), "toy target dimension");
    match target {
        ToyTarget::Laplace => -(4.0f64).ln() - z[0].abs() / 2.0,
        ToyTarget::Bimodal => {
            log_sum_exp(&[
                0.3f64.ln() - 0.5 * (z[0] + 2.0).powi(2),
                0.7f64.ln() - 0.5 * (z[0] - 2.0).powi(2),
            ]) - HALF_LN_2PI
        }
        ToyTarget::Gamma => {
            if z[0] > 0.0 {
                z[0].ln() - z[0]
            } else {
                f64::NEG_INFINITY
            }
        }
        ToyTarget::Banana => {
            -0.5 * (z[0] - z[1] * z[1] / 4.0).powi(2)
                - HALF_LN_2PI
                - z[1] * z[1] / 8.0
                - 0.5 * (8.0 * PI).ln()
        }
        ToyTarget::TwoGaussians => {
            let q = |m: f64| -0.5 * ((z[0] - m).powi(2) + (z[1] - m).powi(2));
            log_sum_exp(&[q(-2.0), q(2.0)]) - LN_2 - 2.0 * HALF_LN_2PI
        }
        ToyTarget::XShaped => {
            let q = |s: f64| {
                -(2.0 * z[0] * z[0] - 2.0 * s * 1.8 * z[0] * z[1] + 2.0 * z[1] * z[1])
                    / (2.0 * X_DET)
            };
            log_sum_exp(&[q(1.0), q(-1.0)]) - LN_2 - 2.0 * HALF_LN_2PI - 0.5 * X_DET.ln()
        }
        ToyTarget::StandardNormal => -HALF_LN_2PI - 0.5 * z[0] * z[0],
    }
}

/// Exact draw: mixtures by component choice, banana by `z₂` then `z₁`.
pub fn toy_target_sample<R: Rng + ?Sized>(target: ToyTarget, rng: &mut R) -> Vec<f64> {
    let n = |rng: &mut R| samplers::std_normal(rng);
    match target {
        ToyTarget::Laplace => {
            let u: f64 = rng.random::<f64>() - 0.5;
            vec![-2.0 * u.signum() * (1.0 - 2.0 * u.abs()).ln()]
        }
        ToyTarget::Bimodal => {
            let m = if rng.random::<f64>() < 0.3 { -2.0 } else { 2.0 };
            vec![m + n(rng)]
        }
        ToyTarget::Gamma => vec![samplers::gamma(2.0, 1.0, rng).expect("valid parameters")],
        ToyTarget::Banana => {
            let z2 = 2.0 * n(rng);
            vec![z2 * z2 / 4.0 + n(rng), z2]
        }
        ToyTarget::TwoGaussians => {
            let m = if rng.random::<f64>() < 0.5 { -2.0 } else { 2.0 };
            vec![m + n(rng), m + n(rng)]
        }
        ToyTarget::XShaped => {
            let s = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let (e1, e2) = (n(rng), n(rng));
            let l11 = 2.0f64.sqrt();
            let l21 = s * 1.8 / l11;
            let l22 = (2.0 - l21 * l21).sqrt();
            vec![l11 * e1, l21 * e1 + l22 * e2]
        }
        ToyTarget::StandardNormal => vec![n(rng)],
    }
}

/// `log Σ_c exp(cols[c])` for a list of `[J]` nodes.
fn log_sum_exp_cols(tape: &Tape, cols: &[Var]) -> Var {
    let rows = tape.shape(cols[0])[0];
    let mut m = tape.reshape(cols[0], vec![rows, 1]);
    for &c in &cols[1..] {
        m = tape.concat_cols(m, tape.reshape(c, vec![rows, 1]));
    }
    tape.add_scalar(tape.log_mean_exp_rows(m), (cols.len() as f64).ln())
}

impl Model for ToyTarget {
    fn dim(&self) -> usize {
        ToyTarget::dim(*self)
    }

    fn data_len(&self) -> usize {
        0
    }

    fn log_likelihood_on_tape(&self, tape: &Tape, z: Var, _batch: &[usize]) -> Result<Var> {
        let rows = check_cols(tape, z, self.dim(), "toy likelihood")?;
        Ok(tape.constant(Tensor::zeros(&[rows])))
    }

    fn log_prior_on_tape(&self, tape: &Tape, z: Var) -> Result<Var> {
        check_cols(tape, z, self.dim(), "toy target")?;
        let out = match self {
            ToyTarget::Laplace => tape.add_scalar(
                tape.scale(tape.abs(column(tape, z, 0)), -0.5),
                -(4.0f64).ln(),
            ),
            ToyTarget::Bimodal => {
                let z0 = column(tape, z, 0);
                let a = tape.add_scalar(
                    tape.scale(tape.square(tape.add_scalar(z0, 2.0)), -0.5),
                    0.3f64.ln(),
                );
                let b = tape.add_scalar(
                    tape.scale(tape.square(tape.add_scalar(z0, -2.0)), -0.5),
                    0.7f64.ln(),
                );
                tape.add_scalar(log_sum_exp_cols(tape, &[a, b]), -HALF_LN_2PI)
            }
            ToyTarget::Gamma => {
                let z0 = column(tape, z, 0);
                tape.sub(tape.ln(z0), z0)
            }
            ToyTarget::Banana => {
                let (z1, z2) = (column(tape, z, 0), column(tape, z, 1));
                let sq2 = tape.square(z2);
                let r = tape.sub(z1, tape.scale(sq2, 0.25));
                let s = tape.add(tape.scale(tape.square(r), -0.5), tape.scale(sq2, -0.125));
                tape.add_scalar(s, -HALF_LN_2PI - 0.5 * (8.0 * PI).ln())
            }
            ToyTarget::TwoGaussians => {
                let (z1, z2) = (column(tape, z, 0), column(tape, z, 1));
                let q = |m: f64| {
                    let a = tape.square(tape.add_scalar(z1, -m));
                    let b = tape.square(tape.add_scalar(z2, -m));
                    tape.scale(tape.add(a, b), -0.5)
                };
                let (a, b) = (q(-2.0), q(2.0));
                tape.add_scalar(log_sum_exp_cols(tape, &[a, b]), -LN_2 - 2.0 * HALF_LN_2PI)
            }
            ToyTarget::XShaped => {
                let (z1, z2) = (column(tape, z, 0), column(tape, z, 1));
                let diag = tape.scale(tape.add(tape.square(z1), tape.square(z2)), 2.0);
                let cross = tape.scale(tape.mul(z1, z2), 3.6);
                let q = |s: f64| {
                    let num = if s > 0.0 {
                        tape.sub(diag, cross)
                    } else {
                        tape.add(diag, cross)
                    };
                    tape.scale(num, -1.0 / (2.0 * X_DET))
                };
                let (a, b) = (q(1.0), q(-1.0));
                tape.add_scalar(
                    log_sum_exp_cols(tape, &[a, b]),
                    -LN_2 - 2.0 * HALF_LN_2PI - 0.5 * X_DET.ln(),
                )
            }
            ToyTarget::StandardNormal => tape.add_scalar(
                tape.scale(tape.square(column(tape, z, 0)), -0.5),
                -HALF_LN_2PI,
            ),
        };
        Ok(out)
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        toy_target_logpdf(*self, z)
    }
}
