use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::samplers;
use crate::error::{Error, Result};
use crate::ndcore::{sigmoid, softplus, Tape, Tensor, Var};
use crate::special::{ln_beta, ln_gamma};

/// Smallest distance a logit-normal argument keeps from 0 and 1.
pub const LOGIT_CLAMP: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A fully specified distribution over a vector `z` of length [`DistSpec::dim`].
///
/// Every family except `MvnFull` factorizes over coordinates, with one
/// parameter entry per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum DistSpec {
    MvnDiag {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    /// `N(mean, L Lᵀ)`; `chol` is lower triangular, row-major `d × d`.
    MvnFull {
        mean: Vec<f64>,
        chol: Vec<f64>,
    },
    /// `exp(x)` with `x ~ N(mu, var)`.
    LogNormal {
        mu: Vec<f64>,
        var: Vec<f64>,
    },
    /// `sigmoid(x)` with `x ~ N(mu, var)`.
    LogitNormal {
        mu: Vec<f64>,
        var: Vec<f64>,
    },
    Gamma {
        shape: Vec<f64>,
        rate: Vec<f64>,
    },
    Beta {
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    /// pmf `Γ(x + r) / (x! Γ(r)) · p^x (1 − p)^r`.
    NegBinomial {
        r: Vec<f64>,
        p: Vec<f64>,
    },
    BernoulliLogit {
        logits: Vec<f64>,
    },
}

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

fn check_all(name: &str, xs: &[f64], ok: impl Fn(f64) -> bool) -> Result<()> {
    for (i, &x) in xs.iter().enumerate() {
        if x.is_nan() {
            return Err(invalid(format!("{name}[{i}] is NaN")));
        }
        if !ok(x) {
            return Err(invalid(format!(
                "{name}[{i}] = {x} violates its constraint"
            )));
        }
    }
    Ok(())
}

fn same_len(name: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "DistSpec",
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(invalid(format!("{name}: zero-dimensional distribution")));
    }
    Ok(())
}

fn pos(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn fin(x: f64) -> bool {
    x.is_finite()
}

impl DistSpec {
    pub fn family(&self) -> &'static str {
        match self {
            Self::MvnDiag { .. } => "MvnDiag",
            Self::MvnFull { .. } => "MvnFull",
            Self::LogNormal { .. } => "LogNormal",
            Self::LogitNormal { .. } => "LogitNormal",
            Self::Gamma { .. } => "Gamma",
            Self::Beta { .. } => "Beta",
            Self::NegBinomial { .. } => "NegBinomial",
            Self::BernoulliLogit { .. } => "BernoulliLogit",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::MvnDiag { mean, .. } | Self::MvnFull { mean, .. } => mean.len(),
            Self::LogNormal { mu, .. } | Self::LogitNormal { mu, .. } => mu.len(),
            Self::Gamma { shape, .. } => shape.len(),
            Self::Beta { alpha, .. } => alpha.len(),
            Self::NegBinomial { r, .. } => r.len(),
            Self::BernoulliLogit { logits } => logits.len(),
        }
    }

    pub fn is_reparameterizable(&self) -> bool {
        matches!(
            self,
            Self::MvnDiag { .. }
                | Self::MvnFull { .. }
                | Self::LogNormal { .. }
                | Self::LogitNormal { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::MvnDiag { mean, var }
            | Self::LogNormal { mu: mean, var }
            | Self::LogitNormal { mu: mean, var } => {
                same_len(self.family(), mean, var)?;
                check_all("mean", mean, fin)?;
                check_all("var", var, pos)
            }
            Self::MvnFull { mean, chol } => {
                let d = mean.len();
                if chol.len() != d * d || d == 0 {
                    return Err(Error::Shape {
                        op: "MvnFull",
                        expected: vec![d, d],
                        got: vec![chol.len()],
                    });
                }
                check_all("mean", mean, fin)?;
                check_all("chol", chol, fin)?;
                for i in 0..d {
                    if chol[i * d + i] <= 0.0 {
                        return Err(invalid(format!("chol diagonal {i} must be positive")));
                    }
                    if (i + 1..d).any(|j| chol[i * d + j] != 0.0) {
                        return Err(invalid("chol must be lower triangular".into()));
                    }
                }
                Ok(())
            }
            Self::Gamma { shape, rate } => {
                same_len("Gamma", shape, rate)?;
                check_all("shape", shape, pos)?;
                check_all("rate", rate, pos)
            }
            Self::Beta { alpha, beta } => {
                same_len("Beta", alpha, beta)?;
                check_all("alpha", alpha, pos)?;
                check_all("beta", beta, pos)
            }
            Self::NegBinomial { r, p } => {
                same_len("NegBinomial", r, p)?;
                check_all("r", r, pos)?;
                check_all("p", p, |x| x > 0.0 && x < 1.0)
            }
            Self::BernoulliLogit { logits } => {
                if logits.is_empty() {
                    return Err(invalid("BernoulliLogit: zero-dimensional".into()));
                }
                check_all("logits", logits, fin)
            }
        }
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Shape {
                op: "logpdf",
                expected: vec![self.dim()],
                got: vec![z.len()],
            });
        }
        Ok(())
    }

    /// Whether `z` lies in the support (before logit-normal clamping).
    pub fn in_support(&self, z: &[f64]) -> bool {
        let all = |f: fn(f64) -> bool| z.iter().all(|&v| f(v));
        match self {
            Self::MvnDiag { .. } | Self::MvnFull { .. } => all(fin),
            Self::LogNormal { .. } | Self::Gamma { .. } => all(|v| v > 0.0 && v.is_finite()),
            Self::LogitNormal { .. } => all(|v| (0.0..=1.0).contains(&v)),
            Self::Beta { .. } => all(|v| v > 0.0 && v < 1.0),
            Self::NegBinomial { .. } => all(|v| v >= 0.0 && v.fract() == 0.0 && v.is_finite()),
            Self::BernoulliLogit { .. } => all(|v| v == 0.0 || v == 1.0),
        }
    }

    /// Exact log density (or mass) at `z`; `-inf` outside the support.
    pub fn logpdf(&self, z: &Tensor) -> Result<f64> {
        self.validate()?;
        let z = z.data();
        self.check_z(z)?;
        if !self.in_support(z) {
            return Ok(f64::NEG_INFINITY);
        }
        let normal =
            |x: f64, m: f64, v: f64| -0.5 * (LN_2PI + v.ln()) - (x - m).powi(2) / (2.0 * v);
        let lp = match self {
            Self::MvnDiag { mean, var } => {
                (0..z.len()).map(|i| normal(z[i], mean[i], var[i])).sum()
            }
            Self::MvnFull { mean, chol } => {
                let d = mean.len();
                // forward substitution L u = z − μ
                let mut u = vec![0.0; d];
                let mut log_det = 0.0;
                for i in 0..d {
                    let mut s = z[i] - mean[i];
                    for j in 0..i {
                        s -= chol[i * d + j] * u[j];
                    }
                    u[i] = s / chol[i * d + i];
                    log_det += chol[i * d + i].ln();
                }
                -0.5 * d as f64 * LN_2PI - log_det - 0.5 * u.iter().map(|v| v * v).sum::<f64>()
            }
            Self::LogNormal { mu, var } => (0..z.len())
                .map(|i| normal(z[i].ln(), mu[i], var[i]) - z[i].ln())
                .sum(),
            Self::LogitNormal { mu, var } => (0..z.len())
                .map(|i| {
                    let p = z[i].clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                    let (lp, lq) = (p.ln(), (1.0 - p).ln());
                    normal(lp - lq, mu[i], var[i]) - lp - lq
                })
                .sum(),
            Self::Gamma { shape, rate } => (0..z.len())
                .map(|i| {
                    let (a, b) = (shape[i], rate[i]);
                    a * b.ln() - ln_gamma(a) + (a - 1.0) * z[i].ln() - b * z[i]
                })
                .sum(),
            Self::Beta { alpha, beta } => (0..z.len())
                .map(|i| {
                    let (a, b) = (alpha[i], beta[i]);
                    (a - 1.0) * z[i].ln() + (b - 1.0) * (1.0 - z[i]).ln() - ln_beta(a, b)
                })
                .sum(),
            Self::NegBinomial { r, p } => (0..z.len())
                .map(|i| {
                    let x = z[i];
                    ln_gamma(x + r[i]) - ln_gamma(r[i]) - ln_gamma(x + 1.0)
                        + x * p[i].ln()
                        + r[i] * (1.0 - p[i]).ln()
                })
                .sum(),
            Self::BernoulliLogit { logits } => (0..z.len())
                .map(|i| z[i] * logits[i] - softplus(logits[i]))
                .sum(),
        };
        Ok(lp)
    }

    /// Parameter tensors in the order expected by [`DistSpec::logpdf_on_tape`]:
    /// `(mean, var)`, `(mean, chol)`, `(mu, var)`, `(shape, rate)`, `(alpha, beta)`,
    /// `(r, p)` or `(logits)`. `chol` is a `d × d` matrix; all others are vectors.
    pub fn param_tensors(&self) -> Vec<Tensor> {
        let v = |x: &Vec<f64>| Tensor::vector(x.clone());
        match self {
            Self::MvnDiag { mean, var }
            | Self::LogNormal { mu: mean, var }
            | Self::LogitNormal { mu: mean, var } => vec![v(mean), v(var)],
            Self::MvnFull { mean, chol } => {
                let d = mean.len();
                vec![
                    v(mean),
                    Tensor::matrix(d, d, chol.clone()).expect("validated shape"),
                ]
            }
            Self::Gamma { shape, rate } => vec![v(shape), v(rate)],
            Self::Beta { alpha, beta } => vec![v(alpha), v(beta)],
            Self::NegBinomial { r, p } => vec![v(r), v(p)],
            Self::BernoulliLogit { logits } => vec![v(logits)],
        }
    }

    /// Records the parameters as tape leaves.
    pub fn record(&self, tape: &Tape) -> Vec<Var> {
        self.param_tensors()
            .into_iter()
            .map(|t| tape.var(t))
            .collect()
    }

    fn expect_params(&self, params: &[Var]) -> Result<()> {
        let n = if matches!(self, Self::BernoulliLogit { .. }) {
            1
        } else {
            2
        };
        if params.len() != n {
            return Err(Error::Shape {
                op: "logpdf_on_tape params",
                expected: vec![n],
                got: vec![params.len()],
            });
        }
        Ok(())
    }

    /// Taped log density at `z` (a vector node) with parameter nodes `params`.
    ///
    /// `self` fixes the family; numerical parameter values come from `params`,
    /// so callers may pass nodes computed upstream. Returns a scalar node,
    /// a `-inf` constant outside the support.
    pub fn logpdf_on_tape(&self, tape: &Tape, params: &[Var], z: Var) -> Result<Var> {
        self.expect_params(params)?;
        let zv = tape.value(z);
        self.check_z(zv.data())?;
        for &p in params {
            if tape.value(p).data().iter().any(|x| x.is_nan()) {
                return Err(invalid(format!("{}: NaN parameter", self.family())));
            }
        }
        if !self.in_support(zv.data()) {
            return Ok(tape.constant(Tensor::scalar(f64::NEG_INFINITY)));
        }
        let d = zv.len();
        let normal = |x: Var, m: Var, v: Var| {
            let r = tape.sub(x, m);
            let q = tape.div(tape.square(r), v);
            let s = tape.sum(tape.add(q, tape.ln(v)));
            tape.add_scalar(tape.scale(s, -0.5), -0.5 * d as f64 * LN_2PI)
        };
        let one_minus = |x: Var| tape.add_scalar(tape.neg(x), 1.0);
        let out = match self {
            Self::MvnDiag { .. } => normal(z, params[0], params[1]),
            Self::MvnFull { .. } => {
                let r = tape.reshape(tape.sub(z, params[0]), vec![d, 1]);
                let u = tape.matmul(tape.tril_inverse(params[1]), r);
                let log_det = tape.sum(tape.ln(tape.diag(params[1])));
                let quad = tape.scale(tape.sum(tape.square(u)), -0.5);
                tape.add_scalar(tape.sub(quad, log_det), -0.5 * d as f64 * LN_2PI)
            }
            Self::LogNormal { .. } => {
                let x = tape.ln(z);
                tape.sub(normal(x, params[0], params[1]), tape.sum(x))
            }
            Self::LogitNormal { .. } => {
                let needs_clamp = zv
                    .data()
                    .iter()
                    .any(|p| !(LOGIT_CLAMP..=1.0 - LOGIT_CLAMP).contains(p));
                let p = if needs_clamp {
                    tape.constant(zv.map(|p| p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)))
                } else {
                    z
                };
                let (lp, lq) = (tape.ln(p), tape.ln(one_minus(p)));
                let n = normal(tape.sub(lp, lq), params[0], params[1]);
                tape.sub(n, tape.sum(tape.add(lp, lq)))
            }
            Self::Gamma { .. } => {
                let (a, b) = (params[0], params[1]);
                let t1 = tape.mul(a, tape.ln(b));
                let t2 = tape.mul(tape.add_scalar(a, -1.0), tape.ln(z));
                let t3 = tape.add(tape.ln_gamma(a), tape.mul(b, z));
                tape.sum(tape.sub(tape.add(t1, t2), t3))
            }
            Self::Beta { .. } => {
                let (a, b) = (params[0], params[1]);
                let t1 = tape.mul(tape.add_scalar(a, -1.0), tape.ln(z));
                let t2 = tape.mul(tape.add_scalar(b, -1.0), tape.ln(one_minus(z)));
                let lb = tape.sub(
                    tape.add(tape.ln_gamma(a), tape.ln_gamma(b)),
                    tape.ln_gamma(tape.add(a, b)),
                );
                tape.sum(tape.sub(tape.add(t1, t2), lb))
            }
            Self::NegBinomial { .. } => {
                let (r, p) = (params[0], params[1]);
                let t1 = tape.sub(tape.ln_gamma(tape.add(z, r)), tape.ln_gamma(r));
                let t2 = tape.ln_gamma(tape.add_scalar(z, 1.0));
                let t3 = tape.add(tape.mul(z, tape.ln(p)), tape.mul(r, tape.ln(one_minus(p))));
                tape.sum(tape.add(tape.sub(t1, t2), t3))
            }
            Self::BernoulliLogit { .. } => {
                let eta = params[0];
                tape.sum(tape.sub(tape.mul(z, eta), tape.softplus(eta)))
            }
        };
        Ok(out)
    }

    /// Location–scale transform of standard-normal `noise`, followed by `exp`
    /// or `sigmoid` for the positive and unit-interval families.
    pub fn rsample(&self, noise: &Tensor) -> Result<Tensor> {
        self.validate()?;
        if !self.is_reparameterizable() {
            return Err(Error::NotReparameterizable {
                family: self.family(),
            });
        }
        let e = noise.data();
        if e.len() != self.dim() {
            return Err(Error::Shape {
                op: "rsample",
                expected: vec![self.dim()],
                got: noise.shape().to_vec(),
            });
        }
        let loc_scale = |m: &[f64], v: &[f64]| -> Vec<f64> {
            (0..e.len()).map(|i| m[i] + v[i].sqrt() * e[i]).collect()
        };
        let out = match self {
            Self::MvnDiag { mean, var } => loc_scale(mean, var),
            Self::LogNormal { mu, var } => loc_scale(mu, var).into_iter().map(f64::exp).collect(),
            Self::LogitNormal { mu, var } => loc_scale(mu, var).into_iter().map(sigmoid).collect(),
            Self::MvnFull { mean, chol } => {
                let d = mean.len();
                (0..d)
                    .map(|i| mean[i] + (0..=i).map(|j| chol[i * d + j] * e[j]).sum::<f64>())
                    .collect()
            }
            _ => unreachable!("checked above"),
        };
        Ok(Tensor::vector(out))
    }

    /// Taped [`DistSpec::rsample`]; differentiable with respect to `params`.
    pub fn rsample_on_tape(&self, tape: &Tape, params: &[Var], noise: Var) -> Result<Var> {
        if !self.is_reparameterizable() {
            return Err(Error::NotReparameterizable {
                family: self.family(),
            });
        }
        self.expect_params(params)?;
        let d = tape.value(noise).len();
        if d != self.dim() {
            return Err(Error::Shape {
                op: "rsample",
                expected: vec![self.dim()],
                got: vec![d],
            });
        }
        let diag_loc_scale = || {
            let sd = tape.exp(tape.scale(tape.ln(params[1]), 0.5));
            tape.add(params[0], tape.mul(sd, noise))
        };
        Ok(match self {
            Self::MvnDiag { .. } => diag_loc_scale(),
            Self::LogNormal { .. } => tape.exp(diag_loc_scale()),
            Self::LogitNormal { .. } => tape.sigmoid(diag_loc_scale()),
            Self::MvnFull { .. } => {
                let e = tape.reshape(noise, vec![d, 1]);
                let le = tape.reshape(tape.matmul(params[1], e), vec![d]);
                tape.add(params[0], le)
            }
            _ => unreachable!("checked above"),
        })
    }

    /// Exact draw from the distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Tensor> {
        self.validate()?;
        let d = self.dim();
        let out = match self {
            Self::MvnDiag { .. }
            | Self::MvnFull { .. }
            | Self::LogNormal { .. }
            | Self::LogitNormal { .. } => {
                let noise = Tensor::vector((0..d).map(|_| samplers::std_normal(rng)).collect());
                return self.rsample(&noise);
            }
            Self::Gamma { shape, rate } => (0..d)
                .map(|i| samplers::gamma(shape[i], rate[i], rng))
                .collect::<Result<Vec<_>>>()?,
            Self::Beta { alpha, beta } => (0..d)
                .map(|i| samplers::beta(alpha[i], beta[i], rng))
                .collect::<Result<Vec<_>>>()?,
            Self::NegBinomial { r, p } => (0..d)
                .map(|i| samplers::neg_binomial(r[i], p[i], rng).map(|x| x as f64))
                .collect::<Result<Vec<_>>>()?,
            Self::BernoulliLogit { logits } => logits
                .iter()
                .map(|&l| (rng.random::<f64>() < sigmoid(l)) as u8 as f64)
                .collect(),
        };
        Ok(Tensor::vector(out))
    }
}

/// `log N(x; m, v)` for scalars.
pub fn normal_logpdf(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * (2.0 * PI * v).ln() - (x - m).powi(2) / (2.0 * v)
}
