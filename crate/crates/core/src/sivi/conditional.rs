use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{samplers, DistSpec};
use crate::error::{Error, Result};
use crate::ndcore::{sigmoid, ParamVector, Tape, Tensor, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-coordinate map from the Gaussian latent `x` to `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    /// Log-normal coordinate.
    Exp,
    /// Logit-normal coordinate.
    Logistic,
}

impl Link {
    fn apply(self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Exp => x.exp(),
            Link::Logistic => sigmoid(x),
        }
    }
}

/// Covariance of the Gaussian conditional and whether it is learned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scale {
    /// Fixed diagonal variances; `ξ` is empty.
    Fixed { var: Vec<f64> },
    /// Learned diagonal; `ξ` holds log-variances.
    Diag,
    /// Learned full covariance `L Lᵀ`; `ξ` holds the row-major packed lower
    /// triangle of `L` with its diagonal on the log scale.
    Full,
}

/// `z = link(x)`, `x ~ N(ψ, Σ)`: reparameterizable as `x = ψ + L ε̃`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianConditional {
    pub links: Vec<Link>,
    pub scale: Scale,
    pub xi: ParamVector,
}

impl GaussianConditional {
    /// Fixed isotropic variance `var` on every coordinate.
    pub fn fixed(links: Vec<Link>, var: f64) -> Result<Self> {
        let d = links.len();
        Self::new(links, Scale::Fixed { var: vec![var; d] }, None)
    }

    /// Learned diagonal covariance, initialized at `init_var`.
    pub fn diag(links: Vec<Link>, init_var: f64) -> Result<Self> {
        let d = links.len();
        Self::new(links, Scale::Diag, Some(vec![init_var.ln(); d]))
    }

    /// Learned full covariance, initialized at `init_var · I`.
    pub fn full(links: Vec<Link>, init_var: f64) -> Result<Self> {
        let d = links.len();
        let mut packed = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                packed.push(if i == j { 0.5 * init_var.ln() } else { 0.0 });
            }
        }
        Self::new(links, Scale::Full, Some(packed))
    }

    fn new(links: Vec<Link>, scale: Scale, xi: Option<Vec<f64>>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::InvalidParameter(
                "conditional needs at least one coordinate".into(),
            ));
        }
        let mut pv = ParamVector::new();
        match (&scale, xi) {
            (Scale::Fixed { var }, _) => {
                if var.len() != links.len() || var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::InvalidParameter(
                        "fixed variances must be positive".into(),
                    ));
                }
            }
            (Scale::Diag, Some(v)) => {
                pv.push_slice("log_var", &v);
            }
            (Scale::Full, Some(v)) => {
                pv.push_slice("chol", &v);
            }
            _ => unreachable!("learned scales carry initial values"),
        }
        if !pv.values().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "initial variance must be positive".into(),
            ));
        }
        Ok(Self {
            links,
            scale,
            xi: pv,
        })
    }

    pub fn dim(&self) -> usize {
        self.links.len()
    }

    /// Lower Cholesky factor `L` (row-major) for the current `ξ`.
    pub fn cholesky(&self) -> Vec<f64> {
        let d = self.dim();
        let mut l = vec![0.0; d * d];
        match &self.scale {
            Scale::Fixed { var } => (0..d).for_each(|i| l[i * d + i] = var[i].sqrt()),
            Scale::Diag => {
                let lv = self.xi.values();
                (0..d).for_each(|i| l[i * d + i] = (0.5 * lv[i]).exp());
            }
            Scale::Full => {
                let p = self.xi.values();
                let mut idx = 0;
                for i in 0..d {
                    for j in 0..=i {
                        l[i * d + j] = if i == j { p[idx].exp() } else { p[idx] };
                        idx += 1;
                    }
                }
            }
        }
        l
    }

    /// Covariance `L Lᵀ` of the Gaussian layer.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let l = self.cholesky();
        let mut s = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                s[i * d + j] = (0..d).map(|k| l[i * d + k] * l[j * d + k]).sum();
            }
        }
        s
    }

    /// `(L, L⁻¹, log det L)` on the tape. `xi` is `None` when the scale is fixed.
    pub(crate) fn scale_on_tape(&self, tape: &Tape, xi: Option<Var>) -> (Var, Var, Var) {
        let d = self.dim();
        match (&self.scale, xi) {
            (Scale::Diag, Some(xi)) => {
                let log_sd = tape.scale(xi, 0.5);
                let l = tape.diag_matrix(tape.exp(log_sd));
                let linv = tape.diag_matrix(tape.exp(tape.neg(log_sd)));
                (l, linv, tape.sum(log_sd))
            }
            (Scale::Full, Some(xi)) => {
                let raw = tape.pack_tril(xi, d);
                let l = tape.exp_diag(raw);
                let linv = tape.tril_inverse(l);
                (l, linv, tape.sum(tape.diag(raw)))
            }
            _ => {
                let l = self.cholesky();
                let lt = Tensor::matrix(d, d, l.clone()).expect("square");
                let linv = crate::ndcore::tape::tril_inv(&lt);
                let logdet = (0..d).map(|i| l[i * d + i].ln()).sum();
                (
                    tape.constant(lt),
                    tape.constant(linv),
                    tape.constant(Tensor::scalar(logdet)),
                )
            }
        }
    }

    /// `z = link(x)` on the tape, column by column.
    pub(crate) fn link_on_tape(&self, tape: &Tape, x: Var) -> Var {
        if self.links.iter().all(|&l| l == Link::Identity) {
            return x;
        }
        let mut out: Option<Var> = None;
        for (c, &link) in self.links.iter().enumerate() {
            let col = tape.slice_cols(x, c, c + 1);
            let z = match link {
                Link::Identity => col,
                Link::Exp => tape.exp(col),
                Link::Logistic => tape.sigmoid(col),
            };
            out = Some(match out {
                None => z,
                Some(prev) => tape.concat_cols(prev, z),
            });
        }
        out.expect("at least one coordinate")
    }

    /// `Σ_c log |dz_c / dx_c|` per row, as a `[rows]` node.
    pub(crate) fn log_jacobian_on_tape(&self, tape: &Tape, x: Var) -> Var {
        let rows = tape.shape(x)[0];
        let mut acc = tape.constant(Tensor::zeros(&[rows]));
        for (c, &link) in self.links.iter().enumerate() {
            let col = tape.reshape(tape.slice_cols(x, c, c + 1), vec![rows]);
            match link {
                Link::Identity => {}
                Link::Exp => acc = tape.add(acc, col),
                Link::Logistic => {
                    let s = tape.add(tape.softplus(col), tape.softplus(tape.neg(col)));
                    acc = tape.sub(acc, s);
                }
            }
        }
        acc
    }

    /// Inverse link: `x = link⁻¹(z)`.
    pub fn unlink(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.links)
            .map(|(&v, l)| match l {
                Link::Identity => v,
                Link::Exp => v.ln(),
                Link::Logistic => {
                    let p = v.clamp(
                        crate::distributions::LOGIT_CLAMP,
                        1.0 - crate::distributions::LOGIT_CLAMP,
                    );
                    p.ln() - (1.0 - p).ln()
                }
            })
            .collect()
    }

    /// `z` for one `ψ` row and standard-normal `eps`.
    pub fn transform(&self, psi: &[f64], eps: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let l = self.cholesky();
        (0..d)
            .map(|i| {
                let x = psi[i] + (0..=i).map(|j| l[i * d + j] * eps[j]).sum::<f64>();
                self.links[i].apply(x)
            })
            .collect()
    }

    /// `log q(z | ψ)` for single vectors (untaped reference path).
    pub fn log_density(&self, z: &[f64], psi: &[f64]) -> f64 {
        let d = self.dim();
        let x = self.unlink(z);
        let l = self.cholesky();
        let mut u = vec![0.0; d];
        let mut log_det = 0.0;
        for i in 0..d {
            let mut s = x[i] - psi[i];
            for j in 0..i {
                s -= l[i * d + j] * u[j];
            }
            u[i] = s / l[i * d + i];
            log_det += l[i * d + i].ln();
        }
        let jac: f64 = x
            .iter()
            .zip(&self.links)
            .map(|(&xi, l)| match l {
                Link::Identity => 0.0,
                Link::Exp => xi,
                Link::Logistic => -(crate::ndcore::softplus(xi) + crate::ndcore::softplus(-xi)),
            })
            .sum();
        -0.5 * u.iter().map(|v| v * v).sum::<f64>() - log_det - d as f64 * HALF_LN_2PI - jac
    }

    /// The conditional at a fixed `ψ` as a [`DistSpec`], when one family covers it.
    pub fn dist_spec(&self, psi: &[f64]) -> Option<DistSpec> {
        let d = self.dim();
        let first = self.links[0];
        if self.links.iter().any(|&l| l != first) {
            return None;
        }
        let l = self.cholesky();
        let var: Vec<f64> = (0..d)
            .map(|i| (0..=i).map(|k| l[i * d + k].powi(2)).sum())
            .collect();
        let diagonal = !matches!(self.scale, Scale::Full);
        Some(match (first, diagonal) {
            (Link::Identity, true) => DistSpec::MvnDiag {
                mean: psi.to_vec(),
                var,
            },
            (Link::Identity, false) => DistSpec::MvnFull {
                mean: psi.to_vec(),
                chol: l,
            },
            (Link::Exp, true) => DistSpec::LogNormal {
                mu: psi.to_vec(),
                var,
            },
            (Link::Logistic, true) => DistSpec::LogitNormal {
                mu: psi.to_vec(),
                var,
            },
            _ => return None,
        })
    }
}

/// One factor of a product of non-reparameterizable conditionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// `Gamma(shape = e^{ψ₀}, rate = e^{ψ₁})`.
    Gamma,
    /// `Beta(e^{ψ₀}, e^{ψ₁})`.
    Beta,
}

/// `q(z | ψ) = Π_f q_f(z_f | ψ_{2f}, ψ_{2f+1})` with exponential links; `ξ` is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateConditional {
    pub factors: Vec<Factor>,
}

impl ConjugateConditional {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter(
                "conditional needs at least one factor".into(),
            ));
        }
        Ok(Self { factors })
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn psi_dim(&self) -> usize {
        2 * self.factors.len()
    }

    /// Natural-scale parameters `(e^{ψ₀}, e^{ψ₁})` of factor `f`.
    pub fn params(&self, psi: &[f64], f: usize) -> (f64, f64) {
        (psi[2 * f].exp(), psi[2 * f + 1].exp())
    }

    /// Exact draw of `z` given one `ψ` row.
    pub fn sample<R: Rng + ?Sized>(&self, psi: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        (0..self.dim())
            .map(|f| {
                let (a, b) = self.params(psi, f);
                let v = match self.factors[f] {
                    Factor::Gamma => samplers::gamma(a, b, rng)?,
                    Factor::Beta => samplers::beta(a, b, rng)?,
                };
                Ok(v)
            })
            .collect()
    }

    pub fn dist_specs(&self, psi: &[f64]) -> Vec<DistSpec> {
        (0..self.dim())
            .map(|f| {
                let (a, b) = self.params(psi, f);
                match self.factors[f] {
                    Factor::Gamma => DistSpec::Gamma {
                        shape: vec![a],
                        rate: vec![b],
                    },
                    Factor::Beta => DistSpec::Beta {
                        alpha: vec![a],
                        beta: vec![b],
                    },
                }
            })
            .collect()
    }

    /// `log q(z | ψ)` for single vectors (untaped reference path).
    pub fn log_density(&self, z: &[f64], psi: &[f64]) -> f64 {
        self.dist_specs(psi)
            .iter()
            .zip(z)
            .map(|(s, &v)| s.logpdf(&Tensor::vector(vec![v])).unwrap_or(f64::NAN))
            .sum()
    }

    /// Sufficient statistics `T(z)` as a `[rows, 2F]` tensor:
    /// `(ln z, z)` for gamma factors and `(ln z, ln(1 − z))` for beta factors.
    pub(crate) fn sufficient_stats(&self, z: &Tensor) -> Tensor {
        let (rows, f) = (z.rows(), self.dim());
        let mut out = Vec::with_capacity(rows * 2 * f);
        for j in 0..rows {
            for (k, fac) in self.factors.iter().enumerate() {
                let v = z.get2(j, k);
                match fac {
                    Factor::Gamma => out.extend([v.ln(), v]),
                    Factor::Beta => out.extend([v.ln(), (1.0 - v).ln()]),
                }
            }
        }
        Tensor::matrix(rows, 2 * f, out).expect("stats shape")
    }

    /// Natural parameters `η(ψ)` `[C, 2F]` and log normalizers `A(ψ)` `[C]`,
    /// so that `log q(z | ψ_c) = T(z)·η_c − A_c`.
    pub(crate) fn natural_on_tape(&self, tape: &Tape, psi: Var) -> (Var, Var) {
        let rows = tape.shape(psi)[0];
        let e = tape.exp(psi);
        let mut sign = Vec::with_capacity(2 * self.dim());
        let mut shift = Vec::with_capacity(2 * self.dim());
        let mut a_norm: Option<Var> = None;
        for (f, fac) in self.factors.iter().enumerate() {
            let col = |c: usize| tape.reshape(tape.slice_cols(psi, c, c + 1), vec![rows]);
            let ecol = |c: usize| tape.reshape(tape.slice_cols(e, c, c + 1), vec![rows]);
            let (p0, p1) = (ecol(2 * f), ecol(2 * f + 1));
            let a = match fac {
                Factor::Gamma => {
                    sign.extend([1.0, -1.0]);
                    shift.extend([-1.0, 0.0]);
                    // lnΓ(a) − a ln b
                    tape.sub(tape.ln_gamma(p0), tape.mul(p0, col(2 * f + 1)))
                }
                Factor::Beta => {
                    sign.extend([1.0, 1.0]);
                    shift.extend([-1.0, -1.0]);
                    let lg = tape.add(tape.ln_gamma(p0), tape.ln_gamma(p1));
                    tape.sub(lg, tape.ln_gamma(tape.add(p0, p1)))
                }
            };
            a_norm = Some(match a_norm {
                None => a,
                Some(prev) => tape.add(prev, a),
            });
        }
        let sign_t = Tensor::matrix(
            rows,
            sign.len(),
            (0..rows).flat_map(|_| sign.iter().copied()).collect(),
        )
        .expect("sign shape");
        let eta = tape.add_row(
            tape.mul_const(e, sign_t),
            tape.constant(Tensor::vector(shift)),
        );
        (eta, a_norm.expect("at least one factor"))
    }
}

/// The explicit layer `q_ξ(z | ψ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ExplicitConditional {
    Gaussian(GaussianConditional),
    Conjugate(ConjugateConditional),
}

impl ExplicitConditional {
    pub fn is_reparameterizable(&self) -> bool {
        matches!(self, Self::Gaussian(_))
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Gaussian(_) => "gaussian",
            Self::Conjugate(_) => "conjugate",
        }
    }

    /// Dimension of `z`.
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Conjugate(c) => c.dim(),
        }
    }

    /// Dimension of `ψ` expected from the mixer.
    pub fn psi_dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Conjugate(c) => c.psi_dim(),
        }
    }

    pub fn xi(&self) -> &[f64] {
        match self {
            Self::Gaussian(g) => g.xi.values(),
            Self::Conjugate(_) => &[],
        }
    }

    pub fn xi_mut(&mut self) -> &mut [f64] {
        match self {
            Self::Gaussian(g) => g.xi.values_mut(),
            Self::Conjugate(_) => &mut [],
        }
    }

    /// `log q(z | ψ)` for single vectors.
    pub fn log_density(&self, z: &[f64], psi: &[f64]) -> f64 {
        match self {
            Self::Gaussian(g) => g.log_density(z, psi),
            Self::Conjugate(c) => c.log_density(z, psi),
        }
    }
}
