use serde::Serialize;

use super::{check_cols, Model};
use crate::error::{Error, Result};
use crate::ndcore::{sigmoid, softplus, Tape, Tensor, Var};

/// `y_i ~ Bernoulli(σ(x_iᵀβ))`, `β ~ N(0, α⁻¹ I)`. The design matrix already
/// carries the intercept column.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    x: Tensor,
    y: Vec<f64>,
    pub alpha: f64,
}

impl LogisticModel {
    pub fn new(x: Tensor, y: Vec<f64>, alpha: f64) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() {
            return Err(Error::Shape {
                op: "logistic data",
                expected: vec![y.len(), 0],
                got: x.shape().to_vec(),
            });
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dataset("labels must be 0 or 1".into()));
        }
        if !x.all_finite() {
            return Err(Error::Dataset("covariates must be finite".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "prior precision must be positive, got {alpha}"
            )));
        }
        Ok(Self { x, y, alpha })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    fn rows(&self, batch: &[usize]) -> Result<(Tensor, Vec<f64>)> {
        let d = self.x.cols();
        let mut data = Vec::with_capacity(batch.len() * d);
        let mut y = Vec::with_capacity(batch.len());
        for &i in batch {
            if i >= self.y.len() {
                return Err(Error::Dataset(format!("batch index {i} out of range")));
            }
            data.extend_from_slice(self.x.row(i));
            y.push(self.y[i]);
        }
        Ok((Tensor::matrix(batch.len(), d, data)?, y))
    }
}

fn check_beta(beta: &[f64], x: &Tensor) -> Result<()> {
    if beta.len() != x.cols() {
        return Err(Error::Shape {
            op: "logistic",
            expected: vec![x.cols()],
            got: vec![beta.len()],
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `Σ_{i ∈ rows} [y_i x_iᵀβ − log(1 + e^{x_iᵀβ})]`.
pub fn logistic_loglik_batch(beta: &[f64], x: &Tensor, y: &[f64], rows: &[usize]) -> Result<f64> {
    check_beta(beta, x)?;
    Ok(rows
        .iter()
        .map(|&i| {
            let eta = dot(x.row(i), beta);
            y[i] * eta - softplus(eta)
        })
        .sum())
}

/// Full-data log likelihood plus the `N(0, α⁻¹ I)` prior.
pub fn logistic_log_joint(beta: &[f64], x: &Tensor, y: &[f64], alpha: f64) -> Result<f64> {
    let rows: Vec<usize> = (0..y.len()).collect();
    let ll = logistic_loglik_batch(beta, x, y, &rows)?;
    let d = beta.len() as f64;
    let prior =
        0.5 * d * (alpha / (2.0 * std::f64::consts::PI)).ln() - 0.5 * alpha * dot(beta, beta);
    Ok(ll + prior)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Per test row, mean and sample standard deviation of `σ(x_iᵀβ_j)` over draws.
pub fn predictive_probs(draws: &[Vec<f64>], x_test: &Tensor) -> Result<PredictiveSummary> {
    if draws.len() < 2 {
        return Err(Error::InvalidParameter("need at least two draws".into()));
    }
    let n = draws.len() as f64;
    let mut mean = Vec::with_capacity(x_test.rows());
    let mut sd = Vec::with_capacity(x_test.rows());
    for i in 0..x_test.rows() {
        let probs = draws
            .iter()
            .map(|b| {
                check_beta(b, x_test)?;
                Ok(sigmoid(dot(x_test.row(i), b)))
            })
            .collect::<Result<Vec<f64>>>()?;
        // shifted about the first draw so identical draws give sd exactly 0
        let m = probs[0] + probs.iter().map(|p| p - probs[0]).sum::<f64>() / n;
        let v = probs.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean.push(m);
        sd.push(v.sqrt());
    }
    Ok(PredictiveSummary { mean, sd })
}

impl Model for LogisticModel {
    fn dim(&self) -> usize {
        self.x.cols()
    }

    fn data_len(&self) -> usize {
        self.y.len()
    }

    fn log_likelihood_on_tape(&self, tape: &Tape, z: Var, batch: &[usize]) -> Result<Var> {
        let j = check_cols(tape, z, self.dim(), "logistic likelihood")?;
        let (xb, yb) = self.rows(batch)?;
        let d = self.dim();
        // Σ_i y_i x_iᵀβ = βᵀ (Xᵀ y)
        let mut xty = vec![0.0; d];
        for (i, &yi) in yb.iter().enumerate() {
            for (acc, v) in xty.iter_mut().zip(xb.row(i)) {
                *acc += yi * v;
            }
        }
        let w = tape.constant(Tensor::matrix(d, 1, xty)?);
        let lin = tape.reshape(tape.matmul(z, w), vec![j]);
        let logits = tape.matmul_t(z, false, tape.constant(xb), true);
        Ok(tape.sub(lin, tape.sum_rows(tape.softplus(logits))))
    }

    fn log_prior_on_tape(&self, tape: &Tape, z: Var) -> Result<Var> {
        check_cols(tape, z, self.dim(), "logistic prior")?;
        let d = self.dim() as f64;
        let c = 0.5 * d * (self.alpha / (2.0 * std::f64::consts::PI)).ln();
        Ok(tape.add_scalar(
            tape.scale(tape.sum_rows(tape.square(z)), -0.5 * self.alpha),
            c,
        ))
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        logistic_log_joint(z, &self.x, &self.y, self.alpha).unwrap_or(f64::NAN)
    }
}
