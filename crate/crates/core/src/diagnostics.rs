//! Sample comparison tools and the closed-form Gaussian oracle for the bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Mlp, Tensor};
use crate::sivi::{
    ExplicitConditional, GaussianConditional, ImplicitMixer, Link, NoiseKind, SemiImplicitPosterior,
};

/// Number of terms kept in the Kolmogorov series.
pub const KS_SERIES_TERMS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
///
/// `D` is evaluated over the union of both samples, so ties are handled by
/// stepping past every copy of a value before comparing the ECDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("KS samples contain NaN".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    // integer numerators keep D exactly symmetric
    let mut best: u128 = 0;
    while i < n1 && j < n2 {
        let v = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < n1 && xs[i] == v {
            i += 1;
        }
        while j < n2 && ys[j] == v {
            j += 1;
        }
        let diff = (i as i128 * n2 as i128 - j as i128 * n1 as i128).unsigned_abs();
        best = best.max(diff);
    }
    let statistic = best as f64 / (n1 as f64 * n2 as f64);
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * statistic;
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_q(lambda),
        n1,
        n2,
    })
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`, the Kolmogorov survival function.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi theta form converges fast where the alternating series does not
        let y = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=KS_SERIES_TERMS)
            .map(|k| ((2 * k - 1) as f64).powi(2) * y)
            .map(f64::exp)
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let s: f64 = (1..=KS_SERIES_TERMS)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// `q(z|ψ) = N(ψ, σ²)`, `q(ψ) = N(m, τ²)`, target `N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSandwichCase {
    pub sigma2: f64,
    pub tau2: f64,
    pub m: f64,
}

impl GaussianSandwichCase {
    pub fn new(sigma2: f64, tau2: f64, m: f64) -> Result<Self> {
        let case = Self { sigma2, tau2, m };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.tau2 >= 0.0 && self.m.is_finite()) {
            return Err(Error::InvalidParameter(
                "need σ² > 0, τ² ≥ 0 and finite m".into(),
            ));
        }
        Ok(())
    }

    /// The case as a trainable posterior: a one-layer linear mixer
    /// `ψ = τ ε + m` and a fixed-variance Gaussian conditional.
    pub fn posterior(&self) -> Result<SemiImplicitPosterior> {
        self.validate()?;
        let mlp = Mlp::from_flat(&[1, 1], &[self.tau2.sqrt(), self.m])?;
        let cond = GaussianConditional::fixed(vec![Link::Identity], self.sigma2)?;
        SemiImplicitPosterior::new(
            ImplicitMixer::new(mlp, NoiseKind::Gaussian),
            ExplicitConditional::Gaussian(cond),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichValues {
    pub elbo: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Closed-form ELBO of `h = N(m, σ² + τ²)` and the lower and upper bounds.
pub fn gaussian_oracle(case: &GaussianSandwichCase) -> Result<SandwichValues> {
    case.validate()?;
    let GaussianSandwichCase { sigma2, tau2, m } = *case;
    let s2 = sigma2 + tau2;
    let elbo = -0.5 * (s2 + m * m - 1.0 - s2.ln());
    let lower = -0.5 * (sigma2 + tau2 + m * m - 1.0 - sigma2.ln());
    // E_h log p − E_ψ E_h log q(z|ψ) with z ⟂ ψ, E(z − ψ)² = s² + τ²
    let upper = -0.5 * (s2 + m * m) + 0.5 * sigma2.ln() + (s2 + tau2) / (2.0 * sigma2);
    Ok(SandwichValues { elbo, lower, upper })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Pearson correlations; entries involving a zero-variance column are 0.
    pub corr: Vec<Vec<f64>>,
    pub zero_variance: Vec<bool>,
}

/// Column means, sample sds and the correlation matrix of a `[n, d]` matrix.
pub fn summary_stats(draws: &Tensor) -> Result<SummaryStats> {
    if draws.shape().len() != 2 || draws.rows() < 2 {
        return Err(Error::InvalidParameter(
            "summary needs a matrix with at least 2 rows".into(),
        ));
    }
    let (n, d) = (draws.rows(), draws.cols());
    let means: Vec<f64> = (0..d)
        .map(|c| (0..n).map(|r| draws.get2(r, c)).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in 0..n {
        let row = draws.row(r);
        for a in 0..d {
            let da = row[a] - means[a];
            for b in a..d {
                cov[a][b] += da * (row[b] - means[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= (n - 1) as f64;
            cov[b][a] = cov[a][b];
        }
    }
    let sds: Vec<f64> = (0..d).map(|a| cov[a][a].sqrt()).collect();
    let zero_variance: Vec<bool> = (0..d).map(|a| cov[a][a] == 0.0).collect();
    let corr = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    if zero_variance[a] || zero_variance[b] {
                        0.0
                    } else {
                        (cov[a][b] / (cov[a][a] * cov[b][b]).sqrt()).clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    Ok(SummaryStats {
        means,
        sds,
        corr,
        zero_variance,
    })
}

/// Equal-width histogram with the Freedman–Diaconis bin width `2 IQR n^{-1/3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Caps the bin count when the IQR is tiny relative to the range.
pub const MAX_BINS: usize = 1000;

pub fn fd_histogram(xs: &[f64]) -> Result<Histogram> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    let bins = if hi > lo && width > 0.0 {
        (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        1
    };
    let step = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + step * i as f64).collect();
    let mut counts = vec![0; bins];
    for &x in &s {
        let b = (((x - lo) / step) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < s.len() {
        s[i] + frac * (s[i + 1] - s[i])
    } else {
        s[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ecdf() {
        let r = ks_two_sample(&[0.0, 1.0], &[0.5, 1.5]).unwrap();
        assert_eq!(r.statistic, 0.5);
    }

    #[test]
    fn identical_samples() {
        let a = [3.0, 1.0, 2.0, 2.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn series_forms_agree_near_one() {
        let lo = kolmogorov_q(1.0 - 1e-12);
        let hi = kolmogorov_q(1.0);
        assert!((lo - hi).abs() < 1e-10, "{lo} vs {hi}");
    }

    #[test]
    fn oracle_values() {
        let v = gaussian_oracle(&GaussianSandwichCase::new(0.5, 0.5, 0.0).unwrap()).unwrap();
        assert!(v.elbo.abs() < 1e-15);
        assert!((v.lower + 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((v.upper - 1.0 + 0.5 * 2f64.ln()).abs() < 1e-15);
        let w = gaussian_oracle(&GaussianSandwichCase::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        assert!((w.elbo + 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_everything() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sqrt()).collect();
        let h = fd_histogram(&xs).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
    }
}
