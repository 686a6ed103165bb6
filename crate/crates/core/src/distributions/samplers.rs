//! Exact (non-reparameterized) samplers.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform on the open interval (0, 1).
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `ln X` for `X ~ Gamma(shape, 1)`.
///
/// Marsaglia–Tsang squeeze for `shape ≥ 1`; for `shape < 1` a draw at
/// `shape + 1` is boosted by `U^(1/shape)`, kept in log space so tiny shapes
/// do not underflow.
pub fn ln_gamma_unit<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let base = ln_gamma_unit(shape + 1.0, rng);
        return base + open_uniform(rng).ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = std_normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = open_uniform(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// `Gamma(shape, rate)` draw.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    Ok(ln_gamma_unit(shape, rng).exp() / rate)
}

/// `Beta(a, b)` draw as `G_a / (G_a + G_b)`, evaluated on log draws.
pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    check_positive("beta alpha", a)?;
    check_positive("beta beta", b)?;
    let la = ln_gamma_unit(a, rng);
    let lb = ln_gamma_unit(b, rng);
    Ok(crate::ndcore::sigmoid(la - lb))
}

pub fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if lambda == 0.0 {
        return Ok(0);
    }
    check_positive("poisson rate", lambda)?;
    let d = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(d.sample(rng) as u64)
}

/// Negative binomial with pmf ∝ p^x (1 − p)^r, drawn as a gamma–Poisson mixture.
pub fn neg_binomial<R: Rng + ?Sized>(r: f64, p: f64, rng: &mut R) -> Result<u64> {
    check_positive("nb r", r)?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "nb p must lie in [0, 1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(0);
    }
    let lambda = gamma(r, (1.0 - p) / p, rng)?;
    poisson(lambda, rng)
}

/// Chinese restaurant table count: `Σ_{t=1}^{n} Bernoulli(r / (r + t − 1))`.
pub fn crt<R: Rng + ?Sized>(n: u64, r: f64, rng: &mut R) -> u64 {
    let mut l = 0;
    for t in 1..=n {
        let prob = r / (r + (t - 1) as f64);
        if rng.random::<f64>() < prob {
            l += 1;
        }
    }
    l
}

/// Mean and variance of `PG(1, c)`.
pub fn polya_gamma_moments(c: f64) -> (f64, f64) {
    let c = c.abs();
    if c < 1e-4 {
        // Taylor expansions around c = 0
        let c2 = c * c;
        return (0.25 - c2 / 48.0, 1.0 / 24.0 - c2 / 60.0);
    }
    let t = (c / 2.0).tanh();
    let sech2 = 1.0 - t * t;
    let mean = t / (2.0 * c);
    let var = (2.0 * t - c * sech2) / (4.0 * c * c * c);
    (mean, var)
}

/// Truncated series draw from `PG(1, c)`.
///
/// Uses `M − 1` exact gamma terms of
/// `(1 / 2π²) Σ_k g_k / ((k − 1/2)² + c² / 4π²)` and one final gamma whose
/// shape and scale match the mean and variance of the omitted tail.
pub fn polya_gamma<R: Rng + ?Sized>(c: f64, truncation: usize, rng: &mut R) -> Result<f64> {
    if truncation == 0 {
        return Err(Error::InvalidParameter("truncation M must be >= 1".into()));
    }
    if !c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "PG tilt must be finite, got {c}"
        )));
    }
    let two_pi2 = 2.0 * std::f64::consts::PI.powi(2);
    let c2 = c * c / (4.0 * std::f64::consts::PI.powi(2));
    let (mut tail_mean, mut tail_var) = polya_gamma_moments(c);
    let mut draw = 0.0;
    for k in 1..truncation {
        let d = ((k as f64 - 0.5).powi(2) + c2) * two_pi2;
        draw += ln_gamma_unit(1.0, rng).exp() / d;
        tail_mean -= 1.0 / d;
        tail_var -= 1.0 / (d * d);
    }
    if tail_mean > 0.0 && tail_var > 0.0 {
        let shape = tail_mean * tail_mean / tail_var;
        let scale = tail_var / tail_mean;
        draw += ln_gamma_unit(shape, rng).exp() * scale;
    }
    Ok(draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RngStream::new(1);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| gamma(2.0, 1.0, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 2.0).abs() < 3.0 * se, "mean {m}");
        // variance of a Gamma(2,1) is 2; SE of the sample variance ≈ sqrt((μ4 − σ⁴)/n), μ4 = 3σ⁴(1 + 2/k)·... use squared deviations
        let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
        let (v, vse) = mean_se(&sq);
        assert!((v - 2.0).abs() < 3.0 * vse, "var {v}");
    }

    #[test]
    fn small_shape_gamma_mean() {
        let mut rng = RngStream::new(2);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| gamma(0.3, 2.0, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.15).abs() < 3.0 * se, "mean {m}");
    }

    #[test]
    fn beta_uniform_mean() {
        let mut rng = RngStream::new(3);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| beta(1.0, 1.0, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn tiny_shape_beta_stays_in_unit_interval() {
        let mut rng = RngStream::new(4);
        for _ in 0..10_000 {
            let x = beta(0.01, 0.01, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn geometric_zero_probability() {
        let mut rng = RngStream::new(5);
        let zeros: Vec<f64> = (0..100_000)
            .map(|_| (neg_binomial(1.0, 0.5, &mut rng).unwrap() == 0) as u8 as f64)
            .collect();
        let (m, se) = mean_se(&zeros);
        assert!((m - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut rng = RngStream::new(0);
        assert!(gamma(0.0, 1.0, &mut rng).is_err());
        assert!(gamma(1.0, f64::NAN, &mut rng).is_err());
        assert!(beta(-1.0, 1.0, &mut rng).is_err());
        assert!(neg_binomial(1.0, 1.0, &mut rng).is_err());
        assert!(polya_gamma(1.0, 0, &mut rng).is_err());
    }

    #[test]
    fn crt_edge_cases() {
        let mut rng = RngStream::new(6);
        assert_eq!(crt(0, 2.0, &mut rng), 0);
        for _ in 0..100 {
            assert_eq!(crt(1, 0.3, &mut rng), 1);
        }
    }

    #[test]
    fn crt_pmf_matches_path_enumeration() {
        // n = 3, r = 1: Bernoulli probabilities 1, 1/2, 1/3
        let probs = [1.0, 0.5, 1.0 / 3.0];
        let mut pmf = [0.0; 4];
        for mask in 0..8u32 {
            let mut p = 1.0;
            let mut l = 0;
            for (t, &q) in probs.iter().enumerate() {
                if mask & (1 << t) != 0 {
                    p *= q;
                    l += 1;
                } else {
                    p *= 1.0 - q;
                }
            }
            pmf[l] += p;
        }
        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut rng = RngStream::new(7);
        for _ in 0..n {
            counts[crt(3, 1.0, &mut rng) as usize] += 1;
        }
        for l in 0..4 {
            let phat = counts[l] as f64 / n as f64;
            let se = (pmf[l] * (1.0 - pmf[l]) / n as f64).sqrt();
            assert!(
                (phat - pmf[l]).abs() <= 3.0 * se + 1e-12,
                "l={l} {phat} vs {}",
                pmf[l]
            );
        }
    }

    #[test]
    fn pg_moment_formulas_are_continuous_at_zero() {
        let (m0, v0) = polya_gamma_moments(0.0);
        let (m1, v1) = polya_gamma_moments(1.0001e-4);
        assert!((m0 - 0.25).abs() < 1e-15 && (v0 - 1.0 / 24.0).abs() < 1e-15);
        assert!((m0 - m1).abs() < 1e-8 && (v0 - v1).abs() < 1e-6);
        let (m, _) = polya_gamma_moments(2.0);
        assert!((m - 1f64.tanh() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn pg_means() {
        for (i, &c) in [0.0, 2.0, 5.0].iter().enumerate() {
            let mut rng = RngStream::new(100 + i as u64);
            let xs: Vec<f64> = (0..100_000)
                .map(|_| polya_gamma(c, 5, &mut rng).unwrap())
                .collect();
            let (m, se) = mean_se(&xs);
            let truth = polya_gamma_moments(c).0;
            assert!((m - truth).abs() < 3.0 * se, "c={c}: {m} vs {truth}");
        }
        assert!((polya_gamma_moments(5.0).0 - 0.098661).abs() < 1e-6);
        assert!((polya_gamma_moments(2.0).0 - 0.190399).abs() < 1e-6);
    }
}
