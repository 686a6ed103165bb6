use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `at`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, at: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {step}"
        )));
    }
    let mut x = at.to_vec();
    let mut out = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        for v in [fp, fm] {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i, value: v });
            }
        }
        out.push((fp - fm) / (2.0 * step));
    }
    Ok(out)
}
