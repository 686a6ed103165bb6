//! Lower and upper surrogate bounds on a Gaussian mixture of Gaussians,
//! compared with their closed forms as the number of mixing draws grows.
//!
//! cargo run --release --example gaussian_sandwich

use sivi::diagnostics::{gaussian_oracle, GaussianSandwichCase};
use sivi::distributions::RngStream;
use sivi::models::ToyTarget;
use sivi::sivi::{lower_bound_k_pooled, upper_bound_k_pooled};

fn main() -> sivi::Result<()> {
    let case = GaussianSandwichCase::new(0.5, 0.5, 0.0)?;
    let exact = gaussian_oracle(&case)?;
    let post = case.posterior()?;
    let target = ToyTarget::StandardNormal;

    println!(
        "exact: lower(K=0) {:.4}  ELBO {:.4}  upper(K=1) {:.4}",
        exact.lower, exact.elbo, exact.upper
    );
    println!("{:>5} {:>10} {:>10}", "K", "lower", "upper");
    for k in [0, 1, 2, 5, 10, 50, 100] {
        let lo = lower_bound_k_pooled(&post, &target, k, 2000, &mut RngStream::new(1))?;
        let hi = if k == 0 {
            "-".to_string()
        } else {
            let u = upper_bound_k_pooled(&post, &target, k, 2000, &mut RngStream::new(1))?;
            format!("{:.4}", u.value)
        };
        println!("{k:>5} {:>10.4} {hi:>10}", lo.value);
    }
    Ok(())
}
