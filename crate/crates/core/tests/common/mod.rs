//! Oracles shared by several integration test files.
#![allow(dead_code)]

use rand::Rng;
use sivi::conjugate::score_grad_phi;
use sivi::distributions::samplers::{beta, gamma};
use sivi::distributions::RngStream;
use sivi::models::{Model, PoissonLogModel};
use sivi::ndcore::{log_mean_exp, Tensor};
use sivi::sivi::{ExplicitConditional, SemiImplicitPosterior};

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn column(t: &Tensor, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.get2(i, c)).collect()
}

#[derive(Debug)]
pub struct CoordinateCheck {
    pub coord: usize,
    pub estimate: f64,
    pub estimate_se: f64,
    pub oracle: f64,
    pub oracle_se: f64,
}

impl CoordinateCheck {
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.oracle).abs() / self.estimate_se.hypot(self.oracle_se)
    }
}

/// Defensive mixture proposal, fixed in `φ`: half a broad gamma × beta whose
/// parameters sit below every `q(z|ψ)` in use (so the weights `q / π` stay
/// bounded), half an equal mixture of conditionals at base `ψ` draws.
struct Proposal {
    shape: f64,
    rate: f64,
    a: f64,
    b: f64,
    centres: Vec<Vec<f64>>,
}

const CENTRES: usize = 64;

impl Proposal {
    fn covering(post: &SemiImplicitPosterior, rng: &mut RngStream) -> Self {
        let noise = post.mixer.draw_noise(rng, 20_000);
        let psi = post.mixer.mlp.forward(&noise).unwrap();
        let min = |c: usize| {
            (0..psi.rows())
                .map(|i| psi.get2(i, c).exp())
                .fold(f64::INFINITY, f64::min)
        };
        let centres = (0..CENTRES).map(|i| psi.row(i).to_vec()).collect();
        Self {
            shape: 0.5 * min(0),
            rate: 0.5 * min(1),
            a: 0.5 * min(2),
            b: 0.5 * min(3),
            centres,
        }
    }

    fn broad_logpdf(&self, r: f64, p: f64) -> f64 {
        let lg = self.shape * self.rate.ln() - sivi::special::ln_gamma(self.shape)
            + (self.shape - 1.0) * r.ln()
            - self.rate * r;
        let lb = (self.a - 1.0) * p.ln() + (self.b - 1.0) * (-p).ln_1p()
            - sivi::special::ln_beta(self.a, self.b);
        lg + lb
    }

    fn sample(&self, post: &SemiImplicitPosterior, rng: &mut RngStream) -> ([f64; 2], f64) {
        let z = if rng.random::<f64>() < 0.5 {
            let r = gamma(self.shape, self.rate, rng).unwrap();
            let p = beta(self.a, self.b, rng).unwrap();
            [r, p]
        } else {
            let c = rng.random_range(0..CENTRES);
            let ExplicitConditional::Conjugate(cond) = &post.conditional else {
                unreachable!()
            };
            let z = cond.sample(&self.centres[c], rng).unwrap();
            [z[0], z[1]]
        };
        let z = [z[0].max(f64::MIN_POSITIVE), z[1].clamp(1e-300, 1.0 - 1e-16)];
        let mix: Vec<f64> = self
            .centres
            .iter()
            .map(|c| post.conditional.log_density(&z, c))
            .collect();
        let log_pi = log_mean_exp(&[self.broad_logpdf(z[0], z[1]), log_mean_exp(&mix)]);
        (z, log_pi)
    }
}

/// Per-sample importance-weighted `L̲_K` terms on common random numbers.
fn is_terms(
    post: &SemiImplicitPosterior,
    model: &PoissonLogModel,
    noise: &Tensor,
    z: &[[f64; 2]],
    log_prop: &[f64],
    k: usize,
) -> Vec<f64> {
    let psi = post.mixer.mlp.forward(noise).unwrap();
    let cond = &post.conditional;
    z.iter()
        .enumerate()
        .map(|(i, zi)| {
            let comps: Vec<f64> = (0..=k)
                .map(|c| cond.log_density(zi, psi.row(i * (k + 1) + c)))
                .collect();
            let w = (comps[0] - log_prop[i]).exp();
            w * (model.log_joint(zi) - log_mean_exp(&comps))
        })
        .collect()
}

/// Compares the mean of `reps` single-draw score-gradient estimates with
/// central differences of an importance-sampled `L̲_K` on `coords`.
pub fn score_gradient_unbiasedness(
    post: &SemiImplicitPosterior,
    model: &PoissonLogModel,
    k: usize,
    reps: usize,
    mc: usize,
    coords: &[usize],
    seed: u64,
) -> Vec<CoordinateCheck> {
    let n = model.data_len();
    let batch: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed);
    let mut est = vec![Vec::with_capacity(reps); coords.len()];
    for _ in 0..reps {
        let g = score_grad_phi(post, model, &batch, n, k, 1, &mut rng).unwrap();
        for (e, &c) in est.iter_mut().zip(coords) {
            e.push(g.phi[c]);
        }
    }

    let proposal = Proposal::covering(post, &mut rng);
    let h = 1e-4;
    let chunk = 50_000;
    let mut diffs = vec![Vec::with_capacity(mc); coords.len()];
    let mut done = 0;
    while done < mc {
        let m = chunk.min(mc - done);
        let noise = post.mixer.draw_noise(&mut rng, m * (k + 1));
        let (z, log_prop): (Vec<[f64; 2]>, Vec<f64>) =
            (0..m).map(|_| proposal.sample(post, &mut rng)).unzip();
        for (d, &c) in diffs.iter_mut().zip(coords) {
            let shifted = |delta: f64| {
                let mut p = post.clone();
                p.phi_mut()[c] += delta;
                is_terms(&p, model, &noise, &z, &log_prop, k)
            };
            let (up, down) = (shifted(h), shifted(-h));
            d.extend(up.iter().zip(&down).map(|(u, l)| (u - l) / (2.0 * h)));
        }
        done += m;
    }

    coords
        .iter()
        .enumerate()
        .map(|(i, &coord)| {
            let (estimate, estimate_se) = mean_se(&est[i]);
            let (oracle, oracle_se) = mean_se(&diffs[i]);
            CoordinateCheck {
                coord,
                estimate,
                estimate_se,
                oracle,
                oracle_se,
            }
        })
        .collect()
}
