use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conditional::ExplicitConditional;
use super::mixer::{ImplicitMixer, NoiseKind};
use crate::distributions::samplers::std_normal;
use crate::error::{Error, Result};
use crate::ndcore::{Mlp, Tensor};

/// Current version of the serialized posterior document.
pub const SCHEMA_VERSION: u32 = 1;

/// `h_φ(z) = ∫ q_ξ(z | ψ) q_φ(ψ) dψ`.
#[derive(Clone, Debug)]
pub struct SemiImplicitPosterior {
    pub mixer: ImplicitMixer,
    pub conditional: ExplicitConditional,
}

impl SemiImplicitPosterior {
    pub fn new(mixer: ImplicitMixer, conditional: ExplicitConditional) -> Result<Self> {
        if mixer.psi_dim() != conditional.psi_dim() {
            return Err(Error::Shape {
                op: "posterior psi dim",
                expected: vec![conditional.psi_dim()],
                got: vec![mixer.psi_dim()],
            });
        }
        Ok(Self { mixer, conditional })
    }

    pub fn dim(&self) -> usize {
        self.conditional.dim()
    }

    pub fn phi(&self) -> &[f64] {
        self.mixer.mlp.params().values()
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        self.mixer.mlp.params_mut().values_mut()
    }

    /// Snapshot as a versioned document; `seed` records the run that produced it.
    pub fn to_document(&self, seed: Option<u64>) -> PosteriorDocument {
        PosteriorDocument {
            schema_version: SCHEMA_VERSION,
            family: self.conditional.family().to_string(),
            layer_sizes: self.mixer.mlp.layer_sizes().to_vec(),
            phi: self.phi().to_vec(),
            xi: self.conditional.xi().to_vec(),
            conditional: self.conditional.clone(),
            noise: self.mixer.noise,
            seed,
        }
    }

    pub fn from_document(doc: &PosteriorDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported posterior schema version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        if doc.family != doc.conditional.family() {
            return Err(Error::Config(format!(
                "family tag {:?} does not match conditional {:?}",
                doc.family,
                doc.conditional.family()
            )));
        }
        let mlp = Mlp::from_flat(&doc.layer_sizes, &doc.phi)?;
        let mut conditional = doc.conditional.clone();
        if conditional.xi().len() != doc.xi.len() {
            return Err(Error::Shape {
                op: "posterior xi",
                expected: vec![conditional.xi().len()],
                got: vec![doc.xi.len()],
            });
        }
        conditional.xi_mut().copy_from_slice(&doc.xi);
        Self::new(ImplicitMixer::new(mlp, doc.noise), conditional)
    }

    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document(seed))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Loads a posterior and the seed recorded with it.
    pub fn load(path: &Path) -> Result<(Self, Option<u64>)> {
        let doc: PosteriorDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((Self::from_document(&doc)?, doc.seed))
    }
}

/// On-disk form of a trained posterior.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorDocument {
    pub schema_version: u32,
    pub family: String,
    pub layer_sizes: Vec<usize>,
    pub phi: Vec<f64>,
    pub xi: Vec<f64>,
    pub conditional: ExplicitConditional,
    pub noise: NoiseKind,
    pub seed: Option<u64>,
}

/// `count` iid draws `ε → ψ → z` as a `[count, d]` matrix.
pub fn posterior_draws<R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    rng: &mut R,
    count: usize,
) -> Result<Tensor> {
    let d = post.dim();
    if count == 0 {
        return Ok(Tensor::zeros(&[0, d]));
    }
    let psi = post.mixer.mlp.forward(&post.mixer.draw_noise(rng, count))?;
    let mut out = Vec::with_capacity(count * d);
    match &post.conditional {
        ExplicitConditional::Gaussian(g) => {
            let eps: Vec<f64> = (0..count * d).map(|_| std_normal(rng)).collect();
            for j in 0..count {
                out.extend(g.transform(psi.row(j), &eps[j * d..(j + 1) * d]));
            }
        }
        ExplicitConditional::Conjugate(c) => {
            for j in 0..count {
                out.extend(c.sample(psi.row(j), rng)?);
            }
        }
    }
    Tensor::matrix(count, d, out)
}
