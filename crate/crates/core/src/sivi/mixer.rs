use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::samplers::std_normal;
use crate::error::{Error, Result};
use crate::ndcore::{Mlp, MlpVars, Tape, Tensor, Var};

/// Distribution of the mixer's input noise `ε`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Isotropic standard normal.
    #[default]
    Gaussian,
    /// Independent fair coin flips in `{0, 1}`.
    PepperSalt,
}

/// `ψ = T_φ(ε)`: a ReLU network pushing forward input noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImplicitMixer {
    pub mlp: Mlp,
    pub noise: NoiseKind,
}

impl ImplicitMixer {
    pub fn new(mlp: Mlp, noise: NoiseKind) -> Self {
        Self { mlp, noise }
    }

    /// Glorot-initialized network `noise_dim → hidden… → psi_dim`.
    pub fn glorot<R: Rng + ?Sized>(
        noise_dim: usize,
        hidden: &[usize],
        psi_dim: usize,
        noise: NoiseKind,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![noise_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(psi_dim);
        Ok(Self::new(Mlp::glorot(&sizes, rng)?, noise))
    }

    /// A mixer whose output is the constant `psi` regardless of the noise.
    pub fn point_mass(noise_dim: usize, psi: &[f64]) -> Result<Self> {
        let mut mlp = Mlp::zeros(&[noise_dim, psi.len()])?;
        let bias = mlp.params().range("layer0.bias").expect("bias slice");
        mlp.params_mut().values_mut()[bias].copy_from_slice(psi);
        Ok(Self::new(mlp, NoiseKind::Gaussian))
    }

    pub fn noise_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn psi_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// `[count, noise_dim]` matrix of fresh input noise.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Tensor {
        let g = self.noise_dim();
        let data = (0..count * g)
            .map(|_| match self.noise {
                NoiseKind::Gaussian => std_normal(rng),
                NoiseKind::PepperSalt => (rng.random::<bool>()) as u8 as f64,
            })
            .collect();
        Tensor::matrix(count, g, data).expect("noise shape")
    }

    pub(crate) fn forward_on_tape(
        &self,
        tape: &Tape,
        vars: &MlpVars,
        noise: Tensor,
    ) -> Result<Var> {
        let input = tape.constant(noise);
        self.mlp.forward_taped(tape, vars, input)
    }
}

/// `count` independent draws `ψ = T_φ(ε)` as a `[count, psi_dim]` matrix.
///
/// With a tape, the result is also returned as a node differentiable in `φ`
/// together with the recorded parameter leaves.
pub fn mix_sample<R: Rng + ?Sized>(
    mixer: &ImplicitMixer,
    rng: &mut R,
    count: usize,
    tape: Option<&Tape>,
) -> Result<(Tensor, Option<(Var, MlpVars)>)> {
    if count == 0 {
        return Err(Error::InvalidParameter(
            "mix_sample needs count >= 1".into(),
        ));
    }
    let noise = mixer.draw_noise(rng, count);
    match tape {
        None => Ok((mixer.mlp.forward(&noise)?, None)),
        Some(tape) => {
            let vars = mixer.mlp.record_params(tape);
            let out = mixer.forward_on_tape(tape, &vars, noise)?;
            Ok((tape.value(out), Some((out, vars))))
        }
    }
}
