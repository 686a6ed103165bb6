use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use super::tape::{kernel, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fully connected network with rectifier hidden layers and a linear output layer.
///
/// `layer_sizes` lists every width including input and output, so
/// `[10, 30, 60, 30, 2]` is a 10-dimensional input, three hidden layers and a
/// 2-dimensional output. Each layer stores its weights as an `in × out`
/// matrix followed by an `out` bias vector inside one flat [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: ParamVector,
}

/// Leaf handles for the weights and biases of one taped forward pass.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Flattens the gradient of each layer into parameter order.
    pub fn gradient(&self, grads: &super::tape::Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for &(w, b) in &self.layers {
            out.extend_from_slice(grads.wrt(w).data());
            out.extend_from_slice(grads.wrt(b).data());
        }
        out
    }
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "layer sizes must have at least two positive widths, got {layer_sizes:?}"
            )));
        }
        let mut params = ParamVector::new();
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            params.push_slice(format!("layer{l}.weight"), &vec![0.0; pair[0] * pair[1]]);
            params.push_slice(format!("layer{l}.bias"), &vec![0.0; pair[1]]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(layer_sizes)?;
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let range = mlp.params.range(&format!("layer{l}.weight")).unwrap();
            for v in &mut mlp.params.values_mut()[range] {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(mlp)
    }

    /// Builds a network from explicit parameters in layer order.
    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut mlp = Self::zeros(layer_sizes)?;
        if flat.len() != mlp.num_params() {
            return Err(Error::Shape {
                op: "Mlp::from_flat",
                expected: vec![mlp.num_params()],
                got: vec![flat.len()],
            });
        }
        mlp.params.set_values(flat);
        Ok(mlp)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Σ (in + 1) · out over layers.
    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| (p[0] + 1) * p[1]).sum()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn layer(&self, l: usize) -> (Tensor, Tensor) {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = self.params.slice(&format!("layer{l}.weight")).unwrap();
        let b = self.params.slice(&format!("layer{l}.bias")).unwrap();
        (
            Tensor::matrix(i, o, w.to_vec()).unwrap(),
            Tensor::vector(b.to_vec()),
        )
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                expected: vec![input.rows(), self.input_dim()],
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Untaped forward pass over a batch (`[n, in] -> [n, out]`).
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut h = Tensor::matrix(input.rows(), input.cols(), input.data().to_vec())?;
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            h = kernel::add_row(&h.matmul(&w)?, &b);
            if l + 1 < self.num_layers() {
                h = kernel::relu(&h);
            }
        }
        Ok(h)
    }

    /// Records the parameters as leaves on `tape`.
    pub fn record_params(&self, tape: &Tape) -> MlpVars {
        MlpVars {
            layers: (0..self.num_layers())
                .map(|l| {
                    let (w, b) = self.layer(l);
                    (tape.var(w), tape.var(b))
                })
                .collect(),
        }
    }

    /// Taped forward pass using parameter leaves from [`Mlp::record_params`].
    pub fn forward_taped(&self, tape: &Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        let shape = tape.shape(input);
        let cols = if shape.len() == 2 {
            shape[1]
        } else {
            shape.iter().product()
        };
        if cols != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                expected: vec![self.input_dim()],
                got: shape,
            });
        }
        let mut h = input;
        if shape.len() != 2 {
            h = tape.reshape(h, vec![1, cols]);
        }
        let n = vars.layers.len();
        for (l, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.add_row(tape.matmul(h, w), b);
            if l + 1 < n {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Evaluates `T(input)`, recording on `tape` when given.
///
/// Returns the output value and, when taped, the output node together with
/// the parameter leaves.
pub fn mlp_forward(
    mlp: &Mlp,
    input: &Tensor,
    tape: Option<&Tape>,
) -> Result<(Tensor, Option<(Var, MlpVars)>)> {
    match tape {
        None => Ok((mlp.forward(input)?, None)),
        Some(t) => {
            mlp.check_input(input)?;
            let vars = mlp.record_params(t);
            let x = t.constant(Tensor::matrix(
                input.rows(),
                input.cols(),
                input.data().to_vec(),
            )?);
            let out = mlp.forward_taped(t, &vars, x)?;
            Ok((t.value(out), Some((out, vars))))
        }
    }
}
