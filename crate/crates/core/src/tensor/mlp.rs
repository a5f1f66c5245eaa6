use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, Gradients, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Softplus,
}

/// Layer widths of a fully connected network with relu hidden units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[1, out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}


impl Mlp {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let widths = spec.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f32).sqrt();
                let weight = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Linear {
                    weight: Tensor::matrix(fan_in, fan_out, weight).expect("sized"),
                    bias: Tensor::matrix(1, fan_out, bias).expect("sized"),
                }
            })
            .collect();
        Mlp { spec, layers }
    }

    /// Rebuilds a network from parameters concatenated in declaration order
    /// (layer by layer, weight then bias).
    pub fn from_flat(spec: MlpSpec, flat: &[f32]) -> Result<Self, TensorError> {
        let widths = spec.widths();
        let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if flat.len() != expected {
            return Err(TensorError::DataLength {
                len: flat.len(),
                shape: vec![expected],
            });
        }
        let mut offset = 0;
        let mut take = |n: usize| {
            let s = flat[offset..offset + n].to_vec();
            offset += n;
            s
        };
        let layers = widths
            .windows(2)
            .map(|w| {
                let weight = Tensor::matrix(w[0], w[1], take(w[0] * w[1]))?;
                let bias = Tensor::matrix(1, w[1], take(w[1]))?;
                Ok(Linear { weight, bias })
            })
            .collect::<Result<_, TensorError>>()?;
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().map(|t| t.len()).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn flat_parameters(&self) -> Vec<f32> {
        self.parameters().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
        }
    }

    /// Records the forward pass of `x: [batch, input]` on `tape`.
    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        let last = vars.layers.len() - 1;
        for (i, (w, b)) in vars.layers.iter().enumerate() {
            let z = tape.matmul(h, *w)?;
            let z = tape.add_row(z, *b)?;
            h = if i < last {
                tape.relu(z)
            } else {
                match self.spec.output_activation {
                    Activation::Identity => z,
                    Activation::Relu => tape.relu(z),
                    Activation::Softplus => tape.softplus(z),
                }
            };
        }
        Ok(h)
    }

    /// Collects parameter gradients in declaration order.
    pub fn gradients(&self, vars: &MlpVars, grads: &mut Gradients) -> Vec<Tensor> {
        vars.layers
            .iter()
            .zip(&self.layers)
            .flat_map(|((w, b), l)| [grads.take_or_zero(*w, &l.weight), grads.take_or_zero(*b, &l.bias)])
            .collect()
    }

    /// Forward pass without recording, for inference over many rows.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = x.dims2();
        if k != self.spec.input {
            return Err(TensorError::Mismatch {
                op: "mlp_infer",
                lhs: x.shape().to_vec(),
                rhs: vec![self.spec.input],
            });
        }
        let mut h = x.data().to_vec();
        let mut width = k;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (_, out) = l.weight.dims2();
            let mut z = vec![0.0; m * out];
            gemm(m, width, out, &h, l.weight.data(), &mut z, false);
            for row in z.chunks_exact_mut(out) {
                for (v, b) in row.iter_mut().zip(l.bias.data()) {
                    *v += b;
                }
            }
            let act = if i < last {
                Activation::Relu
            } else {
                self.spec.output_activation
            };
            match act {
                Activation::Identity => {}
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Softplus => z.iter_mut().for_each(|v| {
                    *v = if *v > 20.0 { *v } else { v.exp().ln_1p() };
                }),
            }
            h = z;
            width = out;
        }
        Tensor::matrix(m, width, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn spec() -> MlpSpec {
        MlpSpec {
            input: 5,
            hidden: vec![7, 4],
            output: 3,
            output_activation: Activation::Identity,
        }
    }

    #[test]
    fn tape_and_inference_agree() {
        let mlp = Mlp::new(spec(), &mut seed::rng(1, 0, 0));
        let x = Tensor::matrix(2, 5, (0..10).map(|i| i as f32 * 0.1 - 0.4).collect()).unwrap();
        let mut tape = Tape::new();
        let vars = mlp.register(&mut tape);
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &vars, xv).unwrap();
        let z = mlp.infer(&x).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_roundtrip() {
        let mlp = Mlp::new(spec(), &mut seed::rng(2, 0, 0));
        let back = Mlp::from_flat(spec(), &mlp.flat_parameters()).unwrap();
        assert_eq!(mlp, back);
        assert!(Mlp::from_flat(spec(), &[0.0; 3]).is_err());
    }
}
