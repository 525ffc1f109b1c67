use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{GraphError, GraphResult, NodeId, ValueGraph};
use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in x out`
    pub weight: Tensor,
    /// `1 x out`
    pub bias: Tensor,
}

/// Fully connected network: ELU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

/// Graph handles for one [`MlpParams`] bound into a [`ValueGraph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    ids: Vec<(NodeId, NodeId)>,
    activations: Vec<Activation>,
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases. `zero_output` zeroes the last
    /// layer so the untrained network is the zero map.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], zero_output: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = if zero_output && l == n - 1 {
                Tensor::zeros(fan_in, fan_out)
            } else {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Tensor::from_vec(fan_in, fan_out, data)
            };
            layers.push(Linear {
                weight,
                bias: Tensor::zeros(1, fan_out),
            });
        }
        let mut activations = vec![Activation::Elu; n];
        activations[n - 1] = Activation::Identity;
        Self {
            sizes: sizes.to_vec(),
            layers,
            activations,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Shapes chain and every entry is finite.
    pub fn is_consistent(&self) -> bool {
        self.layers.len() + 1 == self.sizes.len()
            && self.activations.len() == self.layers.len()
            && self.layers.iter().enumerate().all(|(l, lin)| {
                lin.weight.shape() == (self.sizes[l], self.sizes[l + 1])
                    && lin.bias.shape() == (1, self.sizes[l + 1])
                    && lin.weight.is_finite()
                    && lin.bias.is_finite()
            })
    }

    /// Adds the parameters to `g` as trainable leaves.
    pub fn bind(&self, g: &mut ValueGraph) -> BoundMlp {
        BoundMlp {
            ids: self
                .layers
                .iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect(),
            activations: self.activations.clone(),
        }
    }

    /// Adds the parameters as constants: usable in a graph but never updated.
    pub fn bind_frozen(&self, g: &mut ValueGraph) -> BoundMlp {
        BoundMlp {
            ids: self
                .layers
                .iter()
                .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
                .collect(),
            activations: self.activations.clone(),
        }
    }

    /// Batched forward pass without recording a graph. Bit-identical to
    /// [`BoundMlp::forward`].
    pub fn eval(&self, x: &Tensor) -> GraphResult<Tensor> {
        if x.cols != self.input_dim() {
            return Err(GraphError::Shape {
                node: 0,
                op: "mlp_eval",
                detail: format!("input {:?} for {} features", x.shape(), self.input_dim()),
            });
        }
        let mut h = x.clone();
        for (l, act) in self.layers.iter().zip(&self.activations) {
            let mut out = Tensor::zeros(h.rows, l.weight.cols);
            gemm(&h, false, &l.weight, false, &mut out, false);
            for r in 0..out.rows {
                for (o, b) in out.row_mut(r).iter_mut().zip(&l.bias.data) {
                    *o += b;
                }
            }
            if *act == Activation::Elu {
                out = out.map(|a| if a > 0.0 { a } else { a.exp_m1() });
            }
            h = out;
        }
        Ok(h)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut ValueGraph, x: NodeId) -> GraphResult<NodeId> {
        let mut h = x;
        for (&(w, b), act) in self.ids.iter().zip(&self.activations) {
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            h = match act {
                Activation::Elu => g.elu(z)?,
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Gradients in the same order as [`MlpParams::tensors`].
    pub fn grads(&self, g: &ValueGraph) -> Vec<Tensor> {
        self.ids
            .iter()
            .flat_map(|&(w, b)| [g.grad(w), g.grad(b)])
            .collect()
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        self.ids.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}
