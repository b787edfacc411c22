//! Named parameter storage and dense layers built on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::rng::Rng;
use crate::ndcore::tape::{Gradients, Tape, Var};
use crate::ndcore::tensor::Tensor;

/// Flat, ordered list of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Puts every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Puts every parameter on the tape as a constant (frozen).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn collect_grads(grads: &Gradients, bound: &[Var]) -> Vec<Tensor> {
        bound.iter().map(|&v| grads.wrt(v)).collect()
    }

    /// Replaces tensors by name; shapes must match.
    pub fn load(&mut self, layers: Vec<(String, Tensor)>) -> Result<()> {
        if layers.len() != self.len() {
            return Err(Error::Validation(format!(
                "expected {} layers, found {}",
                self.len(),
                layers.len()
            )));
        }
        for (name, t) in layers {
            let i = self
                .index_of(&name)
                .ok_or_else(|| Error::Validation(format!("unknown layer {name:?}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "load weights",
                    lhs: self.tensors[i].shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// He-style uniform initialization: `U(-a, a)` with `a = sqrt(3) * sqrt(2 / fan_in)`,
/// so the weight standard deviation is `sqrt(2 / fan_in)`.
pub fn init_weight(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = 3f64.sqrt() * (2.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-a, a)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("finite init")
}

/// Indices of one dense layer's weight `[in, out]` and bias `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Dense {
        let weight = store.add(format!("{name}.weight"), init_weight(fan_in, fan_out, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Dense {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// `x @ W + b` for a batch `x` of shape `[n, in]`.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound[self.weight])?;
        tape.add_bias(h, bound[self.bias])
    }
}

/// Stack of dense layers with an activation between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, name: &str, widths: &[usize], activation: Activation, rng: &mut Rng) -> Mlp {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound, h)?;
            if i < last {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }

    /// Same as [`Mlp::forward`] but also returns the pre-activations of the
    /// hidden layers.
    pub fn forward_with_preacts(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound, h)?;
            if i < last {
                pre.push(h);
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok((h, pre))
    }
}
