//! Reverse-mode automatic differentiation over a fixed op vocabulary.
//!
//! A [`Tape`] records every operation of one forward pass as an append-only
//! list of nodes. Each node caches its output, so [`Tape::backward`] can walk
//! the list in reverse and apply the vector-Jacobian product of every op.
//! Node inputs always refer to earlier nodes, which makes the list itself a
//! topological order.
//!
//! Leaves come in three flavours: constants (no gradient), parameters, and
//! marked inputs. Parameters and marked inputs receive gradients; the latter
//! exist so a loss can be differentiated with respect to the data fed into a
//! network (the latent traversal needs exactly that).
//!
//! Every op checks its output for NaN/Inf and returns
//! [`Error::NonFinite`] instead of propagating it.

use crate::error::{Error, Result};
use crate::ndcore::tensor::{finite, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Constant,
    Parameter,
    Input,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(LeafKind),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    BceWithLogits(Var, Tensor),
    Mean(Var),
    Sum(Var),
    L2NormSq(Var),
    RowNorm(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        let value = finite(value, name)?;
        let requires_grad = match &op {
            Op::Leaf(kind) => *kind != LeafKind::Constant,
            other => inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, t: Tensor, kind: LeafKind) -> Var {
        let requires_grad = kind != LeafKind::Constant;
        self.nodes.push(Node {
            op: Op::Leaf(kind),
            value: t,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, LeafKind::Constant)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, LeafKind::Parameter)
    }

    /// A data leaf whose gradient is wanted.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t, LeafKind::Input)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), out, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), out, "mul")
    }

    /// Adds a length-`m` bias to every row of an `n x m` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.len() != x.cols() || x.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let m = x.cols();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % m];
        }
        self.push(Op::AddBias(a, bias), out, "add_bias")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c);
        self.push(Op::Scale(a, c), out, "scale")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out, "transpose")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), out, "relu")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(a, slope), out, "leaky_relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    /// Elementwise binary cross-entropy on logits, computed as
    /// `max(x, 0) - x*t + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let x = self.value(logits);
        if x.len() != targets.len() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                lhs: x.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        if let Some(bad) = targets.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::Validation(format!(
                "binary cross-entropy target {bad} outside {{0, 1}}"
            )));
        }
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(targets.data())
                .map(|(&x, &t)| bce_logit(x, t))
                .collect(),
        )?;
        let targets = Tensor::new(x.shape().to_vec(), targets.data().to_vec())?;
        self.push(Op::BceWithLogits(logits, targets), out, "bce_with_logits")
    }

    /// Soft-target variant of [`Tape::bce_with_logits`] for targets in `[0, 1]`.
    pub fn bce_with_soft_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let x = self.value(logits);
        if x.len() != targets.len() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                lhs: x.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        if let Some(bad) = targets.data().iter().find(|&&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::Validation(format!("soft target {bad} outside [0, 1]")));
        }
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(targets.data())
                .map(|(&x, &t)| bce_logit(x, t))
                .collect(),
        )?;
        let targets = Tensor::new(x.shape().to_vec(), targets.data().to_vec())?;
        self.push(Op::BceWithLogits(logits, targets), out, "bce_with_logits")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(x.sum() / x.len() as f64);
        self.push(Op::Mean(a), out, "mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, "sum")
    }

    /// Sum of squares of all elements.
    pub fn l2_norm_sq(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).norm_sq());
        self.push(Op::L2NormSq(a), out, "l2_norm_sq")
    }

    /// Standardizes each row to zero mean and unit variance:
    /// `(x - mean) / sqrt(var + eps)` with the biased variance.
    pub fn row_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let (mu, s) = row_stats(row, eps);
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mu) / s;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push(Op::RowNorm(a, eps), out, "row_norm")
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.vjp(&node.op, &node.value, &g)?;
            for (var, contrib) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn vjp(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let v = |x: Var| &self.nodes[x.0].value;
        Ok(match op {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    res.push((*a, g.matmul(&v(*b).transpose())?));
                }
                if self.requires_grad(*b) {
                    res.push((*b, v(*a).transpose().matmul(g)?));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_with(v(*b), "mul", |x, y| x * y)?),
                (*b, g.zip_with(v(*a), "mul", |x, y| x * y)?),
            ],
            Op::AddBias(a, bias) => {
                let m = g.cols();
                let mut gb = vec![0.0; m];
                for (i, gv) in g.data().iter().enumerate() {
                    gb[i % m] += gv;
                }
                let gb = Tensor::new(v(*bias).shape().to_vec(), gb)?;
                vec![(*a, g.clone()), (*bias, gb)]
            }
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Sigmoid(a) => vec![(*a, g.zip_with(out, "sigmoid", |g, s| g * s * (1.0 - s))?)],
            Op::Relu(a) => vec![(
                *a,
                g.zip_with(v(*a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?,
            )],
            Op::LeakyRelu(a, slope) => vec![(
                *a,
                g.zip_with(v(*a), "leaky_relu", |g, x| if x > 0.0 { g } else { slope * g })?,
            )],
            Op::Tanh(a) => vec![(*a, g.zip_with(out, "tanh", |g, t| g * (1.0 - t * t))?)],
            Op::BceWithLogits(a, targets) => {
                let x = v(*a);
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(targets.data())
                    .zip(g.data())
                    .map(|((&x, &t), &g)| g * (sigmoid(x) - t))
                    .collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), d)?)]
            }
            Op::Mean(a) => {
                let x = v(*a);
                let s = g.data()[0] / x.len() as f64;
                vec![(*a, Tensor::full(x.shape(), s))]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(v(*a).shape(), g.data()[0]))],
            Op::L2NormSq(a) => vec![(*a, v(*a).scale(2.0 * g.data()[0]))],
            Op::RowNorm(a, eps) => {
                let x = v(*a);
                let (r, c) = (x.rows(), x.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let (_, s) = row_stats(x.row(i), *eps);
                    let y = out.row(i);
                    let gr = g.row(i);
                    let gm = gr.iter().sum::<f64>() / c as f64;
                    let gy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        d[i * c + j] = (gr[j] - gm - y[j] * gy) / s;
                    }
                }
                vec![(*a, Tensor::new(x.shape().to_vec(), d)?)]
            }
        })
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf(_) => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::Transpose(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::LeakyRelu(a, _)
        | Op::Tanh(a)
        | Op::BceWithLogits(a, _)
        | Op::Mean(a)
        | Op::Sum(a)
        | Op::L2NormSq(a)
        | Op::RowNorm(a, _) => vec![*a],
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c;
    (mu, (var + eps).sqrt())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy for one logit.
pub fn bce_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.5]);
    }

    #[test]
    fn relu_negative() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(-3.2));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0]);
    }

    #[test]
    fn bce_zero_logit_positive_target() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.bce_with_logits(x, &Tensor::scalar(1.0)).unwrap();
        assert_abs_diff_eq!(t.value(y).data()[0], std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn bce_rejects_non_binary_target() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        assert!(matches!(
            t.bce_with_logits(x, &Tensor::scalar(0.5)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn bce_large_logits_stay_finite() {
        assert!(bce_logit(800.0, 0.0).is_finite());
        assert!(bce_logit(-800.0, 1.0).is_finite());
        assert_abs_diff_eq!(bce_logit(800.0, 1.0), 0.0);
    }

    #[test]
    fn l2_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1.0, 2.0]));
        let l = t.l2_norm_sq(w).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(w).data(), &[2.0, 4.0]);
    }

    #[test]
    fn independent_parameter_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1.0, 2.0]));
        let u = t.param(Tensor::vector(vec![5.0]));
        let l = t.l2_norm_sq(w).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(u).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn overflow_is_an_error() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1e200]));
        let s = t.scale(w, 1e200);
        assert!(matches!(s, Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn constants_do_not_require_grad() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(1.0));
        let b = t.constant(Tensor::scalar(2.0));
        let c = t.add(a, b).unwrap();
        assert!(!t.requires_grad(c));
        let p = t.param(Tensor::scalar(1.0));
        let d = t.add(c, p).unwrap();
        assert!(t.requires_grad(d));
    }

    #[test]
    fn row_norm_output_is_standardized() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 2.0, 9.0]).unwrap());
        let y = t.row_norm(x, 1e-6).unwrap();
        for i in 0..2 {
            let row = t.value(y).row(i);
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-5);
        }
    }
}
