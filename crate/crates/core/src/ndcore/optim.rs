use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct OptimState {
    kind: OptimKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl OptimState {
    pub fn new(kind: OptimKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {lr}")));
        }
        Ok(OptimState {
            kind,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        OptimState::new(OptimKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        OptimState::new(OptimKind::Adam, lr)
    }

    /// Overrides the Adam moment decays.
    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Result<Self> {
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
            return Err(Error::Validation(format!("Adam betas must lie in [0, 1), got {beta1}, {beta2}")));
        }
        self.beta1 = beta1;
        self.beta2 = beta2;
        Ok(self)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one update in place. `names` label parameters in diagnostics.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    index: i,
                    name: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
                });
            }
        }
        if self.kind == OptimKind::Adam && self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        if self.kind == OptimKind::Adam && self.first.len() != params.len() {
            return Err(Error::Contract("parameter count changed between steps".into()));
        }
        self.steps += 1;
        let lr = self.lr;
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimKind::Adam => {
                let t = self.steps as i32;
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for (j, &gv) in g.data().iter().enumerate() {
                        md[j] = b1 * md[j] + (1.0 - b1) * gv;
                        vd[j] = b2 * vd[j] + (1.0 - b2) * gv * gv;
                        let mhat = md[j] / c1;
                        let vhat = vd[j] / c2;
                        pd[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn sgd_definition() {
        let mut o = OptimState::sgd(0.1).unwrap();
        let mut p = vec![Tensor::scalar(1.0)];
        o.step(&mut p, &[Tensor::scalar(2.0)], &names(1)).unwrap();
        assert_abs_diff_eq!(p[0].data()[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for mut o in [OptimState::sgd(0.1).unwrap(), OptimState::adam(0.1).unwrap()] {
            let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
            o.step(&mut p, &[Tensor::zeros(&[2])], &names(1)).unwrap();
            assert_eq!(p[0].data(), &[1.0, -2.0]);
        }
    }

    #[test]
    fn adam_first_step_by_hand() {
        // m = 0.1 g, v = 0.001 g^2; bias-corrected m̂ = g, v̂ = g^2, so the
        // update is lr * g / (|g| + eps).
        let (lr, g, p0) = (0.01, 0.5, 2.0);
        let m = (1.0 - 0.9) * g;
        let v = (1.0 - 0.999) * g * g;
        let mhat = m / (1.0 - 0.9);
        let vhat = v / (1.0 - 0.999);
        let expected = p0 - lr * mhat / (f64::sqrt(vhat) + 1e-8);
        let mut o = OptimState::adam(lr).unwrap();
        let mut p = vec![Tensor::scalar(p0)];
        o.step(&mut p, &[Tensor::scalar(g)], &names(1)).unwrap();
        assert_abs_diff_eq!(p[0].data()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0].data()[0], p0 - lr * g / (g + 1e-8), epsilon = 1e-12);
        assert_eq!(o.steps(), 1);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut o = OptimState::sgd(0.1).unwrap();
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(1.0)];
        let mut bad = Tensor::scalar(0.0);
        bad.data_mut()[0] = f64::INFINITY;
        let err = o
            .step(&mut p, &[Tensor::scalar(0.0), bad], &names(2))
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1, ref name } if name == "p1"));
    }

    #[test]
    fn rejects_non_positive_rate() {
        assert!(OptimState::sgd(0.0).is_err());
        assert!(OptimState::adam(-1.0).is_err());
    }
}
