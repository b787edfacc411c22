use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Binary confusion counts (positive class = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

/// A metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Undefined {
    pub metric: &'static str,
    pub denominator: &'static str,
}

impl fmt::Display for Undefined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} undefined: {} is zero", self.metric, self.denominator)
    }
}

pub type Rate = std::result::Result<f64, Undefined>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub accuracy: Rate,
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub ppv: Rate,
    pub npv: Rate,
    pub f1: Rate,
}

fn ratio(num: u64, den: u64, metric: &'static str, denominator: &'static str) -> Rate {
    if den == 0 {
        Err(Undefined { metric, denominator })
    } else {
        Ok(num as f64 / den as f64)
    }
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    /// 2x2 table with rows = truth (1, 0) and columns = prediction (1, 0).
    pub fn as_table(&self) -> Vec<Vec<u64>> {
        vec![vec![self.tp, self.fn_], vec![self.fp, self.tn]]
    }

    pub fn rates(&self) -> Rates {
        let sensitivity = ratio(self.tp, self.positives(), "sensitivity", "tp+fn");
        let ppv = ratio(self.tp, self.tp + self.fp, "ppv", "tp+fp");
        let f1 = match (ppv, sensitivity) {
            (Ok(p), Ok(s)) if p + s > 0.0 => Ok(2.0 * p * s / (p + s)),
            (Ok(_), Ok(_)) => Err(Undefined {
                metric: "f1",
                denominator: "ppv+sensitivity",
            }),
            (Err(_), _) => Err(Undefined {
                metric: "f1",
                denominator: "tp+fp",
            }),
            (_, Err(_)) => Err(Undefined {
                metric: "f1",
                denominator: "tp+fn",
            }),
        };
        Rates {
            accuracy: ratio(self.tp + self.tn, self.total(), "accuracy", "total"),
            sensitivity,
            specificity: ratio(self.tn, self.negatives(), "specificity", "fp+tn"),
            ppv,
            npv: ratio(self.tn, self.tn + self.fn_, "npv", "tn+fn"),
            f1,
        }
    }
}

/// Counts agreement between binary labels and binary predictions.
pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::Validation(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fn_ += 1,
            (0, 1) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            _ => {
                return Err(Error::Validation(format!(
                    "non-binary value in labels/predictions: ({y}, {p})"
                )))
            }
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaWeighting {
    None,
    Linear,
    Quadratic,
}

/// Weighted Cohen's kappa on a K x K agreement table (rows = rater A,
/// columns = rater B):
/// `kappa = 1 - sum(w_ij o_ij) / sum(w_ij e_ij)` with disagreement weights
/// `w_ij` = `[i != j]`, `|i-j|/(K-1)` or `((i-j)/(K-1))^2`. For `K = 2`
/// all three weightings give the same value, equal to `(p_o - p_e)/(1 - p_e)`.
pub fn cohen_kappa(table: &[Vec<u64>], weighting: KappaWeighting) -> std::result::Result<f64, Undefined> {
    let k = table.len();
    let total: u64 = table.iter().flatten().sum();
    if k == 0 || total == 0 || table.iter().any(|r| r.len() != k) {
        return Err(Undefined {
            metric: "kappa",
            denominator: "total",
        });
    }
    let n = total as f64;
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let col: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64 / n)
        .collect();
    let weight = |i: usize, j: usize| -> f64 {
        if i == j {
            return 0.0;
        }
        let d = (i as f64 - j as f64).abs() / (k as f64 - 1.0);
        match weighting {
            KappaWeighting::None => 1.0,
            KappaWeighting::Linear => d,
            KappaWeighting::Quadratic => d * d,
        }
    };
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = weight(i, j);
            observed += w * table[i][j] as f64 / n;
            expected += w * row[i] * col[j];
        }
    }
    if expected <= 0.0 {
        return Err(Undefined {
            metric: "kappa",
            denominator: "1 - p_e",
        });
    }
    Ok(1.0 - observed / expected)
}
