use serde::Serialize;

use crate::error::{Error, Result};
use crate::fairmetrics::confusion::{cohen_kappa, confusion, ConfusionMatrix, KappaWeighting, Rate, Undefined};
use crate::fairmetrics::interval::{binomial_halfwidth, bootstrap_halfwidth};
use crate::fairmetrics::ranking::{average_precision, roc_auc};
use crate::synthgen::Subgroup;

pub const DECISION_THRESHOLD: f64 = 0.5;

/// One metric value with its 95% half-width where one is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: Rate,
    pub halfwidth: Option<f64>,
    /// Denominator the half-width was computed with.
    pub n: u64,
}

impl MetricValue {
    fn binomial(value: Rate, n: u64) -> MetricValue {
        let halfwidth = value.ok().and_then(|p| binomial_halfwidth(p, n).ok());
        MetricValue { value, halfwidth, n }
    }

    fn bare(value: Rate, n: u64) -> MetricValue {
        MetricValue {
            value,
            halfwidth: None,
            n,
        }
    }
}

/// Row order of the results table.
pub const METRIC_ROWS: [(&str, &str); 9] = [
    ("accuracy", "Accuracy"),
    ("sensitivity", "Sensitivity"),
    ("specificity", "Specificity"),
    ("ppv", "PPV"),
    ("npv", "NPV"),
    ("kappa", "Weighted Kappa"),
    ("f1", "F1"),
    ("average_precision", "Average Precision"),
    ("roc_auc", "ROCAUC"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: MetricValue,
    pub sensitivity: MetricValue,
    pub specificity: MetricValue,
    pub ppv: MetricValue,
    pub npv: MetricValue,
    pub kappa: MetricValue,
    pub f1: MetricValue,
    pub average_precision: MetricValue,
    pub roc_auc: MetricValue,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            replicates: 1000,
            seed: 0,
        }
    }
}

fn inner(r: Result<Rate>) -> Option<f64> {
    r.ok().and_then(|v| v.ok())
}

impl MetricsReport {
    /// Thresholds probabilities at 0.5 and computes every table metric.
    /// Rates get binomial half-widths with their own denominators
    /// (sensitivity uses the positives, specificity the negatives, ...);
    /// AP and ROC AUC get stratified bootstrap half-widths.
    pub fn compute(labels: &[u8], probs: &[f64], boot: BootstrapSettings) -> Result<MetricsReport> {
        if labels.is_empty() {
            return Err(Error::Validation("cannot report metrics on an empty set".into()));
        }
        let preds: Vec<u8> = probs.iter().map(|&p| (p >= DECISION_THRESHOLD) as u8).collect();
        let cm = confusion(labels, &preds)?;
        let r = cm.rates();
        let kappa = cohen_kappa(&cm.as_table(), KappaWeighting::Linear);
        let ap = average_precision(labels, probs)?;
        let auc = roc_auc(labels, probs)?;
        let boot_hw = |value: &std::result::Result<f64, Undefined>, stat: fn(&[u8], &[f64]) -> Result<Rate>| {
            value.ok().and_then(|_| {
                bootstrap_halfwidth(|l, s| inner(stat(l, s)), labels, probs, boot.replicates, boot.seed)
                    .ok()
                    .map(|b| b.halfwidth)
            })
        };
        let n = cm.total();
        Ok(MetricsReport {
            confusion: cm,
            accuracy: MetricValue::binomial(r.accuracy, n),
            sensitivity: MetricValue::binomial(r.sensitivity, cm.positives()),
            specificity: MetricValue::binomial(r.specificity, cm.negatives()),
            ppv: MetricValue::binomial(r.ppv, cm.tp + cm.fp),
            npv: MetricValue::binomial(r.npv, cm.tn + cm.fn_),
            kappa: MetricValue::bare(kappa, n),
            f1: MetricValue::bare(r.f1, n),
            average_precision: MetricValue {
                halfwidth: boot_hw(&ap, average_precision),
                value: ap,
                n,
            },
            roc_auc: MetricValue {
                halfwidth: boot_hw(&auc, roc_auc),
                value: auc,
                n,
            },
            n,
        })
    }

    pub fn get(&self, key: &str) -> Option<&MetricValue> {
        Some(match key {
            "accuracy" => &self.accuracy,
            "sensitivity" => &self.sensitivity,
            "specificity" => &self.specificity,
            "ppv" => &self.ppv,
            "npv" => &self.npv,
            "kappa" => &self.kappa,
            "f1" => &self.f1,
            "average_precision" => &self.average_precision,
            "roc_auc" => &self.roc_auc,
            _ => return None,
        })
    }

    /// `(key, value)` pairs in table order.
    pub fn rows(&self) -> Vec<(&'static str, &MetricValue)> {
        METRIC_ROWS
            .iter()
            .map(|(k, _)| (*k, self.get(k).expect("known key")))
            .collect()
    }
}

/// Labels, probabilities and subgroup tags of one evaluated partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub labels: Vec<u8>,
    pub subgroups: Vec<Subgroup>,
    pub probs: Vec<f64>,
}

impl ScoredSet {
    pub fn slice(&self, subgroup: Subgroup) -> ScoredSet {
        let keep: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.subgroups[i] == subgroup)
            .collect();
        ScoredSet {
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            subgroups: keep.iter().map(|&i| self.subgroups[i]).collect(),
            probs: keep.iter().map(|&i| self.probs[i]).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.labels.len() != self.probs.len() || self.labels.len() != self.subgroups.len() {
            return Err(Error::Validation("scored set columns differ in length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGap {
    pub overall: MetricsReport,
    pub caucasian: MetricsReport,
    pub african_american: MetricsReport,
    /// `|acc_C - acc_AA|`
    pub accuracy_gap: f64,
    pub leftover: Option<MetricsReport>,
}

impl ModelGap {
    pub fn subgroup(&self, s: Subgroup) -> &MetricsReport {
        match s {
            Subgroup::Caucasian => &self.caucasian,
            Subgroup::AfricanAmerican => &self.african_american,
        }
    }

    pub fn accuracy(&self, s: Subgroup) -> f64 {
        self.subgroup(s).accuracy.value.expect("non-empty slice")
    }

    pub fn leftover_accuracy(&self) -> Option<f64> {
        self.leftover.as_ref().and_then(|r| r.accuracy.value.ok())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub baseline: ModelGap,
    pub adapted: ModelGap,
    /// `gap(baseline) - gap(adapted)`; positive when the gap narrows.
    pub gap_delta: f64,
}

fn model_gap(test: &ScoredSet, leftover: Option<&ScoredSet>, boot: BootstrapSettings) -> Result<ModelGap> {
    test.check()?;
    let mut per = Vec::new();
    for s in Subgroup::ALL {
        let sl = test.slice(s);
        if sl.labels.is_empty() {
            return Err(Error::Validation(format!("subgroup {s} absent from the test partition")));
        }
        per.push(MetricsReport::compute(&sl.labels, &sl.probs, boot)?);
    }
    let african_american = per.pop().unwrap();
    let caucasian = per.pop().unwrap();
    let accuracy_gap = (caucasian.accuracy.value.unwrap() - african_american.accuracy.value.unwrap()).abs();
    let leftover = match leftover {
        Some(l) => {
            l.check()?;
            Some(MetricsReport::compute(&l.labels, &l.probs, boot)?)
        }
        None => None,
    };
    Ok(ModelGap {
        overall: MetricsReport::compute(&test.labels, &test.probs, boot)?,
        caucasian,
        african_american,
        accuracy_gap,
        leftover,
    })
}

/// Per-subgroup reports and accuracy gaps for two models scored on the same
/// test partition (and optionally the same leftover partition).
pub fn gap_report(
    baseline_test: &ScoredSet,
    adapted_test: &ScoredSet,
    leftover: Option<(&ScoredSet, &ScoredSet)>,
    boot: BootstrapSettings,
) -> Result<GapReport> {
    if baseline_test.labels != adapted_test.labels || baseline_test.subgroups != adapted_test.subgroups {
        return Err(Error::Validation("models were scored on different test records".into()));
    }
    let baseline = model_gap(baseline_test, leftover.map(|l| l.0), boot)?;
    let adapted = model_gap(adapted_test, leftover.map(|l| l.1), boot)?;
    Ok(GapReport {
        gap_delta: baseline.accuracy_gap - adapted.accuracy_gap,
        baseline,
        adapted,
    })
}
