use std::fmt::Write as _;
use std::path::Path;

use crate::classify::ClassifierModel;
use crate::csvio::{fmt_f64, parse_field, Table};
use crate::error::{Error, Result};
use crate::fairmetrics::{gap_report, BootstrapSettings, GapReport, MetricValue, MetricsReport, ModelGap, ScoredSet, METRIC_ROWS};
use crate::synthgen::{FeatureRecord, Subgroup};
use crate::traverse::{Outcome, Trajectory};

use super::augment::AugmentationPlan;

pub const MODELS: [&str; 2] = ["baseline", "adapted"];
pub const PARTITIONS: [&str; 2] = ["test", "leftover"];

fn predictions_header() -> Vec<String> {
    ["model", "partition", "id", "subgroup", "label", "prob"].iter().map(|s| s.to_string()).collect()
}

/// Scores `test` and `leftover` with both diagnostic models.
pub fn predict(baseline: &ClassifierModel, adapted: &ClassifierModel, test: &[FeatureRecord], leftover: &[FeatureRecord]) -> Result<Table> {
    let mut t = Table::new(predictions_header());
    for (name, model) in MODELS.iter().zip([baseline, adapted]) {
        for (part, records) in PARTITIONS.iter().zip([test, leftover]) {
            if records.is_empty() {
                continue;
            }
            let rows: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
            let probs = model.prob_rows(&rows)?;
            for (r, p) in records.iter().zip(probs) {
                t.push(vec![
                    name.to_string(),
                    part.to_string(),
                    r.id.to_string(),
                    r.subgroup.code().to_string(),
                    r.label.to_string(),
                    fmt_f64(p),
                ]);
            }
        }
    }
    Ok(t)
}

fn scored(table: &Table, model: &str, partition: &str, path: &Path) -> Result<ScoredSet> {
    let mut s = ScoredSet {
        labels: Vec::new(),
        subgroups: Vec::new(),
        probs: Vec::new(),
    };
    for row in table.rows.iter().filter(|r| r[0] == model && r[1] == partition) {
        s.subgroups.push(Subgroup::from_code(&row[3]).ok_or_else(|| Error::Csv {
            path: path.into(),
            detail: format!("unknown subgroup {:?}", row[3]),
        })?);
        s.labels.push(parse_field(&row[4], "label", path)?);
        s.probs.push(parse_field(&row[5], "prob", path)?);
    }
    Ok(s)
}

/// Recomputes every metric from saved predictions.
pub fn evaluate_predictions(table: &Table, boot: BootstrapSettings, path: &Path) -> Result<GapReport> {
    if table.header != predictions_header() {
        return Err(Error::Csv {
            path: path.into(),
            detail: "unexpected predictions header".into(),
        });
    }
    let base = scored(table, "baseline", "test", path)?;
    let adapt = scored(table, "adapted", "test", path)?;
    if base.labels.is_empty() {
        return Err(Error::Validation("test partition missing from predictions".into()));
    }
    let lb = scored(table, "baseline", "leftover", path)?;
    let la = scored(table, "adapted", "leftover", path)?;
    let leftover = (!lb.labels.is_empty()).then_some((&lb, &la));
    gap_report(&base, &adapt, leftover, boot)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

fn metric_rows(model: &str, slice: &str, r: &MetricsReport, t: &mut Table) {
    for (key, v) in r.rows() {
        t.push(vec![
            model.into(),
            slice.into(),
            key.into(),
            fmt_opt(v.value.ok()),
            fmt_opt(v.halfwidth),
            v.n.to_string(),
        ]);
    }
}

fn slices(g: &ModelGap) -> Vec<(&'static str, &MetricsReport)> {
    let mut v = vec![("overall", &g.overall), ("C", &g.caucasian), ("AA", &g.african_american)];
    if let Some(l) = &g.leftover {
        v.push(("leftover", l));
    }
    v
}

/// `model,slice,metric,value,halfwidth,n`; undefined values are `NA`.
pub fn metrics_table(gap: &GapReport) -> Table {
    let mut t = Table::new(
        ["model", "slice", "metric", "value", "halfwidth", "n"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for (name, g) in MODELS.iter().zip([&gap.baseline, &gap.adapted]) {
        for (slice, r) in slices(g) {
            metric_rows(name, slice, r, &mut t);
        }
    }
    t
}

pub fn gap_table(gap: &GapReport) -> Table {
    let mut t = Table::new(
        ["model", "accuracy_c", "accuracy_aa", "accuracy_gap", "leftover_accuracy"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for (name, g) in MODELS.iter().zip([&gap.baseline, &gap.adapted]) {
        t.push(vec![
            name.to_string(),
            fmt_f64(g.accuracy(Subgroup::Caucasian)),
            fmt_f64(g.accuracy(Subgroup::AfricanAmerican)),
            fmt_f64(g.accuracy_gap),
            fmt_opt(g.leftover_accuracy()),
        ]);
    }
    t.push(vec!["gap_delta".into(), "NA".into(), "NA".into(), fmt_f64(gap.gap_delta), "NA".into()]);
    t
}

fn pct(v: &MetricValue) -> String {
    match (v.value, v.halfwidth) {
        (Ok(x), Some(h)) => format!("{:.2} ({:.2})", 100.0 * x, 100.0 * h),
        (Ok(x), None) => format!("{:.2}", 100.0 * x),
        (Err(_), _) => "NA".into(),
    }
}

/// Headline numbers of a traversal stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalSummary {
    pub trajectories: usize,
    pub converged: usize,
    pub median_iterations: Option<usize>,
    pub median_p_start: Option<f64>,
    pub median_p_end: Option<f64>,
}

fn median<T: Copy + PartialOrd>(mut v: Vec<T>) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Some(v[v.len() / 2])
}

pub fn summarize_trajectories(trajs: &[Trajectory]) -> TraversalSummary {
    let conv: Vec<&Trajectory> = trajs.iter().filter(|t| t.outcome == Outcome::Converged).collect();
    TraversalSummary {
        trajectories: trajs.len(),
        converged: conv.len(),
        median_iterations: median(conv.iter().map(|t| t.iterations()).collect()),
        median_p_start: median(trajs.iter().map(|t| t.first().p_disease).collect()),
        median_p_end: median(conv.iter().map(|t| t.last().p_disease).collect()),
    }
}

/// Context rendered around the results table.
#[derive(Debug, Clone)]
pub struct ReportContext<'a> {
    pub seed: u64,
    pub trainer_mode: &'a str,
    pub plan: &'a AugmentationPlan,
    pub traversal: &'a TraversalSummary,
}

/// Markdown report: nine metric rows, two subgroup rows and one leftover
/// row, each with a baseline and an adapted column.
pub fn render_report(gap: &GapReport, ctx: &ReportContext<'_>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Debiasing report\n");
    let _ = writeln!(s, "- seed: {}", ctx.seed);
    let _ = writeln!(s, "- generator trainer mode: {}", ctx.trainer_mode);
    let p = ctx.plan;
    let _ = writeln!(
        s,
        "- augmentation: requested {}, achieved {} (AA-AMD target {}, C-AMD target {})",
        p.requested, p.achieved, p.targets.aa_amd, p.targets.c_amd
    );
    let tr = ctx.traversal;
    let _ = writeln!(
        s,
        "- traversals: {} run, {} converged, median iterations {}, median p_disease {} -> {}",
        tr.trajectories,
        tr.converged,
        tr.median_iterations.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
        tr.median_p_start.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into()),
        tr.median_p_end.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into()),
    );
    for w in &p.warnings {
        let _ = writeln!(s, "- warning: {w}");
    }
    let _ = writeln!(s, "\nValues are percentages with 95% half-widths in parentheses.\n");
    let _ = writeln!(s, "| Metric | Baseline | Adapted |");
    let _ = writeln!(s, "|---|---|---|");
    let (b, a) = (&gap.baseline, &gap.adapted);
    for (key, label) in METRIC_ROWS {
        let _ = writeln!(s, "| {label} | {} | {} |", pct(b.overall.get(key).unwrap()), pct(a.overall.get(key).unwrap()));
    }
    let _ = writeln!(s, "| Caucasian subset accuracy | {} | {} |", pct(&b.caucasian.accuracy), pct(&a.caucasian.accuracy));
    let _ = writeln!(
        s,
        "| African American subset accuracy | {} | {} |",
        pct(&b.african_american.accuracy),
        pct(&a.african_american.accuracy)
    );
    let lo = |g: &ModelGap| g.leftover.as_ref().map(|r| pct(&r.accuracy)).unwrap_or_else(|| "NA".into());
    let _ = writeln!(s, "| Leftover set accuracy | {} | {} |", lo(b), lo(a));
    let _ = writeln!(
        s,
        "\nSubgroup accuracy gap: baseline {:.2}, adapted {:.2} points (narrowed by {:.2}).",
        100.0 * b.accuracy_gap,
        100.0 * a.accuracy_gap,
        100.0 * gap.gap_delta
    );
    s
}
