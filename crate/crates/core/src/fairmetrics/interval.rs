use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ndcore::Rng;

pub const Z_95: f64 = 1.96;

/// Normal-approximation 95% half-width of a binomial proportion,
/// `1.96 * sqrt(p (1 - p) / n)`.
pub fn binomial_halfwidth(p: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Validation("binomial half-width needs n > 0".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!("proportion {p} outside [0, 1]")));
    }
    Ok(Z_95 * (p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapInterval {
    pub halfwidth: f64,
    pub lower: f64,
    pub upper: f64,
    pub replicates: usize,
    pub undefined: usize,
    pub warning: Option<String>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Stratified percentile bootstrap of `statistic`.
///
/// Replicate `r` resamples positives and negatives separately, with
/// replacement, using rng stream `(seed, r)`; the result does not depend on
/// scheduling. The statistic returns `None` where it is undefined; more than
/// 10% undefined replicates is an error.
pub fn bootstrap_halfwidth<F>(statistic: F, labels: &[u8], scores: &[f64], replicates: usize, seed: u64) -> Result<BootstrapInterval>
where
    F: Fn(&[u8], &[f64]) -> Option<f64> + Sync,
{
    if labels.len() != scores.len() {
        return Err(Error::Validation("labels and scores differ in length".into()));
    }
    if replicates == 0 {
        return Err(Error::Validation("bootstrap needs at least one replicate".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();

    let values: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = Rng::new(seed, r as u64);
            let mut l = Vec::with_capacity(labels.len());
            let mut s = Vec::with_capacity(labels.len());
            for stratum in [&pos, &neg] {
                for _ in 0..stratum.len() {
                    let i = stratum[rng.below(stratum.len())];
                    l.push(labels[i]);
                    s.push(scores[i]);
                }
            }
            statistic(&l, &s)
        })
        .collect();

    let undefined = values.iter().filter(|v| v.is_none()).count();
    if undefined * 10 > replicates {
        return Err(Error::Validation(format!(
            "statistic undefined on {undefined} of {replicates} bootstrap replicates"
        )));
    }
    let mut defined: Vec<f64> = values.into_iter().flatten().collect();
    defined.sort_by(f64::total_cmp);
    let lower = quantile(&defined, 0.025);
    let upper = quantile(&defined, 0.975);
    let warning = (defined.len() < 2).then(|| {
        log::warn!("bootstrap with {} usable replicate(s): half-width is degenerate", defined.len());
        format!("degenerate bootstrap: {} usable replicate(s)", defined.len())
    });
    Ok(BootstrapInterval {
        halfwidth: (upper - lower) / 2.0,
        lower,
        upper,
        replicates,
        undefined,
        warning,
    })
}
