use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Rng;
use crate::stylegen::GeneratorModel;
use crate::synthgen::{cell_name, CellTable, FeatureRecord, Subgroup};
use crate::traverse::{decode_endpoint, select_starters, traverse, LatentClassifiers, Outcome, StarterCriteria, Trajectory, TraversalConfig};

use super::config::AugmentationPolicy;

/// Starters spent on one deficient cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub subgroup: Subgroup,
    pub label: u8,
    /// Starter ids of this cell lie in `first_starter_id..end_starter_id`.
    pub first_starter_id: u64,
    pub end_starter_id: u64,
    pub starters: usize,
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub current: CellTable,
    pub targets: CellTable,
    pub deficit: CellTable,
    /// Synthetic records requested, the sum of the deficits.
    pub requested: usize,
    /// Synthetic records actually added.
    pub achieved: usize,
    pub runs: Vec<CellRun>,
    pub warnings: Vec<String>,
}

impl AugmentationPlan {
    pub fn is_empty(&self) -> bool {
        self.requested == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<AugmentationPlan> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn subgroup_of(&self, starter_id: u64) -> Option<Subgroup> {
        self.runs
            .iter()
            .find(|r| (r.first_starter_id..r.end_starter_id).contains(&starter_id))
            .map(|r| r.subgroup)
    }
}

/// Derives per-cell targets from the current training counts.
pub fn plan_augmentation(current: &CellTable, policy: &AugmentationPolicy) -> AugmentationPlan {
    let mut targets = *current;
    let mut warnings = Vec::new();
    match policy {
        AugmentationPolicy::MatchSubgroupHealthy => {
            for s in Subgroup::ALL {
                let healthy = current.get(s, 0);
                if current.get(s, 1) < healthy {
                    targets.set(s, 1, healthy);
                }
            }
        }
        AugmentationPolicy::MatchMaxCell => {
            let max = CellTable::cells().iter().map(|&(s, l)| current.get(s, l)).max().unwrap_or(0);
            for (s, l) in CellTable::cells() {
                targets.set(s, l, max);
            }
        }
        AugmentationPolicy::Explicit { targets: wanted } => {
            for (s, l) in CellTable::cells() {
                let (want, have) = (wanted.get(s, l), current.get(s, l));
                if want < have {
                    let msg = format!("target {want} for {} is below the current count {have}; left unchanged", cell_name(s, l));
                    warn!("{msg}");
                    warnings.push(msg);
                } else {
                    targets.set(s, l, want);
                }
            }
        }
    }
    let mut deficit = CellTable::default();
    for (s, l) in CellTable::cells() {
        deficit.set(s, l, targets.get(s, l) - current.get(s, l));
    }
    AugmentationPlan {
        current: *current,
        targets,
        deficit,
        requested: deficit.total(),
        achieved: 0,
        runs: Vec::new(),
        warnings,
    }
}

/// Frozen models and settings used to fill a plan.
#[derive(Debug, Clone, Copy)]
pub struct TraversalStack<'a> {
    pub generator: &'a GeneratorModel,
    pub classifiers: LatentClassifiers<'a>,
    pub config: &'a TraversalConfig,
    pub criteria: &'a StarterCriteria,
}

/// Selects starters and traverses them until each deficient cell has as
/// many converged trajectories as its deficit, or `max_starters` have been
/// spent. Records the per-cell runs on `plan`.
pub fn run_traversals(
    plan: &mut AugmentationPlan,
    stack: &TraversalStack<'_>,
    max_starters: usize,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    let mut all = Vec::new();
    let mut used = 0usize;
    let mut next_id = 0u64;
    plan.runs.clear();
    for (subgroup, label) in CellTable::cells() {
        let deficit = plan.deficit.get(subgroup, label);
        if deficit == 0 {
            continue;
        }
        if label != 1 {
            return Err(Error::UnsupportedMode(format!(
                "traversal only imparts the disease; cannot fill {}",
                cell_name(subgroup, label)
            )));
        }
        let criteria = StarterCriteria {
            subgroup,
            ..stack.criteria.clone()
        };
        let mut run = CellRun {
            subgroup,
            label,
            first_starter_id: next_id,
            end_starter_id: next_id,
            starters: 0,
            converged: 0,
        };
        while run.converged < deficit && used < max_starters {
            let n = (deficit - run.converged).min(max_starters - used);
            let (starters, exhausted) = match select_starters(n, stack.generator, &stack.classifiers, &criteria, rng, next_id) {
                Ok(s) => (s, false),
                Err(Error::StarterBudget { partial, rate, .. }) => {
                    warn!("starter budget exhausted for {} (acceptance rate {rate:.3})", cell_name(subgroup, label));
                    (partial, true)
                }
                Err(e) => return Err(e),
            };
            if let Some(last) = starters.last() {
                next_id = last.id + 1;
            }
            let trajs = starters
                .par_iter()
                .map(|s| traverse(s, subgroup, stack.config, &stack.classifiers, &stack.generator.shape))
                .collect::<Result<Vec<_>>>()?;
            used += trajs.len();
            run.starters += trajs.len();
            run.converged += trajs.iter().filter(|t| t.outcome == Outcome::Converged).count();
            all.extend(trajs);
            if exhausted || starters.is_empty() {
                break;
            }
        }
        run.end_starter_id = next_id;
        info!(
            "{}: {} of {} starters converged (deficit {deficit})",
            cell_name(subgroup, label),
            run.converged,
            run.starters
        );
        plan.runs.push(run);
    }
    Ok(all)
}

/// Decodes converged trajectories into synthetic records and appends them to
/// `train`. Each cell receives exactly its deficit, taking trajectories in
/// order. Falls short only when `allow_partial` is set.
pub fn augment(
    train: &[FeatureRecord],
    plan: &mut AugmentationPlan,
    trajectories: &[Trajectory],
    generator: &GeneratorModel,
    first_id: u64,
    allow_partial: bool,
) -> Result<Vec<FeatureRecord>> {
    let mut out = train.to_vec();
    let mut id = first_id;
    let mut achieved = 0;
    let mut shortfall = None;
    for (subgroup, label) in CellTable::cells() {
        let deficit = plan.deficit.get(subgroup, label);
        if deficit == 0 {
            continue;
        }
        let mut added = 0;
        for t in trajectories
            .iter()
            .filter(|t| t.outcome == Outcome::Converged && t.subgroup == subgroup)
            .take(deficit)
        {
            out.push(decode_endpoint(t, generator, id)?);
            id += 1;
            added += 1;
        }
        achieved += added;
        if added < deficit && shortfall.is_none() {
            shortfall = Some((cell_name(subgroup, label), added, deficit));
        }
    }
    plan.achieved = achieved;
    if let Some((cell, achieved, requested)) = shortfall {
        if !allow_partial {
            return Err(Error::PartialAugmentation {
                cell,
                achieved,
                requested,
            });
        }
        let msg = format!("partial augmentation accepted: {cell} received {achieved} of {requested}");
        warn!("{msg}");
        plan.warnings.push(msg);
    }
    Ok(out)
}
