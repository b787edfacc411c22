//! Gradient-descent traversal of style space.
//!
//! A healthy starter style is moved downhill on
//!
//! ```text
//! J(w) = BCE(C_d(w), 1) + lambda_sub * BCE(C_s(w), s0) + lambda_anchor * ||w - w0||^2
//! ```
//!
//! where `C_d` and `C_s` are the style-space disease and subgroup classifiers
//! and `s0` is the starter's subgroup. Iteration stops once the disease
//! probability reaches the threshold, and the endpoint is decoded by the
//! generator into a synthetic record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierModel, Space, Target};
use crate::csvio::{fmt_f64, parse_field, Table};
use crate::error::{Error, Result};
use crate::ndcore::{sigmoid, Rng, Tape, Tensor};
use crate::stylegen::{sample_fakes, GeneratorModel, GeneratorShape, StyleLayout, StyleStack};
use crate::synthgen::{FeatureRecord, Provenance, Source, Subgroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraversalConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    pub threshold: f64,
    pub anchor_weight: f64,
    pub subgroup_weight: f64,
    pub mode: StyleLayout,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        TraversalConfig {
            step_size: 0.05,
            max_iterations: 200,
            threshold: 0.9,
            anchor_weight: 0.01,
            subgroup_weight: 0.1,
            mode: StyleLayout::Shared,
        }
    }
}

impl TraversalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("traversal step size must be >= 0, got {}", self.step_size)));
        }
        if !(self.threshold > 0.5 && self.threshold < 1.0) {
            return Err(Error::Config(format!("traversal threshold must be in (0.5, 1), got {}", self.threshold)));
        }
        if self.anchor_weight < 0.0 || self.subgroup_weight < 0.0 {
            return Err(Error::Config("traversal penalty weights must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StarterCriteria {
    pub subgroup: Subgroup,
    pub min_subgroup_prob: f64,
    pub max_disease_prob: f64,
    /// Maximum raw samples drawn while looking for starters.
    pub sample_budget: usize,
}

impl Default for StarterCriteria {
    fn default() -> Self {
        StarterCriteria {
            subgroup: Subgroup::AfricanAmerican,
            min_subgroup_prob: 0.9,
            max_disease_prob: 0.1,
            sample_budget: 4000,
        }
    }
}

impl StarterCriteria {
    pub fn validate(&self) -> Result<()> {
        for p in [self.min_subgroup_prob, self.max_disease_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("starter probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn subgroup_prob(&self, p_aa: f64) -> f64 {
        match self.subgroup {
            Subgroup::AfricanAmerican => p_aa,
            Subgroup::Caucasian => 1.0 - p_aa,
        }
    }

    pub fn accepts(&self, p_disease: f64, p_aa: f64) -> bool {
        self.subgroup_prob(p_aa) >= self.min_subgroup_prob && p_disease <= self.max_disease_prob
    }
}

/// The pair of style-space classifiers a traversal is guided by.
#[derive(Debug, Clone, Copy)]
pub struct LatentClassifiers<'a> {
    pub disease: &'a ClassifierModel,
    pub subgroup: &'a ClassifierModel,
}

impl<'a> LatentClassifiers<'a> {
    pub fn new(disease: &'a ClassifierModel, subgroup: &'a ClassifierModel) -> Result<Self> {
        let layout = match (disease.space, subgroup.space) {
            (Space::Latent { layout: a }, Space::Latent { layout: b }) if a == b => a,
            _ => {
                return Err(Error::Contract(
                    "traversal needs two style-space classifiers with the same layout".into(),
                ))
            }
        };
        if disease.target != Target::Disease || subgroup.target != Target::Subgroup {
            return Err(Error::Contract("expected a disease and a subgroup classifier".into()));
        }
        let _ = layout;
        Ok(LatentClassifiers { disease, subgroup })
    }

    pub fn layout(&self) -> StyleLayout {
        match self.disease.space {
            Space::Latent { layout } => layout,
            Space::Image => unreachable!("checked in new"),
        }
    }

    /// `(p_disease, p_AA)` for each stack.
    pub fn score(&self, stacks: &[StyleStack]) -> Result<Vec<(f64, f64)>> {
        let rows: Vec<Vec<f64>> = stacks.iter().map(|s| s.flatten(self.layout())).collect();
        let d = self.disease.prob_rows(&rows)?;
        let s = self.subgroup.prob_rows(&rows)?;
        Ok(d.into_iter().zip(s).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Starter {
    pub id: u64,
    pub stack: StyleStack,
    pub p_disease: f64,
    pub p_subgroup: f64,
}

/// Rejection-samples shared-style stacks until `n` satisfy `criteria`.
/// Starter ids number the raw draws from `first_id`.
pub fn select_starters(
    n: usize,
    generator: &GeneratorModel,
    clfs: &LatentClassifiers<'_>,
    criteria: &StarterCriteria,
    rng: &mut Rng,
    first_id: u64,
) -> Result<Vec<Starter>> {
    criteria.validate()?;
    const BATCH: usize = 256;
    let mut accepted = Vec::new();
    let mut drawn = 0usize;
    while accepted.len() < n && drawn < criteria.sample_budget {
        let m = BATCH.min(criteria.sample_budget - drawn);
        let fakes = sample_fakes(m, generator, rng, true)?;
        let stacks: Vec<StyleStack> = fakes.into_iter().map(|(s, _)| s).collect();
        let scores = clfs.score(&stacks)?;
        for (k, (stack, (pd, pa))) in stacks.into_iter().zip(scores).enumerate() {
            if accepted.len() == n {
                break;
            }
            let id = first_id + (drawn + k) as u64;
            if criteria.accepts(pd, pa) {
                accepted.push(Starter {
                    id,
                    stack,
                    p_disease: pd,
                    p_subgroup: pa,
                });
            }
        }
        drawn += m;
    }
    if accepted.len() < n {
        return Err(Error::StarterBudget {
            accepted: accepted.len(),
            requested: n,
            drawn,
            rate: accepted.len() as f64 / drawn.max(1) as f64,
            partial: accepted,
        });
    }
    Ok(accepted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub iteration: usize,
    pub stack: StyleStack,
    pub p_disease: f64,
    /// Probability of the AfricanAmerican subgroup.
    pub p_subgroup: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub starter_id: u64,
    pub subgroup: Subgroup,
    pub states: Vec<TrajectoryState>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn first(&self) -> &TrajectoryState {
        &self.states[0]
    }

    pub fn last(&self) -> &TrajectoryState {
        self.states.last().expect("trajectory has a starting state")
    }

    pub fn iterations(&self) -> usize {
        self.last().iteration
    }
}

/// The traversal objective at one starter.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    clfs: LatentClassifiers<'a>,
    w0: Vec<f64>,
    subgroup_target: f64,
    anchor_weight: f64,
    subgroup_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub p_disease: f64,
    pub p_subgroup: f64,
}

impl<'a> Objective<'a> {
    pub fn new(clfs: LatentClassifiers<'a>, w0: Vec<f64>, subgroup: Subgroup, cfg: &TraversalConfig) -> Objective<'a> {
        Objective {
            clfs,
            w0,
            subgroup_target: subgroup.as_target(),
            anchor_weight: cfg.anchor_weight,
            subgroup_weight: cfg.subgroup_weight,
        }
    }

    /// Value, gradient with respect to `w`, and both probabilities.
    pub fn evaluate(&self, w: &[f64]) -> Result<Evaluation> {
        let d = w.len();
        let mut tape = Tape::new();
        let wv = tape.input(Tensor::matrix(1, d, w.to_vec())?);
        let w0 = tape.constant(Tensor::matrix(1, d, self.w0.clone())?);
        let ld = self.clfs.disease.logits_on(&mut tape, wv)?;
        let ls = self.clfs.subgroup.logits_on(&mut tape, wv)?;
        let bd = tape.bce_with_logits(ld, &Tensor::scalar(1.0))?;
        let bd = tape.sum(bd)?;
        let bs = tape.bce_with_logits(ls, &Tensor::scalar(self.subgroup_target))?;
        let bs = tape.sum(bs)?;
        let bs = tape.scale(bs, self.subgroup_weight)?;
        let diff = tape.sub(wv, w0)?;
        let anchor = tape.l2_norm_sq(diff)?;
        let anchor = tape.scale(anchor, self.anchor_weight)?;
        let j = tape.add(bd, bs)?;
        let j = tape.add(j, anchor)?;
        let grads = tape.backward(j)?;
        Ok(Evaluation {
            value: tape.value(j).data()[0],
            gradient: grads.wrt(wv).into_data(),
            p_disease: sigmoid(tape.value(ld).data()[0]),
            p_subgroup: sigmoid(tape.value(ls).data()[0]),
        })
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        Ok(self.evaluate(w)?.value)
    }
}

/// Runs fixed-step gradient descent from `starter` toward the disease class.
pub fn traverse(
    starter: &Starter,
    subgroup: Subgroup,
    cfg: &TraversalConfig,
    clfs: &LatentClassifiers<'_>,
    shape: &GeneratorShape,
) -> Result<Trajectory> {
    cfg.validate()?;
    if clfs.layout() != cfg.mode {
        return Err(Error::Contract(format!(
            "traversal mode {:?} does not match classifier layout {:?}",
            cfg.mode,
            clfs.layout()
        )));
    }
    let w0 = starter.stack.flatten(cfg.mode);
    let mut w = w0.clone();
    let objective = Objective::new(*clfs, w0.clone(), subgroup, cfg);
    // The anchor term is applied as an exact proximal step, which equals the
    // explicit step to first order but stays stable for any anchor weight.
    let shrink = 1.0 / (1.0 + 2.0 * cfg.step_size * cfg.anchor_weight);
    let state = |it: usize, w: &[f64], e: &Evaluation| -> Result<TrajectoryState> {
        Ok(TrajectoryState {
            iteration: it,
            stack: StyleStack::from_flat(w, cfg.mode, shape)?,
            p_disease: e.p_disease,
            p_subgroup: e.p_subgroup,
            objective: e.value,
        })
    };
    let mut eval = objective.evaluate(&w)?;
    let mut states = vec![state(0, &w, &eval)?];
    let mut outcome = Outcome::MaxIters;
    if eval.p_disease >= cfg.threshold {
        outcome = Outcome::Converged;
    } else {
        for it in 1..=cfg.max_iterations {
            let next: Vec<f64> = w
                .iter()
                .zip(&eval.gradient)
                .zip(&w0)
                .map(|((v, g), a)| {
                    let smooth = g - 2.0 * cfg.anchor_weight * (v - a);
                    a + shrink * (v - a - cfg.step_size * smooth)
                })
                .collect();
            let e = match objective.evaluate(&next) {
                Ok(e) if e.value.is_finite() && next.iter().all(|v| v.is_finite()) => e,
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    outcome = Outcome::Diverged;
                    break;
                }
                Err(other) => return Err(other),
            };
            w = next;
            eval = e;
            states.push(state(it, &w, &eval)?);
            if eval.p_disease >= cfg.threshold {
                outcome = Outcome::Converged;
                break;
            }
        }
    }
    Ok(Trajectory {
        starter_id: starter.id,
        subgroup,
        states,
        outcome,
    })
}

/// Decodes the endpoint of a converged trajectory into a synthetic,
/// disease-positive record of the starter's subgroup.
pub fn decode_endpoint(traj: &Trajectory, generator: &GeneratorModel, id: u64) -> Result<FeatureRecord> {
    if traj.outcome != Outcome::Converged {
        return Err(Error::NotConverged(traj.outcome));
    }
    let x = generator.generate(&traj.last().stack)?;
    Ok(FeatureRecord {
        id,
        subgroup: traj.subgroup,
        severity: 0,
        label: 1,
        source: Source::Synthetic,
        x,
        provenance: Some(Provenance {
            starter_id: traj.starter_id,
            iterations: traj.iterations(),
        }),
    })
}

pub fn trajectory_header(shape: &GeneratorShape) -> Vec<String> {
    let mut h: Vec<String> = ["starter_id", "iter", "p_disease", "p_subgroup", "objective"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..shape.w_dim * shape.scales).map(|i| format!("w{i}")));
    h
}

/// One row per recorded state; style columns hold every `w_i` concatenated.
pub fn trajectories_table(trajs: &[Trajectory], shape: &GeneratorShape) -> Table {
    let mut t = Table::new(trajectory_header(shape));
    for tr in trajs {
        for s in &tr.states {
            let mut row = vec![
                tr.starter_id.to_string(),
                s.iteration.to_string(),
                fmt_f64(s.p_disease),
                fmt_f64(s.p_subgroup),
                fmt_f64(s.objective),
            ];
            row.extend(s.stack.flatten(StyleLayout::PerScale).iter().map(|v| fmt_f64(*v)));
            t.push(row);
        }
    }
    t
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory], shape: &GeneratorShape) -> Result<()> {
    trajectories_table(trajs, shape).write(path)
}

/// Reads trajectories back. The outcome is reconstructed from the stopping
/// rule: converged iff the last state reaches `threshold`, otherwise
/// max-iters when the iteration cap was hit and diverged before it.
pub fn read_trajectories(path: &Path, shape: &GeneratorShape, subgroup: Subgroup, cfg: &TraversalConfig) -> Result<Vec<Trajectory>> {
    let t = Table::read(path)?;
    if t.header != trajectory_header(shape) {
        return Err(Error::Csv {
            path: path.into(),
            detail: "unexpected trajectory header".into(),
        });
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for row in &t.rows {
        let id: u64 = parse_field(&row[0], "starter_id", path)?;
        let flat = row[5..]
            .iter()
            .map(|v| parse_field::<f64>(v, "style", path))
            .collect::<Result<Vec<_>>>()?;
        let state = TrajectoryState {
            iteration: parse_field(&row[1], "iter", path)?,
            p_disease: parse_field(&row[2], "p_disease", path)?,
            p_subgroup: parse_field(&row[3], "p_subgroup", path)?,
            objective: parse_field(&row[4], "objective", path)?,
            stack: StyleStack::from_flat(&flat, StyleLayout::PerScale, shape)?,
        };
        match out.last_mut() {
            Some(tr) if tr.starter_id == id && state.iteration > tr.last().iteration => tr.states.push(state),
            _ => out.push(Trajectory {
                starter_id: id,
                subgroup,
                states: vec![state],
                outcome: Outcome::MaxIters,
            }),
        }
    }
    for tr in &mut out {
        let last = tr.last();
        tr.outcome = if last.p_disease >= cfg.threshold {
            Outcome::Converged
        } else if last.iteration >= cfg.max_iterations {
            Outcome::MaxIters
        } else {
            Outcome::Diverged
        };
    }
    Ok(out)
}
