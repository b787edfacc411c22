//! Disease and subgroup classifiers in image space and in style space.
//!
//! Image-space classifiers are trained on feature records. They then label
//! synthetic samples, and the style vectors of those samples train the
//! style-space classifiers that the traversal differentiates.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ndcore::{sigmoid, Activation, Mlp, OptimState, ParamStore, Rng, Tape, Tensor, Var};
use crate::stylegen::{sample_fakes, GeneratorModel, StyleLayout, StyleStack};
use crate::synthgen::FeatureRecord;
use crate::weights::WeightsFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Disease,
    Subgroup,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Disease => "disease",
            Target::Subgroup => "subgroup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Space {
    Image,
    Latent { layout: StyleLayout },
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Image => "image",
            Space::Latent { .. } => "latent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
    /// Train on soft labels instead of thresholded ones (latent classifiers).
    pub soft_labels: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            hidden: vec![32, 32],
            soft_labels: false,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("classifier learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// MLP with relu hidden layers and a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub target: Target,
    pub space: Space,
    store: ParamStore,
    net: Mlp,
    pub validation_accuracy: Option<f64>,
}

impl ClassifierModel {
    pub fn new(target: Target, space: Space, input_width: usize, hidden: &[usize], rng: &mut Rng) -> ClassifierModel {
        let mut widths = vec![input_width];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut store = ParamStore::new();
        let net = Mlp::init(&mut store, "classifier", &widths, Activation::Relu, rng);
        ClassifierModel {
            target,
            space,
            store,
            net,
            validation_accuracy: None,
        }
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Logits `[n, 1]` for a batch on an existing tape (weights frozen).
    pub fn logits_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let bound = self.store.bind_frozen(tape);
        self.net.forward(tape, &bound, x)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        if x.rows() == 0 {
            return Ok(Vec::new());
        }
        if x.cols() != self.input_width() {
            return Err(Error::Dimension {
                op: "classifier input",
                lhs: vec![self.input_width()],
                rhs: x.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.logits_on(&mut tape, xv)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn probs(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn prob_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        self.probs(&Tensor::from_rows(rows)?)
    }

    pub fn to_weights(&self, kind: &str) -> WeightsFile {
        let hidden: Vec<usize> = self.net.layers[..self.net.layers.len() - 1]
            .iter()
            .map(|d| d.fan_out)
            .collect();
        WeightsFile::from_store(kind, &self.store)
            .with_meta("target", json!(self.target))
            .with_meta("space", json!(self.space.name()))
            .with_meta("input_width", json!(self.input_width()))
            .with_meta("layout", json!(match self.space {
                Space::Image => None,
                Space::Latent { layout } => Some(layout),
            }))
            .with_meta("validation_accuracy", json!(self.validation_accuracy))
            .with_meta("config", json!({ "hidden": hidden }))
    }

    pub fn from_weights(w: &WeightsFile) -> Result<ClassifierModel> {
        let target: Target = serde_json::from_value(w.meta("target")?.clone())?;
        let space = match w.meta("space")?.as_str() {
            Some("image") => Space::Image,
            Some("latent") => Space::Latent {
                layout: serde_json::from_value(w.meta("layout")?.clone())?,
            },
            other => return Err(Error::Validation(format!("unknown classifier space {other:?}"))),
        };
        let width = w
            .meta("input_width")?
            .as_u64()
            .ok_or_else(|| Error::Validation("input_width must be an integer".into()))? as usize;
        let hidden: Vec<usize> = serde_json::from_value(
            w.meta("config")?
                .get("hidden")
                .cloned()
                .ok_or_else(|| Error::Validation("classifier config missing hidden".into()))?,
        )?;
        let mut m = ClassifierModel::new(target, space, width, &hidden, &mut Rng::new(0, 0));
        m.store.load(w.tensors()?)?;
        m.validation_accuracy = serde_json::from_value(w.meta("validation_accuracy")?.clone())?;
        Ok(m)
    }
}

fn class_counts(hard: &[u8]) -> (usize, usize) {
    let pos = hard.iter().filter(|&&y| y == 1).count();
    (hard.len() - pos, pos)
}

/// Trains a classifier with BCE and Adam on `inputs`. `targets` are the
/// training targets (hard 0/1, or soft in `[0, 1]`); `hard` are the labels
/// used for validation accuracy and the both-classes check.
pub fn train_classifier(
    inputs: &[Vec<f64>],
    targets: &[f64],
    hard: &[u8],
    target: Target,
    space: Space,
    cfg: &ClassifierConfig,
    rng: &Rng,
) -> Result<ClassifierModel> {
    cfg.validate()?;
    if inputs.len() != targets.len() || inputs.len() != hard.len() {
        return Err(Error::Validation("inputs and labels differ in length".into()));
    }
    let (neg, pos) = class_counts(hard);
    if neg == 0 || pos == 0 {
        return Err(Error::Validation(format!(
            "{} classifier needs both classes, got {neg} negative and {pos} positive",
            target.name()
        )));
    }
    let width = inputs[0].len();
    let mut init = rng.fork(rng.stream() + 1);
    let mut model = ClassifierModel::new(target, space, width, &cfg.hidden, &mut init);
    let mut draws = rng.fork(rng.stream() + 2);

    let order = draws.permutation(inputs.len());
    let n_val = (inputs.len() as f64 * cfg.validation_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut opt = OptimState::adam(cfg.learning_rate)?;
    let names = model.store.names().to_vec();

    for _ in 0..cfg.epochs {
        let perm = draws.permutation(train_idx.len());
        for chunk in perm.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&k| inputs[train_idx[k]].clone()).collect();
            let t: Vec<f64> = chunk.iter().map(|&k| targets[train_idx[k]]).collect();
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let x = tape.constant(Tensor::from_rows(&rows)?);
            let logits = model.net.forward(&mut tape, &bound, x)?;
            let tt = Tensor::matrix(t.len(), 1, t)?;
            let l = if cfg.soft_labels {
                tape.bce_with_soft_logits(logits, &tt)?
            } else {
                tape.bce_with_logits(logits, &tt)?
            };
            let loss = tape.mean(l)?;
            let grads = tape.backward(loss)?;
            let g = ParamStore::collect_grads(&grads, &bound);
            opt.step(model.store.tensors_mut(), &g, &names)?;
        }
    }

    if !val_idx.is_empty() {
        let rows: Vec<Vec<f64>> = val_idx.iter().map(|&i| inputs[i].clone()).collect();
        let probs = model.prob_rows(&rows)?;
        let correct = val_idx
            .iter()
            .zip(&probs)
            .filter(|(&i, &p)| (p >= 0.5) as u8 == hard[i])
            .count();
        model.validation_accuracy = Some(correct as f64 / val_idx.len() as f64);
    }
    Ok(model)
}

pub fn image_label(r: &FeatureRecord, target: Target) -> u8 {
    match target {
        Target::Disease => r.label,
        Target::Subgroup => r.subgroup.as_target() as u8,
    }
}

/// Image-space classifier for `target` on feature records.
pub fn train_image_classifier(data: &[FeatureRecord], target: Target, cfg: &ClassifierConfig, rng: &Rng) -> Result<ClassifierModel> {
    if data.is_empty() {
        return Err(Error::Validation("cannot train a classifier on an empty dataset".into()));
    }
    let inputs: Vec<Vec<f64>> = data.iter().map(|r| r.x.clone()).collect();
    let hard: Vec<u8> = data.iter().map(|r| image_label(r, target)).collect();
    let targets: Vec<f64> = hard.iter().map(|&y| y as f64).collect();
    train_classifier(&inputs, &targets, &hard, target, Space::Image, cfg, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatent {
    pub stack: StyleStack,
    /// Image classifier probability; never ground truth.
    pub soft: f64,
    pub hard: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatentSet {
    pub target: Target,
    pub entries: Vec<LabeledLatent>,
    pub sources: Vec<String>,
}

impl LabeledLatentSet {
    pub fn positive_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.hard == 1).count() as f64 / self.entries.len() as f64
    }
}

/// Scores already-decoded fakes with an image-space classifier.
pub fn label_samples(fakes: &[(StyleStack, Vec<f64>)], image_clf: &ClassifierModel) -> Result<LabeledLatentSet> {
    if image_clf.space != Space::Image {
        return Err(Error::Contract(format!(
            "synthetic samples must be labeled by an image-space classifier, got {}",
            image_clf.space.name()
        )));
    }
    let rows: Vec<Vec<f64>> = fakes.iter().map(|(_, x)| x.clone()).collect();
    let probs = image_clf.prob_rows(&rows)?;
    Ok(LabeledLatentSet {
        target: image_clf.target,
        entries: fakes
            .iter()
            .zip(probs)
            .map(|((s, _), p)| LabeledLatent {
                stack: s.clone(),
                soft: p,
                hard: (p >= 0.5) as u8,
            })
            .collect(),
        sources: vec!["generator".into(), format!("image-{}", image_clf.target.name())],
    })
}

/// Samples `n` fakes and labels them with `image_clf`.
pub fn label_synthetics(
    n: usize,
    generator: &GeneratorModel,
    image_clf: &ClassifierModel,
    rng: &mut Rng,
    shared_styles: bool,
) -> Result<LabeledLatentSet> {
    if image_clf.space != Space::Image {
        return Err(Error::Contract(format!(
            "synthetic samples must be labeled by an image-space classifier, got {}",
            image_clf.space.name()
        )));
    }
    let fakes = sample_fakes(n, generator, rng, shared_styles)?;
    label_samples(&fakes, image_clf)
}

/// Style-space classifier trained on the hard (or, if configured, soft)
/// labels of `set`. The input is the stack flattened under `layout`.
pub fn train_latent_classifier(
    set: &LabeledLatentSet,
    layout: StyleLayout,
    cfg: &ClassifierConfig,
    rng: &Rng,
) -> Result<ClassifierModel> {
    let hard: Vec<u8> = set.entries.iter().map(|e| e.hard).collect();
    let (neg, pos) = class_counts(&hard);
    if neg == 0 || pos == 0 {
        return Err(Error::Validation(format!(
            "latent {} classifier needs both classes: {neg} negative, {pos} positive",
            set.target.name()
        )));
    }
    let inputs: Vec<Vec<f64>> = set.entries.iter().map(|e| e.stack.flatten(layout)).collect();
    let targets: Vec<f64> = if cfg.soft_labels {
        set.entries.iter().map(|e| e.soft).collect()
    } else {
        hard.iter().map(|&y| y as f64).collect()
    };
    train_classifier(&inputs, &targets, &hard, set.target, Space::Latent { layout }, cfg, rng)
}

/// Number of probability deciles whose empirical positive rate drops below
/// the previous decile's.
pub fn decile_violations(probs: &[f64], labels: &[u8]) -> usize {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let n = idx.len();
    let rates: Vec<f64> = (0..10)
        .filter_map(|d| {
            let lo = d * n / 10;
            let hi = (d + 1) * n / 10;
            (hi > lo).then(|| idx[lo..hi].iter().filter(|&&i| labels[i] == 1).count() as f64 / (hi - lo) as f64)
        })
        .collect();
    rates.windows(2).filter(|w| w[1] < w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, sep: f64, rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u8;
            let mut x = rng.normals(4);
            x[0] += if y == 1 { sep } else { -sep };
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn learns_separable_blobs() {
        let (x, y) = blobs(400, 3.0, &mut Rng::new(1, 1));
        let t: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let m = train_classifier(&x, &t, &y, Target::Disease, Space::Image, &ClassifierConfig::default(), &Rng::new(2, 0)).unwrap();
        assert!(m.validation_accuracy.unwrap() > 0.95);
    }

    #[test]
    fn single_class_rejected_with_counts() {
        let x = vec![vec![0.0; 4]; 5];
        let err = train_classifier(&x, &[1.0; 5], &[1; 5], Target::Disease, Space::Image, &ClassifierConfig::default(), &Rng::new(0, 0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("0 negative") && err.contains("5 positive"), "{err}");
    }

    #[test]
    fn latent_set_single_class_rejected() {
        let set = LabeledLatentSet {
            target: Target::Disease,
            entries: vec![
                LabeledLatent {
                    stack: StyleStack::shared(vec![0.0; 32], 2),
                    soft: 0.1,
                    hard: 0
                };
                3
            ],
            sources: vec![],
        };
        assert!(train_latent_classifier(&set, StyleLayout::Shared, &ClassifierConfig::default(), &Rng::new(0, 0)).is_err());
    }

    #[test]
    fn labeling_requires_image_space() {
        let g = GeneratorModel::new(Default::default(), &mut Rng::new(0, 0));
        let latent = ClassifierModel::new(
            Target::Disease,
            Space::Latent {
                layout: StyleLayout::Shared,
            },
            32,
            &[32, 32],
            &mut Rng::new(0, 1),
        );
        assert!(matches!(
            label_synthetics(4, &g, &latent, &mut Rng::new(1, 1), true),
            Err(Error::Contract(_))
        ));
        let image = ClassifierModel::new(Target::Disease, Space::Image, 64, &[32, 32], &mut Rng::new(0, 1));
        let empty = label_synthetics(0, &g, &image, &mut Rng::new(1, 1), true).unwrap();
        assert!(empty.entries.is_empty());
        let set = label_synthetics(50, &g, &image, &mut Rng::new(1, 1), true).unwrap();
        assert!(set.entries.iter().all(|e| e.hard == (e.soft >= 0.5) as u8));
    }

    #[test]
    fn weights_roundtrip() {
        let m = ClassifierModel::new(
            Target::Subgroup,
            Space::Latent {
                layout: StyleLayout::PerScale,
            },
            64,
            &[32, 32],
            &mut Rng::new(3, 0),
        );
        let w = m.to_weights("classifier");
        assert_eq!(w.meta("input_width").unwrap(), 64);
        let back = ClassifierModel::from_weights(&WeightsFile::from_json(&w.to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn decile_violation_count() {
        let probs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let labels: Vec<u8> = (0..100).map(|i| (i >= 50) as u8).collect();
        assert_eq!(decile_violations(&probs, &labels), 0);
        let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        assert_eq!(decile_violations(&probs, &flipped), 1);
    }
}
