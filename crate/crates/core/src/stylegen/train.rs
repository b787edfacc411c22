//! Adversarial and reconstruction trainers for the style generator.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ndcore::{Activation, Mlp, OptimState, ParamStore, Rng, Tape, Tensor, Var};
use crate::stylegen::model::{DiscriminatorModel, GeneratorModel, GeneratorShape, StyleStack, WBarMode};
use crate::weights::WeightsFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainerMode {
    Adversarial,
    ReconstructionFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Adam first- and second-moment decays of the adversarial trainer.
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub r1_weight: f64,
    /// Decay of the moving average of generator weights that the adversarial
    /// trainer returns; 0 returns the last iterate.
    pub generator_ema_decay: f64,
    pub mode: TrainerMode,
    /// Switch to the reconstruction trainer when adversarial training diverges.
    pub fallback_on_divergence: bool,
    pub log_every: usize,
    pub moment_samples: usize,
    pub w_bar_decay: f64,
    /// Std of the latent noise added to encoded reals (fallback trainer).
    pub fallback_latent_noise: f64,
    /// Weight of the latent moment-matching penalty (fallback trainer).
    pub fallback_prior_weight: f64,
    pub shape: GeneratorShape,
    pub discriminator_hidden: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            steps: 4000,
            batch_size: 64,
            lr_generator: 2e-3,
            lr_discriminator: 2e-3,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            r1_weight: 1.0,
            generator_ema_decay: 0.0,
            mode: TrainerMode::Adversarial,
            fallback_on_divergence: true,
            log_every: 100,
            moment_samples: 1024,
            w_bar_decay: 0.995,
            fallback_latent_noise: 0.1,
            fallback_prior_weight: 1.0,
            shape: GeneratorShape::default(),
            discriminator_hidden: 64,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_generator, self.lr_discriminator];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("GAN learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 || self.moment_samples == 0 {
            return Err(Error::Config("GAN batch size, log interval and moment samples must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.generator_ema_decay) {
            return Err(Error::Config("generator EMA decay must lie in [0, 1)".into()));
        }
        if self.r1_weight < 0.0 || !(0.0..1.0).contains(&self.w_bar_decay) {
            return Err(Error::Config("R1 weight must be >= 0 and w_bar decay in [0, 1)".into()));
        }
        let s = &self.shape;
        if s.z_dim == 0 || s.w_dim == 0 || s.scales == 0 || s.x_dim == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub moment_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mode: TrainerMode,
    pub entries: Vec<LogEntry>,
    /// Step at which adversarial training diverged, if it did.
    pub diverged_at: Option<usize>,
}

/// Encoder used by the reconstruction trainer: `x -> z`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    store: ParamStore,
    net: Mlp,
}

impl EncoderModel {
    pub fn new(shape: &GeneratorShape, rng: &mut Rng) -> EncoderModel {
        let mut store = ParamStore::new();
        let net = Mlp::init(&mut store, "encoder", &[shape.x_dim, shape.w_dim, shape.z_dim], Activation::LeakyRelu, rng);
        EncoderModel { store, net }
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let z = self.net.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(z).clone())
    }

    pub fn to_weights(&self) -> WeightsFile {
        WeightsFile::from_store("encoder", &self.store).with_meta(
            "config",
            json!({"x_dim": self.net.input_width(), "hidden": self.net.layers[0].fan_out, "z_dim": self.net.output_width()}),
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: GeneratorModel,
    pub discriminator: Option<DiscriminatorModel>,
    pub encoder: Option<EncoderModel>,
    pub log: TrainingLog,
}

/// `||mu_a - mu_b||_2 + ||diag(S_a) - diag(S_b)||_1`.
pub fn moment_distance(a: &Tensor, b: &Tensor) -> f64 {
    let (ma, va) = column_moments(a);
    let (mb, vb) = column_moments(b);
    let dm: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let dv: f64 = va.iter().zip(&vb).map(|(x, y)| (x - y).abs()).sum();
    dm + dv
}

/// Per-column mean and (population) variance.
pub fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (x.rows(), x.cols());
    let mut mean = vec![0.0; c];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; c];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    (mean, var)
}

fn normal_batch(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, rng.normals(n * d)).expect("finite normals")
}

fn real_batch(real: &Tensor, n: usize, rng: &mut Rng) -> Tensor {
    let idx: Vec<usize> = (0..n).map(|_| rng.below(real.rows())).collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| real.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).expect("consistent rows")
}

/// Squared input-gradient norm of the critic averaged over the batch, built
/// from taped ops so it can itself be differentiated with respect to the
/// critic weights. Activation derivatives enter as constant masks, which is
/// exact wherever the piecewise-linear activation is differentiable.
fn r1_penalty(tape: &mut Tape, net: &Mlp, bound: &[Var], preacts: &[Var], batch: usize) -> Result<Var> {
    let ones = tape.constant(Tensor::full(&[batch, 1], 1.0));
    let last = net.layers.last().unwrap();
    let wt = tape.transpose(bound[last.weight])?;
    let mut g = tape.matmul(ones, wt)?;
    for (layer, &pre) in net.layers.iter().zip(preacts).rev() {
        let mask = tape.value(pre).map(|v| if v > 0.0 { 1.0 } else { crate::ndcore::nn::LEAKY_SLOPE });
        let m = tape.constant(mask);
        g = tape.mul(g, m)?;
        let wt = tape.transpose(bound[layer.weight])?;
        g = tape.matmul(g, wt)?;
    }
    let sq = tape.l2_norm_sq(g)?;
    tape.scale(sq, 1.0 / batch as f64)
}

pub(crate) fn sample_batch(g: &GeneratorModel, n: usize, rng: &mut Rng) -> Result<Tensor> {
    let z = normal_batch(rng, n, g.shape.z_dim);
    let w = g.map_batch(&z)?;
    let stacks: Vec<StyleStack> = (0..n)
        .map(|i| StyleStack::shared(w.row(i).to_vec(), g.shape.scales))
        .collect();
    g.generate_batch(&stacks)
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            step,
            detail: format!("non-finite value in {op}"),
        },
        Error::NonFiniteGradient { index, name } => Error::Diverged {
            step,
            detail: format!("non-finite gradient for parameter {index} ({name})"),
        },
        other => other,
    }
}

fn check_loss(step: usize, which: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("{which} loss is {v}"),
        })
    }
}

fn bce_mean(tape: &mut Tape, logits: Var, target: f64) -> Result<Var> {
    let n = tape.value(logits).len();
    let t = Tensor::new(tape.value(logits).shape().to_vec(), vec![target; n])?;
    let l = tape.bce_with_logits(logits, &t)?;
    tape.mean(l)
}

/// Trains the generator on `real` (`[n, x_dim]`) in the configured mode.
///
/// Adversarial mode alternates one critic step (non-saturating loss plus
/// `r1_weight / 2` times the R1 penalty on the real batch) with one
/// generator step. When a loss turns non-finite and
/// `fallback_on_divergence` is set, training restarts in reconstruction
/// mode; otherwise the divergence is returned as an error.
pub fn train_gan(real: &Tensor, cfg: &GanTrainConfig, rng: &Rng) -> Result<TrainedGan> {
    cfg.validate()?;
    if real.rows() == 0 {
        return Err(Error::Validation("cannot train a generator on an empty dataset".into()));
    }
    if real.cols() != cfg.shape.x_dim {
        return Err(Error::Dimension {
            op: "train_gan",
            lhs: vec![cfg.shape.x_dim],
            rhs: vec![real.cols()],
        });
    }
    match cfg.mode {
        TrainerMode::Adversarial => match train_adversarial(real, cfg, rng) {
            Err(Error::Diverged { step, detail }) if cfg.fallback_on_divergence => {
                log::warn!("adversarial training diverged at step {step} ({detail}); using reconstruction fallback");
                let mut trained = train_reconstruction(real, cfg, rng)?;
                trained.log.diverged_at = Some(step);
                Ok(trained)
            }
            other => other,
        },
        TrainerMode::ReconstructionFallback => train_reconstruction(real, cfg, rng),
    }
}

fn log_entry(step: usize, d_loss: f64, g_loss: f64, g: &GeneratorModel, real: &Tensor, cfg: &GanTrainConfig, rng: &Rng) -> Result<LogEntry> {
    // a dedicated stream keeps the diagnostic from perturbing training draws
    let mut diag = rng.fork(rng.stream() + 1000 + step as u64);
    let fake = sample_batch(g, cfg.moment_samples, &mut diag)?;
    Ok(LogEntry {
        step,
        d_loss,
        g_loss,
        moment_distance: moment_distance(real, &fake),
    })
}

fn train_adversarial(real: &Tensor, cfg: &GanTrainConfig, rng: &Rng) -> Result<TrainedGan> {
    let mut init_rng = rng.fork(rng.stream() + 1);
    let mut g = GeneratorModel::new(cfg.shape, &mut init_rng);
    g.w_bar_mode = WBarMode::Ema(cfg.w_bar_decay);
    let mut d = DiscriminatorModel::new(cfg.shape.x_dim, cfg.discriminator_hidden, &mut init_rng);
    let mut draws = rng.fork(rng.stream() + 2);
    let mut opt_g = OptimState::adam(cfg.lr_generator)?.with_betas(cfg.adam_beta1, cfg.adam_beta2)?;
    let mut opt_d = OptimState::adam(cfg.lr_discriminator)?.with_betas(cfg.adam_beta1, cfg.adam_beta2)?;
    let g_names = g.params().names().to_vec();
    let d_names = d.params().names().to_vec();
    let b = cfg.batch_size;
    let mut entries = Vec::new();
    let (mut last_d, mut last_g) = (f64::NAN, f64::NAN);
    let ema_decay = cfg.generator_ema_decay;
    let mut ema: Vec<Tensor> = g.params().tensors().to_vec();

    for step in 0..=cfg.steps {
        if step == cfg.steps && ema_decay > 0.0 {
            for (p, e) in g.params_mut().tensors_mut().iter_mut().zip(&ema) {
                *p = e.clone();
            }
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            entries.push(log_entry(step, last_d, last_g, &g, real, cfg, rng).map_err(|e| diverged(step, e))?);
        }
        if step == cfg.steps {
            break;
        }
        // critic
        let xr = real_batch(real, b, &mut draws);
        let xf = sample_batch(&g, b, &mut draws).map_err(|e| diverged(step, e))?;
        let (d_loss, d_grads) = (|| -> Result<(f64, Vec<Tensor>)> {
            let mut tape = Tape::new();
            let bound = d.params().bind(&mut tape);
            let rv = tape.constant(xr);
            let fv = tape.constant(xf);
            let (lr, pre) = d.net.forward_with_preacts(&mut tape, &bound, rv)?;
            let lf = d.net.forward(&mut tape, &bound, fv)?;
            let a = bce_mean(&mut tape, lr, 1.0)?;
            let c = bce_mean(&mut tape, lf, 0.0)?;
            let mut loss = tape.add(a, c)?;
            if cfg.r1_weight > 0.0 {
                let r1 = r1_penalty(&mut tape, &d.net, &bound, &pre, b)?;
                let r1 = tape.scale(r1, cfg.r1_weight / 2.0)?;
                loss = tape.add(loss, r1)?;
            }
            let grads = tape.backward(loss)?;
            Ok((tape.value(loss).data()[0], ParamStore::collect_grads(&grads, &bound)))
        })()
        .map_err(|e| diverged(step, e))?;
        check_loss(step, "discriminator", d_loss)?;
        opt_d
            .step(d.params_mut().tensors_mut(), &d_grads, &d_names)
            .map_err(|e| diverged(step, e))?;

        // generator
        let z = normal_batch(&mut draws, b, cfg.shape.z_dim);
        let (g_loss, g_grads, w_mean) = (|| -> Result<(f64, Vec<Tensor>, Vec<f64>)> {
            let mut tape = Tape::new();
            let gb = g.params().bind(&mut tape);
            let db = d.params().bind_frozen(&mut tape);
            let zv = tape.constant(z);
            let w = g.map_on(&mut tape, &gb, zv)?;
            let styles = vec![w; cfg.shape.scales];
            let x = g.synthesize_on(&mut tape, &gb, &styles)?;
            let lf = d.net.forward(&mut tape, &db, x)?;
            let loss = bce_mean(&mut tape, lf, 1.0)?;
            let grads = tape.backward(loss)?;
            let (w_mean, _) = column_moments(tape.value(w));
            Ok((tape.value(loss).data()[0], ParamStore::collect_grads(&grads, &gb), w_mean))
        })()
        .map_err(|e| diverged(step, e))?;
        check_loss(step, "generator", g_loss)?;
        opt_g
            .step(g.params_mut().tensors_mut(), &g_grads, &g_names)
            .map_err(|e| diverged(step, e))?;
        if ema_decay > 0.0 {
            for (e, p) in ema.iter_mut().zip(g.params().tensors()) {
                *e = e.scale(ema_decay).add(&p.scale(1.0 - ema_decay))?;
            }
        }
        g.observe_w(&w_mean);
        last_d = d_loss;
        last_g = g_loss;
    }
    Ok(TrainedGan {
        generator: g,
        discriminator: Some(d),
        encoder: None,
        log: TrainingLog {
            mode: TrainerMode::Adversarial,
            entries,
            diverged_at: None,
        },
    })
}

/// Autoencoding trainer: reals are encoded to `z`, perturbed with latent
/// noise, mapped to `w` and decoded; the loss is the reconstruction error plus
/// a penalty pulling the batch moments of the encoded `z` toward the standard
/// normal so that prior samples decode to plausible records.
fn train_reconstruction(real: &Tensor, cfg: &GanTrainConfig, rng: &Rng) -> Result<TrainedGan> {
    let mut init_rng = rng.fork(rng.stream() + 1);
    let mut g = GeneratorModel::new(cfg.shape, &mut init_rng);
    g.w_bar_mode = WBarMode::Ema(cfg.w_bar_decay);
    let mut enc = EncoderModel::new(&cfg.shape, &mut init_rng);
    let mut draws = rng.fork(rng.stream() + 3);
    let mut opt_g = OptimState::adam(cfg.lr_generator)?;
    let mut opt_e = OptimState::adam(cfg.lr_generator)?;
    let g_names = g.params().names().to_vec();
    let e_names = enc.store.names().to_vec();
    let b = cfg.batch_size;
    let zd = cfg.shape.z_dim;
    let mut entries = Vec::new();
    let mut last = f64::NAN;

    for step in 0..=cfg.steps {
        if step % cfg.log_every == 0 || step == cfg.steps {
            entries.push(log_entry(step, f64::NAN, last, &g, real, cfg, rng)?);
        }
        if step == cfg.steps {
            break;
        }
        let xr = real_batch(real, b, &mut draws);
        let noise = normal_batch(&mut draws, b, cfg.shape.w_dim).scale(cfg.fallback_latent_noise);
        let mut tape = Tape::new();
        let gb = g.params().bind(&mut tape);
        let eb = enc.store.bind(&mut tape);
        let xv = tape.constant(xr);
        let z = enc.net.forward(&mut tape, &eb, xv)?;
        let w = g.map_on(&mut tape, &gb, z)?;
        let nv = tape.constant(noise);
        let wn = tape.add(w, nv)?;
        let styles = vec![wn; cfg.shape.scales];
        let x = g.synthesize_on(&mut tape, &gb, &styles)?;
        let diff = tape.sub(x, xv)?;
        let sq = tape.l2_norm_sq(diff)?;
        let recon = tape.scale(sq, 1.0 / (b * cfg.shape.x_dim) as f64)?;
        // batch moments of z via a averaging row vector
        let avg = tape.constant(Tensor::full(&[1, b], 1.0 / b as f64));
        let mean = tape.matmul(avg, z)?;
        let zz = tape.mul(z, z)?;
        let second = tape.matmul(avg, zz)?;
        let ones = tape.constant(Tensor::full(&[1, zd], 1.0));
        let excess = tape.sub(second, ones)?;
        let p1 = tape.l2_norm_sq(mean)?;
        let p2 = tape.l2_norm_sq(excess)?;
        let prior = tape.add(p1, p2)?;
        let prior = tape.scale(prior, cfg.fallback_prior_weight / zd as f64)?;
        let loss = tape.add(recon, prior)?;
        let lv = tape.value(loss).data()[0];
        check_loss(step, "reconstruction", lv)?;
        let grads = tape.backward(loss)?;
        let (w_mean, _) = column_moments(tape.value(w));
        opt_g.step(g.params_mut().tensors_mut(), &ParamStore::collect_grads(&grads, &gb), &g_names)?;
        opt_e.step(enc.store.tensors_mut(), &ParamStore::collect_grads(&grads, &eb), &e_names)?;
        g.observe_w(&w_mean);
        last = lv;
    }
    Ok(TrainedGan {
        generator: g,
        discriminator: None,
        encoder: Some(enc),
        log: TrainingLog {
            mode: TrainerMode::ReconstructionFallback,
            entries,
            diverged_at: None,
        },
    })
}

/// Draws `n` fakes: `z ~ N(0, I)` per sample (per scale when
/// `shared_styles` is false), mapped and decoded.
pub fn sample_fakes(n: usize, g: &GeneratorModel, rng: &mut Rng, shared_styles: bool) -> Result<Vec<(StyleStack, Vec<f64>)>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let scales = g.shape.scales;
    let per = if shared_styles { 1 } else { scales };
    let z = normal_batch(rng, n * per, g.shape.z_dim);
    let w = g.map_batch(&z)?;
    let stacks: Vec<StyleStack> = (0..n)
        .map(|i| {
            if shared_styles {
                StyleStack::shared(w.row(i).to_vec(), scales)
            } else {
                StyleStack {
                    styles: (0..scales).map(|s| w.row(i * scales + s).to_vec()).collect(),
                }
            }
        })
        .collect();
    let x = g.generate_batch(&stacks)?;
    Ok(stacks
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, x.row(i).to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_real(n: usize) -> Tensor {
        let mut rng = Rng::new(9, 9);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rng.normals(64)).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = GanTrainConfig {
            steps: 0,
            ..GanTrainConfig::default()
        };
        let rng = Rng::new(42, 5);
        let trained = train_gan(&toy_real(10), &cfg, &rng).unwrap();
        let fresh = GeneratorModel::new(cfg.shape, &mut rng.fork(rng.stream() + 1));
        assert_eq!(trained.generator.params(), fresh.params());
        assert_eq!(trained.log.entries.len(), 1);
    }

    #[test]
    fn empty_data_rejected() {
        let real = Tensor::new(vec![0, 64], vec![]).unwrap();
        assert!(train_gan(&real, &GanTrainConfig::default(), &Rng::new(0, 0)).is_err());
    }

    #[test]
    fn fakes_empty_and_deterministic() {
        let g = GeneratorModel::new(GeneratorShape::default(), &mut Rng::new(1, 1));
        assert!(sample_fakes(0, &g, &mut Rng::new(2, 2), true).unwrap().is_empty());
        let a = sample_fakes(5, &g, &mut Rng::new(2, 2), true).unwrap();
        let b = sample_fakes(5, &g, &mut Rng::new(2, 2), true).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(s, x)| s.is_shared() && x.len() == 64));
        let mixed = sample_fakes(3, &g, &mut Rng::new(2, 2), false).unwrap();
        assert!(mixed.iter().all(|(s, _)| !s.is_shared()));
    }

    #[test]
    fn moment_distance_of_identical_sets_is_zero() {
        let x = toy_real(20);
        assert_eq!(moment_distance(&x, &x), 0.0);
    }

    #[test]
    fn short_runs_stay_finite() {
        for mode in [TrainerMode::Adversarial, TrainerMode::ReconstructionFallback] {
            let cfg = GanTrainConfig {
                steps: 20,
                batch_size: 16,
                log_every: 10,
                moment_samples: 64,
                mode,
                ..GanTrainConfig::default()
            };
            let t = train_gan(&toy_real(50), &cfg, &Rng::new(1, 0)).unwrap();
            assert_eq!(t.log.mode, mode);
            assert_eq!(t.log.entries.len(), 3);
            assert!(t.log.entries.iter().all(|e| e.moment_distance.is_finite()));
            assert!(t.generator.w_bar().is_some());
        }
    }
}
