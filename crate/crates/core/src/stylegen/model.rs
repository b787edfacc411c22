use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ndcore::{Activation, Dense, Mlp, ParamStore, Rng, Tape, Tensor, Var};
use crate::weights::WeightsFile;

pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorShape {
    pub z_dim: usize,
    pub w_dim: usize,
    pub scales: usize,
    pub x_dim: usize,
}

impl Default for GeneratorShape {
    fn default() -> Self {
        GeneratorShape {
            z_dim: 16,
            w_dim: 32,
            scales: 2,
            x_dim: 64,
        }
    }
}

/// How the running mean style is updated by [`GeneratorModel::map_training`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WBarMode {
    /// Arithmetic mean of every observed style.
    Cumulative,
    /// `w_bar <- decay * w_bar + (1 - decay) * w`.
    Ema(f64),
}

/// Per-scale style vectors `{w_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleStack {
    pub styles: Vec<Vec<f64>>,
}

/// Which coordinates a latent classifier or traversal sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StyleLayout {
    /// One `w` broadcast to every scale.
    #[serde(rename = "shared-w")]
    Shared,
    /// All `w_i` concatenated.
    #[serde(rename = "per-scale")]
    PerScale,
}

impl StyleLayout {
    pub fn width(self, shape: &GeneratorShape) -> usize {
        match self {
            StyleLayout::Shared => shape.w_dim,
            StyleLayout::PerScale => shape.w_dim * shape.scales,
        }
    }
}

impl StyleStack {
    pub fn shared(w: Vec<f64>, scales: usize) -> StyleStack {
        StyleStack {
            styles: vec![w; scales],
        }
    }

    pub fn scales(&self) -> usize {
        self.styles.len()
    }

    pub fn is_shared(&self) -> bool {
        self.styles.windows(2).all(|p| p[0] == p[1])
    }

    /// Flat coordinates under `layout`. In shared layout this is `w_1`.
    pub fn flatten(&self, layout: StyleLayout) -> Vec<f64> {
        match layout {
            StyleLayout::Shared => self.styles[0].clone(),
            StyleLayout::PerScale => self.styles.concat(),
        }
    }

    pub fn from_flat(flat: &[f64], layout: StyleLayout, shape: &GeneratorShape) -> Result<StyleStack> {
        let want = layout.width(shape);
        if flat.len() != want {
            return Err(Error::Dimension {
                op: "style stack",
                lhs: vec![want],
                rhs: vec![flat.len()],
            });
        }
        Ok(match layout {
            StyleLayout::Shared => StyleStack::shared(flat.to_vec(), shape.scales),
            StyleLayout::PerScale => StyleStack {
                styles: flat.chunks(shape.w_dim).map(<[f64]>::to_vec).collect(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    gamma: Dense,
    beta: Dense,
    dense: Dense,
}

/// Mapping network `z -> w` plus a multi-scale synthesis network in which
/// every block normalizes its input per vector and re-modulates it with a
/// scale `gamma_i` and shift `beta_i` computed from that block's own `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub shape: GeneratorShape,
    store: ParamStore,
    mapping: Mlp,
    seed: usize,
    blocks: Vec<Block>,
    head: Dense,
    w_bar: Option<Vec<f64>>,
    w_bar_count: u64,
    pub w_bar_mode: WBarMode,
}

impl GeneratorModel {
    pub fn new(shape: GeneratorShape, rng: &mut Rng) -> GeneratorModel {
        let mut store = ParamStore::new();
        let h = shape.w_dim;
        let mapping = Mlp::init(
            &mut store,
            "mapping",
            &[shape.z_dim, shape.w_dim, shape.w_dim],
            Activation::LeakyRelu,
            rng,
        );
        let seed = store.add("synthesis.seed", Tensor::vector(rng.normals(h)));
        let blocks = (0..shape.scales)
            .map(|i| {
                let gamma = Dense::init(&mut store, &format!("synthesis.{i}.gamma"), shape.w_dim, h, rng);
                for v in store.get_mut(gamma.bias).data_mut() {
                    *v = 1.0;
                }
                let beta = Dense::init(&mut store, &format!("synthesis.{i}.beta"), shape.w_dim, h, rng);
                let dense = Dense::init(&mut store, &format!("synthesis.{i}.dense"), h, h, rng);
                Block { gamma, beta, dense }
            })
            .collect();
        let head = Dense::init(&mut store, "synthesis.head", h, shape.x_dim, rng);
        GeneratorModel {
            shape,
            store,
            mapping,
            seed,
            blocks,
            head,
            w_bar: None,
            w_bar_count: 0,
            w_bar_mode: WBarMode::Cumulative,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn w_bar(&self) -> Option<&[f64]> {
        self.w_bar.as_deref()
    }

    pub fn set_w_bar(&mut self, w: Vec<f64>) {
        self.w_bar = Some(w);
        self.w_bar_count = self.w_bar_count.max(1);
    }

    /// Indices of the mapping-network parameters in [`GeneratorModel::params`].
    pub fn mapping_param_indices(&self) -> Vec<usize> {
        self.mapping.layers.iter().flat_map(|d| [d.weight, d.bias]).collect()
    }

    /// Maps a batch `[n, z_dim]` to styles `[n, w_dim]` on a tape.
    pub fn map_on(&self, tape: &mut Tape, bound: &[Var], z: Var) -> Result<Var> {
        self.mapping.forward(tape, bound, z)
    }

    /// Synthesizes a batch from one `[n, w_dim]` style per scale.
    pub fn synthesize_on(&self, tape: &mut Tape, bound: &[Var], styles: &[Var]) -> Result<Var> {
        if styles.len() != self.blocks.len() {
            return Err(Error::Contract(format!(
                "generator has {} scales but {} styles were given",
                self.blocks.len(),
                styles.len()
            )));
        }
        let n = tape.value(styles[0]).rows();
        let zeros = tape.constant(Tensor::zeros(&[n, self.shape.w_dim]));
        let mut h = tape.add_bias(zeros, bound[self.seed])?;
        for (block, &w) in self.blocks.iter().zip(styles) {
            let normed = tape.row_norm(h, NORM_EPS)?;
            let gamma = block.gamma.forward(tape, bound, w)?;
            let beta = block.beta.forward(tape, bound, w)?;
            let scaled = tape.mul(gamma, normed)?;
            let modulated = tape.add(scaled, beta)?;
            let d = block.dense.forward(tape, bound, modulated)?;
            h = tape.relu(d)?;
        }
        self.head.forward(tape, bound, h)
    }

    pub fn map_batch(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let w = self.map_on(&mut tape, &bound, zv)?;
        Ok(tape.value(w).clone())
    }

    /// Deterministic `z -> w`.
    pub fn map(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.shape.z_dim {
            return Err(Error::Dimension {
                op: "map",
                lhs: vec![self.shape.z_dim],
                rhs: vec![z.len()],
            });
        }
        Ok(self.map_batch(&Tensor::matrix(1, z.len(), z.to_vec())?)?.into_data())
    }

    /// [`GeneratorModel::map`] that also folds `w` into the running mean style.
    pub fn map_training(&mut self, z: &[f64]) -> Result<Vec<f64>> {
        let w = self.map(z)?;
        self.observe_w(&w);
        Ok(w)
    }

    pub(crate) fn observe_w(&mut self, w: &[f64]) {
        self.w_bar_count += 1;
        match (&mut self.w_bar, self.w_bar_mode) {
            (None, _) => self.w_bar = Some(w.to_vec()),
            (Some(bar), WBarMode::Cumulative) => {
                let k = self.w_bar_count as f64;
                for (b, v) in bar.iter_mut().zip(w) {
                    *b += (v - *b) / k;
                }
            }
            (Some(bar), WBarMode::Ema(decay)) => {
                for (b, v) in bar.iter_mut().zip(w) {
                    *b = decay * *b + (1.0 - decay) * v;
                }
            }
        }
    }

    fn check_stack(&self, stack: &StyleStack) -> Result<()> {
        if stack.scales() != self.shape.scales {
            return Err(Error::Contract(format!(
                "style stack has {} scales, generator needs {}",
                stack.scales(),
                self.shape.scales
            )));
        }
        if let Some(bad) = stack.styles.iter().find(|w| w.len() != self.shape.w_dim) {
            return Err(Error::Dimension {
                op: "generate",
                lhs: vec![self.shape.w_dim],
                rhs: vec![bad.len()],
            });
        }
        Ok(())
    }

    pub fn generate_batch(&self, stacks: &[StyleStack]) -> Result<Tensor> {
        if stacks.is_empty() {
            return Tensor::new(vec![0, self.shape.x_dim], vec![]);
        }
        for s in stacks {
            self.check_stack(s)?;
        }
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let styles: Vec<Var> = (0..self.shape.scales)
            .map(|i| {
                let rows: Vec<Vec<f64>> = stacks.iter().map(|s| s.styles[i].clone()).collect();
                Ok(tape.constant(Tensor::from_rows(&rows)?))
            })
            .collect::<Result<_>>()?;
        let x = self.synthesize_on(&mut tape, &bound, &styles)?;
        Ok(tape.value(x).clone())
    }

    /// Decodes one style stack into a feature vector.
    pub fn generate(&self, stack: &StyleStack) -> Result<Vec<f64>> {
        Ok(self.generate_batch(std::slice::from_ref(stack))?.into_data())
    }

    /// `w' = w_bar + psi (w - w_bar)`.
    pub fn truncate(&self, w: &[f64], psi: f64) -> Result<Vec<f64>> {
        let bar = self
            .w_bar
            .as_ref()
            .ok_or_else(|| Error::State("mean style is not populated".into()))?;
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::Validation(format!("truncation psi {psi} outside [0, 1]")));
        }
        Ok(bar.iter().zip(w).map(|(b, v)| b + psi * (v - b)).collect())
    }

    /// Copy in which the given blocks (all when `None`) modulate with
    /// `gamma = 1, beta = 0` regardless of their style.
    pub fn with_identity_modulation(&self, block: Option<usize>) -> GeneratorModel {
        let mut m = self.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            if block.is_some_and(|k| k != i) {
                continue;
            }
            for (idx, fill) in [(b.gamma.weight, 0.0), (b.gamma.bias, 1.0), (b.beta.weight, 0.0), (b.beta.bias, 0.0)] {
                for v in m.store.get_mut(idx).data_mut() {
                    *v = fill;
                }
            }
        }
        m
    }

    pub fn to_weights(&self) -> WeightsFile {
        WeightsFile::from_store("generator", &self.store)
            .with_meta("w_bar", json!(self.w_bar))
            .with_meta("w_bar_count", json!(self.w_bar_count))
            .with_meta("config", json!(self.shape))
    }

    pub fn from_weights(w: &WeightsFile) -> Result<GeneratorModel> {
        w.expect_kind("generator")?;
        let shape: GeneratorShape = serde_json::from_value(w.meta("config")?.clone())?;
        let mut m = GeneratorModel::new(shape, &mut Rng::new(0, 0));
        m.store.load(w.tensors()?)?;
        m.w_bar = serde_json::from_value(w.meta("w_bar")?.clone())?;
        m.w_bar_count = w.meta("w_bar_count")?.as_u64().unwrap_or(0);
        Ok(m)
    }
}

/// Real/fake critic: MLP `x_dim -> 32 -> 1` with leaky relu.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    store: ParamStore,
    pub net: Mlp,
}

impl DiscriminatorModel {
    pub fn new(x_dim: usize, hidden: usize, rng: &mut Rng) -> DiscriminatorModel {
        let mut store = ParamStore::new();
        let net = Mlp::init(&mut store, "critic", &[x_dim, hidden, 1], Activation::LeakyRelu, rng);
        DiscriminatorModel { store, net }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.net.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn to_weights(&self) -> WeightsFile {
        WeightsFile::from_store("discriminator", &self.store).with_meta(
            "config",
            json!({"x_dim": self.net.input_width(), "hidden": self.net.layers[0].fan_out}),
        )
    }

    pub fn from_weights(w: &WeightsFile) -> Result<DiscriminatorModel> {
        w.expect_kind("discriminator")?;
        let cfg = w.meta("config")?;
        let dim = |k: &str| {
            cfg.get(k)
                .and_then(serde_json::Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Validation(format!("discriminator config missing {k}")))
        };
        let mut d = DiscriminatorModel::new(dim("x_dim")?, dim("hidden")?, &mut Rng::new(0, 0));
        d.store.load(w.tensors()?)?;
        Ok(d)
    }
}
