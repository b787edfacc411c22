//! Stage-wise experiment orchestration with persisted artifacts.
//!
//! Every stage reads its inputs from the output directory and writes its
//! outputs there, so any stage can be rerun on its own. The manifest
//! records digests of everything written; `resume` skips a stage whose
//! artifacts are intact, and rerunning a stage invalidates all later ones.

pub mod augment;
pub mod config;
pub mod manifest;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde_json::json;

use crate::classify::{label_samples, train_image_classifier, train_latent_classifier, ClassifierModel, Target};
use crate::csvio::{fmt_f64, Table};
use crate::error::{Error, Result};
use crate::fairmetrics::BootstrapSettings;
use crate::ndcore::{Rng, Tensor};
use crate::stylegen::{sample_fakes, train_gan, GeneratorModel, TrainerMode};
use crate::synthgen::{
    gen_population, read_dataset, write_dataset, write_factors, FeatureRecord, MixingModel, Source, Subgroup,
};
use crate::traverse::{read_trajectories, write_trajectories, LatentClassifiers, Trajectory};
use crate::weights::WeightsFile;

pub use augment::{augment, plan_augmentation, run_traversals, AugmentationPlan, CellRun, TraversalStack};
pub use config::{AugmentationConfig, AugmentationPolicy, ExperimentConfig};
pub use manifest::{digest_file, RunManifest, StageOutcome, StageRecord, MANIFEST_FILE};
pub use report::{evaluate_predictions, gap_table, metrics_table, render_report, summarize_trajectories, TraversalSummary};

const STREAM_SYNTH: u64 = 100;
const STREAM_GAN: u64 = 200;
const STREAM_CLF_IMAGE: u64 = 300;
const STREAM_LATENT_SAMPLES: u64 = 400;
const STREAM_CLF_LATENT: u64 = 500;
const STREAM_STARTERS: u64 = 600;
const STREAM_DIAGNOSTIC: u64 = 700;
const BOOTSTRAP_SEED_SALT: u64 = 0x5eed_b007;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    TrainGen,
    TrainClfImage,
    TrainClfLatent,
    Traverse,
    Augment,
    TrainDiagBaseline,
    TrainDiagAdapted,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::TrainGen,
        Stage::TrainClfImage,
        Stage::TrainClfLatent,
        Stage::Traverse,
        Stage::Augment,
        Stage::TrainDiagBaseline,
        Stage::TrainDiagAdapted,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainGen => "train-gen",
            Stage::TrainClfImage => "train-clf-image",
            Stage::TrainClfLatent => "train-clf-latent",
            Stage::Traverse => "traverse",
            Stage::Augment => "augment",
            Stage::TrainDiagBaseline => "train-diag-baseline",
            Stage::TrainDiagAdapted => "train-diag-adapted",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub resume: bool,
    pub allow_partial: bool,
}

/// Artifact file names.
pub mod files {
    pub const TRAIN: &str = "dataset_train.csv";
    pub const TEST: &str = "dataset_test.csv";
    pub const LEFTOVER: &str = "dataset_leftover.csv";
    pub const AUGMENTED: &str = "dataset_augmented.csv";
    pub const FACTORS_TRAIN: &str = "factors_train.csv";
    pub const FACTORS_TEST: &str = "factors_test.csv";
    pub const FACTORS_LEFTOVER: &str = "factors_leftover.csv";
    pub const MIXING: &str = "model_mixing.json";
    pub const GENERATOR: &str = "model_generator.json";
    pub const DISCRIMINATOR: &str = "model_discriminator.json";
    pub const ENCODER: &str = "model_encoder.json";
    pub const GAN_LOG: &str = "gan_log.csv";
    pub const TRAJECTORIES: &str = "trajectories.csv";
    pub const PLAN: &str = "plan.json";
    pub const AUGMENTATION: &str = "augmentation.json";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const METRICS: &str = "metrics.csv";
    pub const GAP: &str = "gap.csv";
    pub const REPORT: &str = "report.md";

    pub fn clf(space: &str, target: &str) -> String {
        format!("model_clf_{space}_{target}.json")
    }

    pub fn diag(variant: &str) -> String {
        format!("model_diag_{variant}.json")
    }
}

/// Configuration and output directory shared by all stages.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    pub options: RunOptions,
}

impl Context {
    pub fn new(config: ExperimentConfig, options: RunOptions) -> Result<Context> {
        config.validate()?;
        let dir = config.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Context { config, dir, options })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn rng(&self, stream: u64) -> Rng {
        Rng::new(self.config.seed, stream)
    }

    fn read(&self, name: &str) -> Result<Vec<FeatureRecord>> {
        read_dataset(&self.path(name))
    }

    fn model(&self, name: &str) -> Result<WeightsFile> {
        WeightsFile::load(&self.path(name))
    }

    pub fn generator(&self) -> Result<GeneratorModel> {
        GeneratorModel::from_weights(&self.model(files::GENERATOR)?)
    }

    pub fn classifier(&self, name: &str) -> Result<ClassifierModel> {
        ClassifierModel::from_weights(&self.model(name)?)
    }

    pub fn trainer_mode(&self) -> Result<String> {
        let w = self.model(files::GENERATOR)?;
        Ok(w.meta("trainer_mode")?.as_str().unwrap_or("unknown").to_string())
    }

    pub fn plan(&self, name: &str) -> Result<AugmentationPlan> {
        let p = self.path(name);
        AugmentationPlan::from_json(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
    }

    /// Trajectories with each one's subgroup restored from the plan.
    pub fn trajectories(&self, plan: &AugmentationPlan) -> Result<Vec<Trajectory>> {
        let shape = self.generator()?.shape;
        let mut trajs = read_trajectories(
            &self.path(files::TRAJECTORIES),
            &shape,
            Subgroup::AfricanAmerican,
            &self.config.traversal,
        )?;
        for t in &mut trajs {
            t.subgroup = plan.subgroup_of(t.starter_id).ok_or_else(|| {
                Error::Validation(format!("starter {} is not covered by the plan", t.starter_id))
            })?;
        }
        Ok(trajs)
    }

    fn bootstrap(&self) -> BootstrapSettings {
        BootstrapSettings {
            replicates: self.config.bootstrap_replicates,
            seed: self.config.seed ^ BOOTSTRAP_SEED_SALT,
        }
    }

    fn write_json(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

fn stage_synth(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let mut rng = ctx.rng(STREAM_SYNTH);
    let mixing = MixingModel::new(&cfg.mixing, &mut rng)?;
    let cohort = gen_population(&cfg.cells, &mixing, &cfg.factors, &rng);
    write_dataset(&ctx.path(files::TRAIN), &cohort.train.records)?;
    write_dataset(&ctx.path(files::TEST), &cohort.test.records)?;
    write_dataset(&ctx.path(files::LEFTOVER), &cohort.leftover.records)?;
    write_factors(&ctx.path(files::FACTORS_TRAIN), &cohort.train.factors)?;
    write_factors(&ctx.path(files::FACTORS_TEST), &cohort.test.factors)?;
    write_factors(&ctx.path(files::FACTORS_LEFTOVER), &cohort.leftover.factors)?;
    mixing.to_weights().save(&ctx.path(files::MIXING))?;
    Ok([
        files::TRAIN,
        files::TEST,
        files::LEFTOVER,
        files::FACTORS_TRAIN,
        files::FACTORS_TEST,
        files::FACTORS_LEFTOVER,
        files::MIXING,
    ]
    .map(String::from)
    .to_vec())
}

fn features(records: &[FeatureRecord]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
    Tensor::from_rows(&rows)
}

fn mode_name(mode: TrainerMode) -> String {
    serde_json::to_value(mode)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn stage_train_gen(ctx: &Context) -> Result<Vec<String>> {
    let train = ctx.read(files::TRAIN)?;
    let trained = train_gan(&features(&train)?, &ctx.config.gan, &ctx.rng(STREAM_GAN))?;
    let mode = mode_name(trained.log.mode);
    info!("generator trained in {mode} mode");
    trained
        .generator
        .to_weights()
        .with_meta("trainer_mode", json!(mode))
        .with_meta("diverged_at", json!(trained.log.diverged_at))
        .save(&ctx.path(files::GENERATOR))?;
    let mut out = vec![files::GENERATOR.to_string()];
    if let Some(d) = &trained.discriminator {
        d.to_weights().save(&ctx.path(files::DISCRIMINATOR))?;
        out.push(files::DISCRIMINATOR.into());
    }
    if let Some(e) = &trained.encoder {
        e.to_weights().save(&ctx.path(files::ENCODER))?;
        out.push(files::ENCODER.into());
    }
    let mut log = Table::new(
        ["step", "d_loss", "g_loss", "moment_distance"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    // Losses are undefined before the first step.
    let loss = |v: f64| if v.is_nan() { "NA".to_string() } else { fmt_f64(v) };
    for e in &trained.log.entries {
        log.push(vec![e.step.to_string(), loss(e.d_loss), loss(e.g_loss), fmt_f64(e.moment_distance)]);
    }
    log.write(&ctx.path(files::GAN_LOG))?;
    out.push(files::GAN_LOG.into());
    Ok(out)
}

fn stage_train_clf_image(ctx: &Context) -> Result<Vec<String>> {
    let train = ctx.read(files::TRAIN)?;
    let mut out = Vec::new();
    for (i, target) in [Target::Disease, Target::Subgroup].into_iter().enumerate() {
        let m = train_image_classifier(&train, target, &ctx.config.image_classifier, &ctx.rng(STREAM_CLF_IMAGE + 10 * i as u64))?;
        let name = files::clf("image", target.name());
        m.to_weights("classifier").save(&ctx.path(&name))?;
        out.push(name);
    }
    Ok(out)
}

fn stage_train_clf_latent(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let g = ctx.generator()?;
    let layout = cfg.traversal.mode;
    let shared = layout == crate::stylegen::StyleLayout::Shared;
    let fakes = sample_fakes(cfg.latent_samples, &g, &mut ctx.rng(STREAM_LATENT_SAMPLES), shared)?;
    let mut out = Vec::new();
    for (i, target) in [Target::Disease, Target::Subgroup].into_iter().enumerate() {
        let image = ctx.classifier(&files::clf("image", target.name()))?;
        let set = label_samples(&fakes, &image)?;
        info!("latent {} labels: positive fraction {:.3}", target.name(), set.positive_fraction());
        let m = train_latent_classifier(&set, layout, &cfg.latent_classifier, &ctx.rng(STREAM_CLF_LATENT + 10 * i as u64))?;
        if let Some(acc) = m.validation_accuracy {
            info!("latent {} classifier validation accuracy {acc:.3}", target.name());
        }
        let name = files::clf("latent", target.name());
        m.to_weights("classifier").save(&ctx.path(&name))?;
        out.push(name);
    }
    Ok(out)
}

fn stage_traverse(ctx: &Context) -> Result<Vec<String>> {
    let cfg = &ctx.config;
    let train = ctx.read(files::TRAIN)?;
    let g = ctx.generator()?;
    let d = ctx.classifier(&files::clf("latent", "disease"))?;
    let s = ctx.classifier(&files::clf("latent", "subgroup"))?;
    let stack = TraversalStack {
        generator: &g,
        classifiers: LatentClassifiers::new(&d, &s)?,
        config: &cfg.traversal,
        criteria: &cfg.starters,
    };
    let mut plan = plan_augmentation(&crate::synthgen::CellTable::of(&train), &cfg.augmentation.policy);
    let trajs = run_traversals(&mut plan, &stack, cfg.augmentation.max_starters, &mut ctx.rng(STREAM_STARTERS))?;
    write_trajectories(&ctx.path(files::TRAJECTORIES), &trajs, &g.shape)?;
    ctx.write_json(files::PLAN, &plan.to_json()?)?;
    Ok(vec![files::TRAJECTORIES.into(), files::PLAN.into()])
}

fn stage_augment(ctx: &Context) -> Result<Vec<String>> {
    let train = ctx.read(files::TRAIN)?;
    let mut plan = ctx.plan(files::PLAN)?;
    let trajs = ctx.trajectories(&plan)?;
    let g = ctx.generator()?;
    // Synthetic ids continue after every real record of the cohort.
    let first_id = ctx.config.cells.train.total() + ctx.config.cells.test.total() + ctx.config.cells.leftover.total();
    let out = augment(&train, &mut plan, &trajs, &g, first_id as u64, ctx.options.allow_partial)?;
    write_dataset(&ctx.path(files::AUGMENTED), &out)?;
    ctx.write_json(files::AUGMENTATION, &plan.to_json()?)?;
    Ok(vec![files::AUGMENTED.into(), files::AUGMENTATION.into()])
}

/// Both variants share the config and rng stream; only the data differs.
pub fn train_diagnostic(train: &[FeatureRecord], cfg: &crate::classify::ClassifierConfig, rng: &Rng) -> Result<ClassifierModel> {
    train_image_classifier(train, Target::Disease, cfg, rng)
}

fn stage_train_diag(ctx: &Context, variant: &str) -> Result<Vec<String>> {
    let data = ctx.read(if variant == "baseline" { files::TRAIN } else { files::AUGMENTED })?;
    let m = train_diagnostic(&data, &ctx.config.diagnostic, &ctx.rng(STREAM_DIAGNOSTIC))?;
    let name = files::diag(variant);
    m.to_weights("classifier")
        .with_meta("variant", json!(variant))
        .with_meta("config", json!(ctx.config.diagnostic))
        .save(&ctx.path(&name))?;
    Ok(vec![name])
}

fn real_only(records: &[FeatureRecord], name: &str) -> Result<()> {
    if records.iter().any(|r| r.source != Source::Real) {
        return Err(Error::Validation(format!("{name} contains synthetic records")));
    }
    Ok(())
}

fn stage_evaluate(ctx: &Context) -> Result<Vec<String>> {
    let test = ctx.read(files::TEST)?;
    let leftover = ctx.read(files::LEFTOVER)?;
    real_only(&test, "test partition")?;
    real_only(&leftover, "leftover partition")?;
    let base = ctx.classifier(&files::diag("baseline"))?;
    let adapt = ctx.classifier(&files::diag("adapted"))?;
    let preds = report::predict(&base, &adapt, &test, &leftover)?;
    preds.write(&ctx.path(files::PREDICTIONS))?;
    let mut out = vec![files::PREDICTIONS.to_string()];
    out.extend(render_outputs(ctx)?);
    Ok(out)
}

/// Recomputes metrics, gap table and report from saved predictions.
pub fn render_outputs(ctx: &Context) -> Result<Vec<String>> {
    let path = ctx.path(files::PREDICTIONS);
    let preds = Table::read(&path)?;
    let gap = evaluate_predictions(&preds, ctx.bootstrap(), &path)?;
    metrics_table(&gap).write(&ctx.path(files::METRICS))?;
    gap_table(&gap).write(&ctx.path(files::GAP))?;
    let plan = ctx.plan(files::AUGMENTATION)?;
    let summary = summarize_trajectories(&ctx.trajectories(&plan)?);
    let mode = ctx.trainer_mode()?;
    let md = render_report(
        &gap,
        &report::ReportContext {
            seed: ctx.config.seed,
            trainer_mode: &mode,
            plan: &plan,
            traversal: &summary,
        },
    );
    let p = ctx.path(files::REPORT);
    std::fs::write(&p, md).map_err(|e| Error::io(&p, e))?;
    Ok([files::METRICS, files::GAP, files::REPORT].map(String::from).to_vec())
}

pub fn run_stage(ctx: &Context, stage: Stage) -> Result<Vec<String>> {
    match stage {
        Stage::Synth => stage_synth(ctx),
        Stage::TrainGen => stage_train_gen(ctx),
        Stage::TrainClfImage => stage_train_clf_image(ctx),
        Stage::TrainClfLatent => stage_train_clf_latent(ctx),
        Stage::Traverse => stage_traverse(ctx),
        Stage::Augment => stage_augment(ctx),
        Stage::TrainDiagBaseline => stage_train_diag(ctx, "baseline"),
        Stage::TrainDiagAdapted => stage_train_diag(ctx, "adapted"),
        Stage::Evaluate => stage_evaluate(ctx),
    }
}

fn remove_artifacts(manifest: &RunManifest, stage: Stage, dir: &Path) {
    if let Some(rec) = manifest.stage(stage.name()) {
        for a in &rec.artifacts {
            let _ = std::fs::remove_file(dir.join(a));
        }
    }
}

fn existing_manifest(ctx: &Context) -> Option<RunManifest> {
    RunManifest::load(&ctx.dir).ok().filter(|m| m.config == ctx.config)
}

/// Runs `stage` and records it in the manifest, wrapping failures with the
/// stage name and its expected output directory.
pub fn execute(ctx: &Context, manifest: &mut RunManifest, stage: Stage) -> Result<()> {
    remove_artifacts(manifest, stage, &ctx.dir);
    let start = Instant::now();
    info!("stage {} started", stage.name());
    let result = run_stage(ctx, stage);
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(artifacts) => {
            info!("stage {} finished in {secs:.1}s", stage.name());
            manifest.record(
                StageRecord {
                    name: stage.name().into(),
                    outcome: StageOutcome::Completed,
                    wall_clock_secs: secs,
                    artifacts,
                    error: None,
                },
                &ctx.dir,
            )?;
            manifest.save(&ctx.dir)
        }
        Err(e) => {
            manifest.record(
                StageRecord {
                    name: stage.name().into(),
                    outcome: StageOutcome::Failed,
                    wall_clock_secs: secs,
                    artifacts: Vec::new(),
                    error: Some(e.to_string()),
                },
                &ctx.dir,
            )?;
            manifest.save(&ctx.dir)?;
            Err(Error::Stage {
                stage: stage.name().into(),
                artifacts: vec![ctx.dir.clone()],
                source: Box::new(e),
            })
        }
    }
}

/// Runs a single stage against an existing output directory, keeping the
/// manifest records of the other stages.
pub fn run_single(ctx: &Context, stage: Stage) -> Result<RunManifest> {
    let mut manifest = existing_manifest(ctx).unwrap_or_else(|| RunManifest::new(ctx.config.clone()));
    execute(ctx, &mut manifest, stage)?;
    Ok(manifest)
}

/// Executes every stage in order. With `resume`, leading stages whose
/// artifacts are intact are reused; the first rerun stage forces all later
/// stages to run.
pub fn run_all(ctx: &Context) -> Result<RunManifest> {
    let previous = if ctx.options.resume { existing_manifest(ctx) } else { None };
    if previous.is_none() {
        if let Ok(stale) = RunManifest::load(&ctx.dir) {
            for a in stale.artifacts.keys() {
                let _ = std::fs::remove_file(ctx.dir.join(a));
            }
        }
    }
    let mut manifest = RunManifest::new(ctx.config.clone());
    let mut reuse = previous.is_some();
    for stage in Stage::ALL {
        if reuse {
            let prev = previous.as_ref().expect("resume manifest");
            if prev.stage_intact(stage.name(), &ctx.dir) {
                info!("stage {} reused", stage.name());
                let mut rec = prev.stage(stage.name()).expect("intact stage").clone();
                rec.outcome = StageOutcome::Reused;
                rec.wall_clock_secs = 0.0;
                manifest.record(rec, &ctx.dir)?;
                continue;
            }
            reuse = false;
            for later in Stage::ALL.iter().skip_while(|s| **s != stage) {
                remove_artifacts(prev, *later, &ctx.dir);
            }
        }
        execute(ctx, &mut manifest, stage)?;
    }
    Ok(manifest)
}
