use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latentfair::pipeline::{render_outputs, run_all, run_single, Context, ExperimentConfig, RunOptions, Stage};
use latentfair::Error;

#[derive(Parser)]
#[command(name = "latentfair", version, about = "Latent-space augmentation for subgroup fairness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse stages whose artifacts are intact.
    #[arg(long)]
    resume: bool,
    /// Continue when augmentation falls short of the plan.
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Disease,
    Subgroup,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Image,
    Latent,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Baseline,
    Adapted,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage end to end.
    Run(Common),
    Synth(Common),
    TrainGen(Common),
    /// Train the image-space or style-space classifiers. Both targets are
    /// trained together; `--target` is accepted for symmetry.
    TrainClf {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        #[arg(long, value_enum)]
        space: SpaceArg,
    },
    Traverse(Common),
    Augment(Common),
    TrainDiag {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: VariantArg,
    },
    Evaluate(Common),
    /// Re-render metrics and report from saved predictions.
    Report(Common),
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

fn context(c: &Common) -> latentfair::Result<Context> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    Context::new(
        cfg,
        RunOptions {
            resume: c.resume,
            allow_partial: c.allow_partial,
        },
    )
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::PartialAugmentation { .. } => EXIT_PARTIAL,
        Error::Stage { source, .. } if matches!(**source, Error::PartialAugmentation { .. }) => EXIT_PARTIAL,
        Error::Stage { source, .. } if matches!(**source, Error::Config(_)) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, stages): (&Common, Vec<Stage>) = match &cli.command {
        Command::Run(c) => (c, Vec::new()),
        Command::Synth(c) => (c, vec![Stage::Synth]),
        Command::TrainGen(c) => (c, vec![Stage::TrainGen]),
        Command::TrainClf { common, space, .. } => (
            common,
            vec![match space {
                SpaceArg::Image => Stage::TrainClfImage,
                SpaceArg::Latent => Stage::TrainClfLatent,
            }],
        ),
        Command::Traverse(c) => (c, vec![Stage::Traverse]),
        Command::Augment(c) => (c, vec![Stage::Augment]),
        Command::TrainDiag { common, variant } => (
            common,
            vec![match variant {
                VariantArg::Baseline => Stage::TrainDiagBaseline,
                VariantArg::Adapted => Stage::TrainDiagAdapted,
            }],
        ),
        Command::Evaluate(c) => (c, vec![Stage::Evaluate]),
        Command::Report(c) => (c, Vec::new()),
    };
    let ctx = match context(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let result = match &cli.command {
        Command::Run(_) => run_all(&ctx).map(|_| ()),
        Command::Report(_) => render_outputs(&ctx).map(|_| ()),
        _ => stages.iter().try_for_each(|s| run_single(&ctx, *s).map(|_| ())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
