//! `pdscreen`: batch entry points for the screening pipeline.
//!
//! Every command reads the same TOML configuration, writes only under the run
//! directory, and records a run log. Failures print a JSON error record on
//! stderr and exit nonzero (2 for configuration errors, 1 otherwise).

mod commands;
mod config;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, PipelineConfig};
use crate::runlog::RunContext;

#[derive(Debug, Parser)]
#[command(
    name = "pdscreen",
    version,
    about = "Multimodal Parkinson's screening pipeline"
)]
struct Cli {
    /// TOML configuration; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory for all outputs (overrides `out_dir`).
    #[arg(long, global = true, env = "PDSCREEN_OUT_DIR")]
    out: Option<PathBuf>,

    /// Worker threads for parallel stages (overrides `workers`; default 1).
    #[arg(long, global = true, env = "PDSCREEN_WORKERS")]
    workers: Option<usize>,

    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a cohort, latent clusters and oracle directions under data/.
    Simulate,
    /// Invert an image into the toy generator's latent space.
    Invert(commands::InvertArgs),
    /// Fit a latent direction between two latent sets.
    FitDirection(commands::FitDirectionArgs),
    /// Render an edited latent: G(c + strength * n).
    Synthesize(commands::SynthesizeArgs),
    /// Train the expression classifier on real plus synthesized expressions.
    TrainFace(commands::TrainFaceArgs),
    /// Pretrain the gait extractor on simulated walkers.
    TrainGait,
    /// Train the fusion layers on frozen extractor features.
    TrainFusion(FoldArgs),
    /// Predict subjects with the trained models and score them.
    Evaluate(FoldArgs),
    /// Gait-only, face-only and fusion heads under one fold plan.
    Compare(ManifestArgs),
    /// Collect the run's reports into one summary.
    Report,
}

#[derive(Debug, Clone, Args)]
pub struct ManifestArgs {
    /// Subject manifest (default: <out>/data/manifest.jsonl).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FoldArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,

    /// Restrict to one fold of the plan: train on the other folds, evaluate
    /// on this fold plus the controls.
    #[arg(long)]
    pub fold: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Invert(_) => "invert",
            Command::FitDirection(_) => "fit-direction",
            Command::Synthesize(_) => "synthesize",
            Command::TrainFace(_) => "train-face",
            Command::TrainGait => "train-gait",
            Command::TrainFusion(_) => "train-fusion",
            Command::Evaluate(_) => "evaluate",
            Command::Compare(_) => "compare",
            Command::Report => "report",
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, ctx: &mut Option<RunContext>) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(1))
        .build_global()
        .ok();
    let run = ctx.insert(RunContext::start(cfg, cli.command.name())?);
    match &cli.command {
        Command::Simulate => commands::simulate(run),
        Command::Invert(a) => commands::invert(run, a),
        Command::FitDirection(a) => commands::fit_direction(run, a),
        Command::Synthesize(a) => commands::synthesize(run, a),
        Command::TrainFace(a) => commands::train_face(run, a),
        Command::TrainGait => commands::train_gait(run),
        Command::TrainFusion(a) => commands::train_fusion(run, a),
        Command::Evaluate(a) => commands::evaluate(run, a),
        Command::Compare(a) => commands::compare(run, a),
        Command::Report => commands::report(run),
    }?;
    run.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut ctx = None;
    match run(&cli, &mut ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let is_config = err.downcast_ref::<ConfigError>().is_some()
                || matches!(
                    err.downcast_ref::<pdscreen_core::Error>(),
                    Some(pdscreen_core::Error::Config(_))
                );
            let record = runlog::error_record(cli.command.name(), &err, is_config);
            eprintln!("{record}");
            if let Some(run) = &ctx {
                run.write_error(&record);
            }
            ExitCode::from(if is_config { 2 } else { 1 })
        }
    }
}
