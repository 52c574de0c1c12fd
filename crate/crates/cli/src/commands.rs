use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use pdscreen_core::dataset::{DatasetManifest, SourceTag, Subject};
use pdscreen_core::direction::{
    fit_direction as fit_latent_direction, DirectionVector, FitConfig, FitMode, LabeledLatentSet,
};
use pdscreen_core::evaluation::{
    compare_unimodal, evaluate as evaluate_subjects, kfold_split, EvalOptions, FoldPlan,
};
use pdscreen_core::face::{ExpressionLabel, FaceBackboneConfig, FaceModel};
use pdscreen_core::fusion::{train_fusion as train_fusion_layers, FrozenExtractors, FusionModel};
use pdscreen_core::gait::{GaitModel, GaitModelConfig};
use pdscreen_core::io::{
    read_checkpoint, read_json_artifact, read_latents, read_png, write_checkpoint,
    write_json_artifact, write_latents, write_png,
};
use pdscreen_core::latent::{
    invert as invert_image, synthesize as render_edit, ConvPyramidExtractor, Generator,
};
use pdscreen_core::math;
use pdscreen_core::pipeline::{
    discover_directions, fusion_config, make_cohort, make_world, train_face_stage, train_gait_stage,
};
use pdscreen_core::seed;
use pdscreen_core::synthetic::{sample_latent_clusters, write_cohort, FaceWorld};
use serde_json::json;

use crate::runlog::RunContext;
use crate::{FoldArgs, ManifestArgs};

const DIRECTION_KIND: &str = "direction";
const FUSION_KIND: &str = "fusion";
const GAIT_KIND: &str = "gait";
const FACE_KIND: &str = "face";

fn world(run: &RunContext) -> anyhow::Result<FaceWorld> {
    Ok(make_world(&run.cfg.face_world, run.seed())?)
}

fn write_text(run: &mut RunContext, rel: impl AsRef<Path>, text: &str) -> anyhow::Result<PathBuf> {
    let path = run.path(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    run.wrote(&path);
    Ok(path)
}

fn write_json<T: serde::Serialize>(
    run: &mut RunContext,
    rel: impl AsRef<Path>,
    kind: &str,
    body: &T,
) -> anyhow::Result<PathBuf> {
    let path = run.path(rel);
    write_json_artifact(&path, kind, &run.config_hash, body)?;
    run.wrote(&path);
    Ok(path)
}

fn write_direction(
    run: &mut RunContext,
    rel: impl AsRef<Path>,
    d: &DirectionVector,
) -> anyhow::Result<PathBuf> {
    write_json(run, rel, DIRECTION_KIND, d)
}

fn read_direction(path: &Path) -> anyhow::Result<DirectionVector> {
    Ok(read_json_artifact::<DirectionVector>(path, DIRECTION_KIND)
        .with_context(|| format!("reading direction {}", path.display()))?
        .body)
}

/// Cohort, latent clusters per expression and the oracle directions.
pub fn simulate(run: &mut RunContext) -> anyhow::Result<()> {
    let world = world(run)?;
    let cohort = make_cohort(&run.cfg.cohort, &world, run.seed())?;
    run.lap("cohort");
    let data_dir = run.path("data");
    let manifest = write_cohort(&cohort, &data_dir, &run.config_hash)?;
    run.wrote(&data_dir.join("manifest.jsonl"));
    let n = run.cfg.directions.samples_per_class;
    let sigma = run.cfg.face_world.identity_sigma.max(1e-3);
    let neutral = world.offset(ExpressionLabel::Neutral).to_vec();
    for label in ExpressionLabel::EMOTIONS {
        let s = seed::derive(run.seed(), &format!("simulate/clusters/{label}"));
        let (set, _) = sample_latent_clusters(&neutral, world.offset(label), sigma, n, s)?;
        if label == ExpressionLabel::EMOTIONS[0] {
            let p = data_dir.join("latents").join("neutral.bin");
            write_latents(&p, set.latents_a(), &run.config_hash)?;
            run.wrote(&p);
        }
        let p = data_dir.join("latents").join(format!("{label}.bin"));
        write_latents(&p, set.latents_b(), &run.config_hash)?;
        run.wrote(&p);
        write_direction(
            run,
            format!("data/oracle/{label}.json"),
            &world.oracle_direction(label)?,
        )?;
    }
    run.lap("write");
    let pd = manifest
        .records
        .iter()
        .filter(|r| r.label == pdscreen_core::Diagnosis::Pd)
        .count();
    println!(
        "simulated {} subjects ({pd} PD, {} non-PD, {} controls) into {}",
        manifest.records.len(),
        manifest.records.len() - pd - cohort.controls.len(),
        cohort.controls.len(),
        data_dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct InvertArgs {
    /// PNG image matching the face world's image shape.
    #[arg(long)]
    pub image: PathBuf,
    /// Output name under latents/ (default: the image's file stem).
    #[arg(long)]
    pub name: Option<String>,
}

pub fn invert(run: &mut RunContext, args: &InvertArgs) -> anyhow::Result<()> {
    let world = world(run)?;
    let target = read_png(&args.image)?;
    let g = world.generator();
    let px =
        ConvPyramidExtractor::standard(g.output_shape(), seed::derive(run.seed(), "perceptual"));
    let inv = invert_image(&target, g, &px, &run.cfg.inversion)?;
    run.lap("invert");
    let recon = g.forward(&inv.latent)?;
    let mse =
        math::squared_distance(recon.pixels(), target.pixels()) / target.pixels().len() as f64;
    let oracle = g.pseudo_inverse(&target)?;
    let latent_err = math::squared_distance(oracle.as_slice(), inv.latent.as_slice()).sqrt();
    let name = args
        .name
        .clone()
        .or_else(|| {
            args.image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "latent".into());
    let path = run.path(format!("latents/{name}.bin"));
    write_latents(&path, std::slice::from_ref(&inv.latent), &run.config_hash)?;
    run.wrote(&path);
    let summary = json!({
        "final_loss": inv.final_loss(),
        "iterations": inv.iterations,
        "converged": inv.converged,
        "reconstruction_mse": mse,
        "oracle_latent_l2": latent_err,
    });
    write_json(
        run,
        format!("reports/invert_{name}.json"),
        "inversion",
        &summary,
    )?;
    println!("{summary}");
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct FitDirectionArgs {
    /// Latent file of the source class (label 0).
    #[arg(long)]
    pub a: PathBuf,
    /// Latent file of the target class (label 1).
    #[arg(long)]
    pub b: PathBuf,
    /// paper_faithful, standard or oracle (class-mean difference).
    #[arg(long, default_value = "standard")]
    pub mode: String,
    #[arg(long, default_value = "neutral")]
    pub source: String,
    /// Target tag (default: the file stem of --b).
    #[arg(long)]
    pub target: Option<String>,
    /// Direction file to compare against; prints the cosine similarity.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
}

pub fn fit_direction(run: &mut RunContext, args: &FitDirectionArgs) -> anyhow::Result<()> {
    let mode: FitMode = args.mode.parse()?;
    let target = args
        .target
        .clone()
        .or_else(|| args.b.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "target".into());
    let a = read_latents(&args.a)?.latents;
    let b = read_latents(&args.b)?.latents;
    let data = LabeledLatentSet::new(a, b, args.source.clone(), target.clone())?;
    let fit = FitConfig {
        seed: seed::derive(run.seed(), &format!("fit-direction/{target}")),
        ..run.cfg.fit()
    };
    let dir = fit_latent_direction(&data, mode, &fit)?;
    run.lap("fit");
    let path = write_direction(run, format!("directions/{target}.json"), &dir)?;
    let mut summary = json!({
        "mode": args.mode,
        "source": dir.source,
        "target": dir.target,
        "direction": path,
        "diagnostics": dir.diagnostics,
    });
    if let Some(o) = &args.oracle {
        let oracle = read_direction(o)?;
        let c = dir.cosine(oracle.values());
        summary["cosine"] = json!(c);
        println!("cosine={c:.6}");
    }
    write_json(
        run,
        format!("reports/direction_{target}.json"),
        "direction-fit",
        &summary,
    )?;
    println!("{summary}");
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub latent: PathBuf,
    /// Record index inside the latent file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub direction: PathBuf,
    /// Edit strength lambda.
    #[arg(long, default_value_t = pdscreen_core::face::DEFAULT_EDIT_STRENGTH)]
    pub strength: f64,
    /// Output name under images/.
    #[arg(long, default_value = "synthesized")]
    pub name: String,
}

pub fn synthesize(run: &mut RunContext, args: &SynthesizeArgs) -> anyhow::Result<()> {
    let world = world(run)?;
    let latents = read_latents(&args.latent)?.latents;
    let base = latents.get(args.index).with_context(|| {
        format!(
            "latent file holds {} records, index {} requested",
            latents.len(),
            args.index
        )
    })?;
    let dir = read_direction(&args.direction)?;
    let image = render_edit(base, &dir, args.strength, world.generator())?;
    let path = run.path(format!("images/{}.png", args.name));
    write_png(&path, &image)?;
    run.wrote(&path);
    println!(
        "wrote {} ({} -> {}, strength {})",
        path.display(),
        dir.source,
        dir.target,
        args.strength
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrainFaceArgs {
    /// Directory of `<expression>.json` directions (default: fit them from
    /// freshly sampled latent clusters).
    #[arg(long)]
    pub directions: Option<PathBuf>,
}

pub fn train_face(run: &mut RunContext, args: &TrainFaceArgs) -> anyhow::Result<()> {
    let world = world(run)?;
    let directions = match &args.directions {
        Some(dir) => ExpressionLabel::EMOTIONS
            .iter()
            .map(|l| read_direction(&dir.join(format!("{l}.json"))))
            .collect::<anyhow::Result<Vec<_>>>()?,
        None => discover_directions(
            &world,
            &run.cfg.directions,
            seed::derive(run.seed(), "directions"),
        )?,
    };
    run.lap("directions");
    let trained = train_face_stage(&world, &directions, &run.cfg.face, run.seed())?;
    run.lap("train");
    let path = run.path("models/face.ckpt");
    write_checkpoint(
        &path,
        FACE_KIND,
        trained.model.config(),
        trained.model.params(),
    )?;
    run.wrote(&path);
    write_text(run, "reports/face_accuracy.txt", &trained.report.to_table())?;
    write_json(
        run,
        "reports/face_accuracy.json",
        "face-accuracy",
        &trained.report,
    )?;
    write_json(
        run,
        "reports/face_trace.json",
        "training-trace",
        &trained.trace,
    )?;
    print!("{}", trained.report);
    Ok(())
}

pub fn train_gait(run: &mut RunContext) -> anyhow::Result<()> {
    let trained = train_gait_stage(&run.cfg.gait, run.seed())?;
    run.lap("train");
    let path = run.path("models/gait.ckpt");
    write_checkpoint(
        &path,
        GAIT_KIND,
        trained.model.config(),
        trained.model.params(),
    )?;
    run.wrote(&path);
    write_json(
        run,
        "reports/gait_trace.json",
        "training-trace",
        &trained.trace,
    )?;
    if let Some(last) = trained.trace.last() {
        println!(
            "gait extractor: epoch {} loss {:.6} accuracy {:.4}",
            last.epoch, last.loss, last.accuracy
        );
    }
    Ok(())
}

fn load_extractors(run: &RunContext) -> anyhow::Result<FrozenExtractors> {
    let g = read_checkpoint::<GaitModelConfig>(&run.path("models/gait.ckpt"), GAIT_KIND)
        .context("loading the gait extractor (run train-gait first)")?;
    let f = read_checkpoint::<FaceBackboneConfig>(&run.path("models/face.ckpt"), FACE_KIND)
        .context("loading the face extractor (run train-face first)")?;
    Ok(FrozenExtractors {
        gait: GaitModel::from_params(g.config, g.params)?,
        face: FaceModel::from_params(f.config, f.params)?,
    })
}

fn manifest_path(run: &RunContext, args: &ManifestArgs) -> PathBuf {
    args.manifest
        .clone()
        .unwrap_or_else(|| run.path("data/manifest.jsonl"))
}

struct Loaded {
    cohort: Vec<Subject>,
    controls: Vec<Subject>,
    plan: FoldPlan,
}

fn load_subjects(run: &RunContext, args: &ManifestArgs) -> anyhow::Result<Loaded> {
    let path = manifest_path(run, args);
    let manifest = DatasetManifest::read(&path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let plan = kfold_split(
        &manifest.records,
        run.cfg.evaluation.folds,
        seed::derive(run.seed(), "folds"),
    )?;
    let (controls, cohort) = manifest
        .load_all()?
        .into_iter()
        .partition(|s| s.source == SourceTag::Control);
    Ok(Loaded {
        cohort,
        controls,
        plan,
    })
}

fn fold_subjects(loaded: &Loaded, fold: usize, train: bool) -> anyhow::Result<Vec<&Subject>> {
    if fold >= loaded.plan.k {
        bail!("fold {fold} out of range for {} folds", loaded.plan.k);
    }
    let ids: std::collections::HashSet<String> = if train {
        loaded.plan.train_ids(fold).into_iter().collect()
    } else {
        loaded.plan.test_ids(fold).iter().cloned().collect()
    };
    Ok(loaded
        .cohort
        .iter()
        .filter(|s| ids.contains(&s.id))
        .collect())
}

pub fn train_fusion(run: &mut RunContext, args: &FoldArgs) -> anyhow::Result<()> {
    let extractors = load_extractors(run)?;
    let loaded = load_subjects(run, &args.manifest)?;
    run.lap("load");
    let train: Vec<Subject> = match args.fold {
        Some(f) => fold_subjects(&loaded, f, true)?
            .into_iter()
            .cloned()
            .collect(),
        None => loaded.cohort.clone(),
    };
    let trained = train_fusion_layers(
        &train,
        &extractors,
        &fusion_config(&run.cfg.fusion, run.seed()),
    )?;
    run.lap("train");
    let checks = trained
        .checksums
        .as_ref()
        .expect("train_fusion records checksums");
    if !checks.unchanged() {
        bail!("extractor parameters changed during fusion training");
    }
    write_json(run, "models/fusion.json", FUSION_KIND, &trained.model)?;
    write_json(
        run,
        "reports/fusion_trace.json",
        "training-trace",
        &json!({
            "fold": args.fold,
            "subjects": train.len(),
            "trace": trained.trace,
            "extractor_checksums": checks,
        }),
    )?;
    if let Some(last) = trained.trace.last() {
        println!(
            "fusion: {} subjects, epoch {} loss {:.6} accuracy {:.4}",
            train.len(),
            last.epoch,
            last.loss,
            last.accuracy
        );
    }
    Ok(())
}

pub fn evaluate(run: &mut RunContext, args: &FoldArgs) -> anyhow::Result<()> {
    let extractors = load_extractors(run)?;
    let model: FusionModel = read_json_artifact(&run.path("models/fusion.json"), FUSION_KIND)
        .context("loading the fusion model (run train-fusion first)")?
        .body;
    let loaded = load_subjects(run, &args.manifest)?;
    run.lap("load");
    let subjects: Vec<&Subject> = match args.fold {
        Some(f) => {
            let fold = fold_subjects(&loaded, f, false)?;
            pdscreen_core::evaluation::augment_test_controls(fold, &loaded.controls)?.subjects
        }
        None => loaded.cohort.iter().chain(&loaded.controls).collect(),
    };
    let opts = EvalOptions {
        skip_failures: run.cfg.evaluation.skip_failures,
    };
    let report = evaluate_subjects(&extractors, &model, &subjects, opts)?;
    run.lap("evaluate");
    let m = &report.metrics;
    let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.4}"));
    let table = format!(
        "Subjects\tAccuracy\tPD Acc.\tnon-PD Acc.\tTP\tFN\tFP\tTN\n{}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        m.n,
        m.accuracy,
        fmt_opt(m.pd_accuracy),
        fmt_opt(m.non_pd_accuracy),
        m.confusion[0][0],
        m.confusion[0][1],
        m.confusion[1][0],
        m.confusion[1][1]
    );
    write_text(run, "reports/metrics.txt", &table)?;
    write_json(run, "reports/metrics.json", "metrics", &report)?;
    let lines: String = report
        .predictions
        .iter()
        .map(|p| serde_json::to_string(p).map(|s| s + "\n"))
        .collect::<Result<_, _>>()?;
    write_text(run, "reports/predictions.jsonl", &lines)?;
    print!("{table}");
    Ok(())
}

pub fn compare(run: &mut RunContext, args: &ManifestArgs) -> anyhow::Result<()> {
    let extractors = load_extractors(run)?;
    let loaded = load_subjects(run, args)?;
    let cohort = extractors.features_all(&loaded.cohort)?;
    let controls = extractors.features_all(&loaded.controls)?;
    run.lap("features");
    let report = compare_unimodal(
        &cohort,
        &controls,
        &loaded.plan,
        &fusion_config(&run.cfg.fusion, run.seed()),
    )?;
    run.lap("compare");
    write_text(run, "reports/comparison.txt", &report.to_table())?;
    write_json(run, "reports/comparison.json", "comparison", &report)?;
    print!("{}", report.to_table());
    Ok(())
}

/// Concatenates the run's tabular reports.
pub fn report(run: &mut RunContext) -> anyhow::Result<()> {
    let mut out = format!(
        "# run {}\n# seed {}\n# config {}\n",
        run.cfg.out_dir.display(),
        run.seed(),
        run.config_hash
    );
    let mut found = 0;
    for (title, rel) in [
        ("Expression classifier", "reports/face_accuracy.txt"),
        ("Unimodal vs. fusion", "reports/comparison.txt"),
        ("Fusion evaluation", "reports/metrics.txt"),
    ] {
        let path = run.path(rel);
        if let Ok(text) = fs::read_to_string(&path) {
            out.push_str(&format!("\n## {title}\n{text}"));
            found += 1;
        }
    }
    if found == 0 {
        bail!("no reports under {}", run.path("reports").display());
    }
    write_text(run, "reports/summary.txt", &out)?;
    print!("{out}");
    Ok(())
}
