//! The three-stage pipeline on synthetic data: expression directions and
//! augmentation, extractor pretraining, then frozen-feature fusion under the
//! k-fold protocol.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direction::{fit_direction, DirectionVector, FitConfig, FitMode};
use crate::error::Result;
use crate::evaluation::{compare_unimodal, kfold_split, ComparisonReport};
use crate::face::{
    augment_with_synthesized, train_expression_classifier, AccuracyReport, ExpressionLabel,
    FaceBackboneConfig, FaceTrainOptions, TrainedFaceModel, DEFAULT_EDIT_STRENGTH,
};
use crate::fusion::{FrozenExtractors, FusionTrainConfig};
use crate::gait::{
    preprocess, train_gait_classifier, GaitClassifier, GaitModelConfig, LabeledWindows,
    TrainOptions,
};
use crate::latent::{ConvPyramidExtractor, ImageTensor, InversionConfig};
use crate::seed;
use crate::synthetic::{
    build_cohort, sample_latent_clusters, simulate_subject_gait, Cohort, CohortSpec, FaceWorld,
    FaceWorldSpec,
};
use crate::types::{Diagnosis, EpochStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectionStageConfig {
    pub samples_per_class: usize,
    pub mode: FitMode,
    pub fit: FitConfig,
}

impl Default for DirectionStageConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 200,
            mode: FitMode::Standard,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceStageConfig {
    /// Real (fully expressive) images per expression.
    pub real_per_class: usize,
    /// Neutral images inverted and edited into six synthetic expressions.
    pub augment_neutrals: usize,
    pub edit_strength: f64,
    pub inversion: InversionConfig,
    pub backbone: FaceBackboneConfig,
    pub train: FaceTrainOptions,
}

impl Default for FaceStageConfig {
    fn default() -> Self {
        Self {
            real_per_class: 40,
            augment_neutrals: 10,
            edit_strength: DEFAULT_EDIT_STRENGTH,
            inversion: InversionConfig {
                max_iterations: 200,
                ..InversionConfig::default()
            },
            backbone: FaceBackboneConfig::default(),
            train: FaceTrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitStageConfig {
    /// Simulated subjects per class used to pretrain the extractor.
    pub pretrain_per_class: usize,
    pub frames: usize,
    pub jitter: f64,
    pub model: GaitModelConfig,
    pub train: TrainOptions,
}

impl Default for GaitStageConfig {
    fn default() -> Self {
        Self {
            pretrain_per_class: 40,
            frames: 128,
            jitter: 0.1,
            model: GaitModelConfig::default(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub folds: usize,
    pub face_world: FaceWorldSpec,
    pub directions: DirectionStageConfig,
    pub face: FaceStageConfig,
    pub gait: GaitStageConfig,
    pub cohort: CohortSpec,
    pub fusion: FusionTrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: 5,
            face_world: FaceWorldSpec::default(),
            directions: DirectionStageConfig::default(),
            face: FaceStageConfig::default(),
            gait: GaitStageConfig::default(),
            cohort: CohortSpec::default(),
            fusion: FusionTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub directions: Vec<DirectionVector>,
    /// Cosine of each fitted direction with the world's true offset.
    pub direction_cosines: Vec<f64>,
    pub face_report: AccuracyReport,
    pub gait_trace: Vec<EpochStats>,
    pub extractors: FrozenExtractors,
    pub comparison: ComparisonReport,
    pub timings: Vec<StageTiming>,
}

/// Fits `neutral -> X` for every emotion on latent clusters sampled around
/// the world's expression means.
pub fn discover_directions(
    world: &FaceWorld,
    cfg: &DirectionStageConfig,
    seed: u64,
) -> Result<Vec<DirectionVector>> {
    ExpressionLabel::EMOTIONS
        .par_iter()
        .map(|&label| {
            let s = seed::derive(seed, &format!("directions/{label}"));
            let neutral = world.offset(ExpressionLabel::Neutral);
            let sigma = world.spec().identity_sigma.max(1e-3);
            let (data, _) = sample_latent_clusters(
                neutral,
                world.offset(label),
                sigma,
                cfg.samples_per_class,
                s,
            )?;
            let fit = FitConfig { seed: s, ..cfg.fit };
            let mut dir = fit_direction(&data, cfg.mode, &fit)?;
            dir.source = ExpressionLabel::Neutral.as_str().to_owned();
            dir.target = label.as_str().to_owned();
            Ok(dir)
        })
        .collect()
}

/// Real expression images plus six edited expressions per augmented neutral.
pub fn expression_training_set(
    world: &FaceWorld,
    directions: &[DirectionVector],
    cfg: &FaceStageConfig,
    seed: u64,
) -> Result<Vec<(ImageTensor, ExpressionLabel)>> {
    let mut data = world.expression_dataset(cfg.real_per_class, seed::derive(seed, "face/real"))?;
    let extractor = ConvPyramidExtractor::standard(
        world.spec().generator.shape,
        seed::derive(seed, "face/perceptual"),
    );
    let synthesized = (0..cfg.augment_neutrals)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stage_rng(seed, &format!("face/neutral{i}"));
            let identity = world.sample_identity(&mut rng);
            let neutral = world.render(&identity, ExpressionLabel::Neutral, 1.0, &mut rng)?;
            let aug = augment_with_synthesized(
                &neutral,
                directions,
                world.generator(),
                &extractor,
                &cfg.inversion,
                cfg.edit_strength,
            )?;
            Ok(aug.images)
        })
        .collect::<Result<Vec<_>>>()?;
    data.extend(synthesized.into_iter().flatten().map(|(l, im)| (im, l)));
    Ok(data)
}

/// Simulated walkers of both classes, windowed, for extractor pretraining.
pub fn gait_pretraining_set(cfg: &GaitStageConfig, seed: u64) -> Result<Vec<LabeledWindows>> {
    (0..2 * cfg.pretrain_per_class)
        .into_par_iter()
        .map(|i| {
            let label = Diagnosis::from_index(i % 2);
            let id = format!("pretrain{i:04}");
            let s = seed::derive(seed, &format!("gait/pretrain/{id}"));
            let seq = simulate_subject_gait(&id, label, cfg.frames, cfg.jitter, s)?;
            Ok(LabeledWindows {
                subject_id: id,
                windows: preprocess(&seq, &cfg.model.window)?,
                label,
            })
        })
        .collect()
}

/// The face world for a run; its generator seed derives from the global
/// seed.
pub fn make_world(spec: &FaceWorldSpec, seed: u64) -> Result<FaceWorld> {
    FaceWorld::new(FaceWorldSpec {
        generator: crate::synthetic::ToyGeneratorSpec {
            seed: seed::derive(seed, "world"),
            ..spec.generator
        },
        ..spec.clone()
    })
}

pub fn train_face_stage(
    world: &FaceWorld,
    directions: &[DirectionVector],
    cfg: &FaceStageConfig,
    seed: u64,
) -> Result<TrainedFaceModel> {
    let face_seed = seed::derive(seed, "face");
    let data = expression_training_set(world, directions, cfg, face_seed)?;
    train_expression_classifier(
        &data,
        &cfg.backbone,
        &FaceTrainOptions {
            seed: face_seed,
            ..cfg.train
        },
    )
}

pub fn train_gait_stage(cfg: &GaitStageConfig, seed: u64) -> Result<GaitClassifier> {
    let gait_seed = seed::derive(seed, "gait");
    let data = gait_pretraining_set(cfg, gait_seed)?;
    train_gait_classifier(
        &data,
        &cfg.model,
        &TrainOptions {
            seed: gait_seed,
            ..cfg.train
        },
    )
}

pub fn make_cohort(spec: &CohortSpec, world: &FaceWorld, seed: u64) -> Result<Cohort> {
    build_cohort(
        &CohortSpec {
            seed: seed::derive(seed, "cohort"),
            ..spec.clone()
        },
        world,
    )
}

pub fn fusion_config(cfg: &FusionTrainConfig, seed: u64) -> FusionTrainConfig {
    FusionTrainConfig {
        seed: seed::derive(seed, "fusion"),
        ..*cfg
    }
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming {
            stage: stage.to_owned(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };

    let world = make_world(&cfg.face_world, cfg.seed)?;
    let directions = discover_directions(
        &world,
        &cfg.directions,
        seed::derive(cfg.seed, "directions"),
    )?;
    let direction_cosines = directions
        .iter()
        .zip(ExpressionLabel::EMOTIONS)
        .map(|(d, l)| d.cosine(world.offset(l)))
        .collect();
    lap("directions", &mut timings);

    let face = train_face_stage(&world, &directions, &cfg.face, cfg.seed)?;
    lap("face", &mut timings);

    let gait = train_gait_stage(&cfg.gait, cfg.seed)?;
    lap("gait", &mut timings);

    let cohort = make_cohort(&cfg.cohort, &world, cfg.seed)?;
    let extractors = FrozenExtractors {
        gait: gait.model,
        face: face.model,
    };
    let features = extractors.features_all(&cohort.subjects)?;
    let controls = extractors.features_all(&cohort.controls)?;
    lap("features", &mut timings);

    let plan = kfold_split(&features, cfg.folds, seed::derive(cfg.seed, "folds"))?;
    let comparison = compare_unimodal(
        &features,
        &controls,
        &plan,
        &fusion_config(&cfg.fusion, cfg.seed),
    )?;
    lap("compare", &mut timings);

    Ok(BenchmarkOutcome {
        directions,
        direction_cosines,
        face_report: face.report,
        gait_trace: gait.trace,
        extractors,
        comparison,
        timings,
    })
}
