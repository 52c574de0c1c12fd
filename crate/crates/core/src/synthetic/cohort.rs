//! Labeled multimodal subjects drawn from the face world and the gait
//! simulator, in memory or written out as a manifest directory.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::faces::FaceWorld;
use super::gait_sim::{simulate_gait, GaitSimSpec};
use crate::dataset::{DatasetManifest, ImageEntry, SourceTag, Subject, SubjectRecord};
use crate::error::{Error, Result};
use crate::gait::SkeletonSequence;
use crate::io::write_png;
use crate::seed;
use crate::types::{Diagnosis, Modality};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub subjects_per_class: usize,
    /// Extra non-PD subjects tagged as the control group.
    pub controls: usize,
    pub pd_expressivity: f64,
    pub control_expressivity: f64,
    /// Half-width of the uniform per-subject expressivity spread.
    pub expressivity_jitter: f64,
    pub gait_frames: usize,
    /// Relative half-width of the per-subject stride, arm-swing and cadence
    /// spread.
    pub gait_jitter: f64,
    /// Draws this modality from a random class, independent of the label.
    pub uninformative: Option<Modality>,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            subjects_per_class: 200,
            controls: 0,
            pd_expressivity: 0.35,
            control_expressivity: 1.0,
            expressivity_jitter: 0.1,
            gait_frames: 128,
            gait_jitter: 0.1,
            uninformative: None,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects_per_class == 0 {
            return Err(Error::Config(
                "cohort.subjects_per_class must be positive".into(),
            ));
        }
        for (name, v) in [
            ("pd_expressivity", self.pd_expressivity),
            ("control_expressivity", self.control_expressivity),
            ("expressivity_jitter", self.expressivity_jitter),
            ("gait_jitter", self.gait_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "cohort.{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.gait_jitter >= 1.0 {
            return Err(Error::Config("cohort.gait_jitter must be below 1".into()));
        }
        Ok(())
    }

    fn expressivity(&self, class: Diagnosis) -> f64 {
        match class {
            Diagnosis::Pd => self.pd_expressivity,
            Diagnosis::NonPd => self.control_expressivity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub controls: Vec<Subject>,
}

/// One simulated walk with per-subject variation around the class defaults.
pub fn simulate_subject_gait(
    id: &str,
    class: Diagnosis,
    frames: usize,
    jitter: f64,
    seed: u64,
) -> Result<SkeletonSequence> {
    let mut rng = seed::stage_rng(seed, "cohort/gait-params");
    let mut spread = |x: f64| x * (1.0 + rng.random_range(-1.0..=1.0) * jitter);
    let base = GaitSimSpec::for_class(class, seed);
    let spec = GaitSimSpec {
        stride_scale: spread(base.stride_scale),
        arm_swing_scale: spread(base.arm_swing_scale),
        cadence_hz: spread(base.cadence_hz),
        tremor_amplitude: spread(base.tremor_amplitude),
        frames,
        ..base
    };
    simulate_gait(id, &spec)
}

fn make_subject(
    id: String,
    label: Diagnosis,
    source: SourceTag,
    spec: &CohortSpec,
    world: &FaceWorld,
) -> Result<Subject> {
    let s = seed::derive(spec.seed, &format!("cohort/{id}"));
    let mut rng = seed::rng(s);
    let mut class_for = |m: Modality| {
        if spec.uninformative == Some(m) {
            Diagnosis::from_index(rng.random_range(0..2))
        } else {
            label
        }
    };
    let gait_class = class_for(Modality::Gait);
    let face_class = class_for(Modality::Face);
    let expressivity =
        spec.expressivity(face_class) + rng.random_range(-1.0..=1.0) * spec.expressivity_jitter;
    let images = world.subject_images(expressivity.max(0.0), &mut rng)?;
    let gait = simulate_subject_gait(&id, gait_class, spec.gait_frames, spec.gait_jitter, s)?;
    Ok(Subject {
        id,
        label,
        source,
        images,
        gait: Some(gait),
    })
}

/// `subjects_per_class` PD and non-PD subjects tagged synthetic, plus
/// `controls` non-PD subjects tagged control.
pub fn build_cohort(spec: &CohortSpec, world: &FaceWorld) -> Result<Cohort> {
    spec.validate()?;
    let mut plan = Vec::new();
    for i in 0..spec.subjects_per_class {
        plan.push((format!("pd{i:04}"), Diagnosis::Pd, SourceTag::Synthetic));
        plan.push((format!("hc{i:04}"), Diagnosis::NonPd, SourceTag::Synthetic));
    }
    for i in 0..spec.controls {
        plan.push((format!("ctrl{i:04}"), Diagnosis::NonPd, SourceTag::Control));
    }
    let all = plan
        .into_par_iter()
        .map(|(id, label, source)| make_subject(id, label, source, spec, world))
        .collect::<Result<Vec<_>>>()?;
    let (controls, subjects) = all
        .into_iter()
        .partition(|s| s.source == SourceTag::Control);
    Ok(Cohort { subjects, controls })
}

fn relative(dir: &Path, p: PathBuf) -> PathBuf {
    p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or(p)
}

/// Writes PNG images, keypoint files and `manifest.jsonl` under `dir`.
pub fn write_cohort(cohort: &Cohort, dir: &Path, config_hash: &str) -> Result<DatasetManifest> {
    let records = cohort
        .subjects
        .par_iter()
        .chain(cohort.controls.par_iter())
        .map(|s| {
            let images = s
                .images
                .iter()
                .map(|(label, im)| {
                    let p = dir.join("images").join(format!("{}_{}.png", s.id, label));
                    write_png(&p, im)?;
                    Ok(ImageEntry {
                        path: relative(dir, p),
                        expression: *label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let gait = s
                .gait
                .as_ref()
                .map(|seq| {
                    let p = dir.join("gait").join(format!("{}.txt", s.id));
                    std::fs::create_dir_all(p.parent().expect("joined path"))
                        .map_err(|e| Error::io(dir, e))?;
                    seq.write(&p)?;
                    Ok::<_, Error>(relative(dir, p))
                })
                .transpose()?;
            Ok(SubjectRecord {
                id: s.id.clone(),
                label: s.label,
                images,
                gait,
                source: s.source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = DatasetManifest::new(records, dir)?;
    manifest.config_hash = Some(config_hash.to_owned());
    manifest.write(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
