//! Subject-level k-fold protocol with control-group test augmentation,
//! accuracy metrics and the unimodal vs. fusion comparison.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ensure_unique_ids;
pub use crate::dataset::{
    DatasetManifest, ImageEntry, SourceTag, Subject, SubjectInfo, SubjectRecord,
};
use crate::error::{Error, Result};
use crate::fusion::{
    decide, predict_subject, train_fusion_head, FrozenExtractors, FusionModel, FusionTrainConfig,
    Prediction, SubjectFeatures,
};
use crate::seed;
use crate::types::{Diagnosis, Modality};

/// Disjoint folds of subject ids covering the split cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn validate(&self) -> Result<()> {
        if self.folds.len() != self.k || self.k < 2 {
            return Err(Error::Dataset(format!(
                "fold plan declares k = {} but holds {} folds",
                self.k,
                self.folds.len()
            )));
        }
        ensure_unique_ids(self.folds.iter().flatten().map(String::as_str))?;
        let sizes: Vec<usize> = self.folds.iter().map(Vec::len).collect();
        let (lo, hi) = (
            sizes.iter().min().copied().unwrap_or(0),
            sizes.iter().max().copied().unwrap_or(0),
        );
        if hi - lo > 1 {
            return Err(Error::Dataset(format!(
                "fold sizes {sizes:?} differ by more than one"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn test_ids(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Shuffled, label-stratified partition of the non-control subjects into `k`
/// folds. Subjects are grouped by label, shuffled within each group, and dealt
/// round-robin, so fold sizes differ by at most one and every fold sees both
/// labels in proportion.
pub fn kfold_split<T: SubjectInfo>(subjects: &[T], k: usize, seed: u64) -> Result<FoldPlan> {
    ensure_unique_ids(subjects.iter().map(SubjectInfo::id))?;
    if k < 2 {
        return Err(Error::Config(format!("k = {k}; need at least 2 folds")));
    }
    let pool: Vec<&T> = subjects
        .iter()
        .filter(|s| s.source() != SourceTag::Control)
        .collect();
    if pool.len() < k {
        return Err(Error::Dataset(format!(
            "{} subjects cannot fill {k} folds",
            pool.len()
        )));
    }
    let mut rng = seed::stage_rng(seed, "evaluation/kfold");
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for label in Diagnosis::ALL {
        let mut ids: Vec<String> = pool
            .iter()
            .filter(|s| s.label() == label)
            .map(|s| s.id().to_owned())
            .collect();
        ids.sort();
        ids.shuffle(&mut rng);
        for id in ids {
            folds[next % k].push(id);
            next += 1;
        }
    }
    let plan = FoldPlan { k, seed, folds };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub from_fold: usize,
    pub controls: usize,
    pub pd: usize,
    pub non_pd: usize,
}

impl Composition {
    pub fn total(&self) -> usize {
        self.from_fold + self.controls
    }
}

#[derive(Debug, Clone)]
pub struct TestSet<'a, T> {
    pub subjects: Vec<&'a T>,
    pub composition: Composition,
}

/// Adds the control group to a test fold. Controls must be non-PD and carry
/// both modalities.
pub fn augment_test_controls<'a, T: SubjectInfo>(
    fold: Vec<&'a T>,
    controls: &'a [T],
) -> Result<TestSet<'a, T>> {
    for c in controls {
        if c.label() != Diagnosis::NonPd {
            return Err(Error::Dataset(format!(
                "control {} is labeled {}",
                c.id(),
                c.label()
            )));
        }
        for (present, m) in [
            (c.has_gait(), Modality::Gait),
            (c.has_face(), Modality::Face),
        ] {
            if !present {
                return Err(Error::MissingModality {
                    subject: c.id().to_owned(),
                    modality: m.to_string(),
                });
            }
        }
    }
    let from_fold = fold.len();
    let mut subjects = fold;
    subjects.extend(controls.iter());
    ensure_unique_ids(subjects.iter().map(|s| s.id()))?;
    let pd = subjects
        .iter()
        .filter(|s| s.label() == Diagnosis::Pd)
        .count();
    Ok(TestSet {
        composition: Composition {
            from_fold,
            controls: controls.len(),
            pd,
            non_pd: subjects.len() - pd,
        },
        subjects,
    })
}

/// Accuracy, per-class accuracy and confusion counts (`[truth][predicted]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// `None` when the class is absent.
    pub pd_accuracy: Option<f64>,
    pub non_pd_accuracy: Option<f64>,
    pub confusion: [[usize; 2]; 2],
}

impl Metrics {
    pub fn from_outcomes(outcomes: &[(Diagnosis, Diagnosis)]) -> Self {
        let mut confusion = [[0usize; 2]; 2];
        for (truth, pred) in outcomes {
            confusion[truth.index()][pred.index()] += 1;
        }
        let class_acc = |c: usize| {
            let row: usize = confusion[c].iter().sum();
            (row > 0).then(|| confusion[c][c] as f64 / row as f64)
        };
        let correct = confusion[0][0] + confusion[1][1];
        Self {
            n: outcomes.len(),
            accuracy: if outcomes.is_empty() {
                0.0
            } else {
                correct as f64 / outcomes.len() as f64
            },
            pd_accuracy: class_acc(0),
            non_pd_accuracy: class_acc(1),
            confusion,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Record failed subjects and leave them out of the metrics instead of
    /// aborting.
    pub skip_failures: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFailure {
    pub subject_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
    pub failures: Vec<SubjectFailure>,
}

/// Predicts every subject with the fusion model and scores the predictions.
pub fn evaluate(
    extractors: &FrozenExtractors,
    model: &FusionModel,
    subjects: &[&Subject],
    opts: EvalOptions,
) -> Result<EvalReport> {
    if subjects.is_empty() {
        return Err(Error::Dataset("evaluation manifest is empty".into()));
    }
    let results: Vec<Result<Prediction>> = subjects
        .par_iter()
        .map(|s| predict_subject(s, extractors, model))
        .collect();
    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    let mut outcomes = Vec::new();
    for (s, r) in subjects.iter().zip(results) {
        match r {
            Ok(p) => {
                outcomes.push((s.label, p.diagnosis));
                predictions.push(p);
            }
            Err(e) if opts.skip_failures => failures.push(SubjectFailure {
                subject_id: s.id.clone(),
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport {
        metrics: Metrics::from_outcomes(&outcomes),
        predictions,
        failures,
    })
}

/// Scores a trained head on precomputed features.
pub fn evaluate_features(
    model: &FusionModel,
    features: &[&SubjectFeatures],
) -> Result<(Metrics, Vec<Prediction>)> {
    let predictions = features
        .iter()
        .map(|f| Ok(decide(&f.id, model.forward(f)?)))
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<_> = features
        .iter()
        .zip(&predictions)
        .map(|(f, p)| (f.label, p.diagnosis))
        .collect();
    Ok((Metrics::from_outcomes(&outcomes), predictions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub mean_accuracy: f64,
    pub folds: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub k: usize,
    pub test_composition: Vec<Composition>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("Features\tMean Acc.");
        for i in 0..self.k {
            out.push_str(&format!("\tFold {}", i + 1));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{}\t{:.4}", r.name, r.mean_accuracy));
            for f in &r.folds {
                out.push_str(&format!("\t{:.4}", f.accuracy));
            }
            out.push('\n');
        }
        out.push_str(&format!("# folds: {}, seed: {}\n", self.k, self.seed));
        out
    }
}

pub const COMPARISON_ROWS: [(&str, &[Modality]); 3] = [
    ("gait-only", &[Modality::Gait]),
    ("face-only", &[Modality::Face]),
    ("fusion", &[Modality::Gait, Modality::Face]),
];

/// Trains a gait-only head, a face-only head and the fusion head on each
/// fold's training subjects and tests them on the fold plus the controls.
/// Features come from frozen extractors and are computed once.
pub fn compare_unimodal(
    cohort: &[SubjectFeatures],
    controls: &[SubjectFeatures],
    plan: &FoldPlan,
    cfg: &FusionTrainConfig,
) -> Result<ComparisonReport> {
    plan.validate()?;
    let by_id: HashMap<&str, &SubjectFeatures> =
        cohort.iter().map(|f| (f.id.as_str(), f)).collect();
    let lookup = |ids: &[String]| -> Result<Vec<&SubjectFeatures>> {
        ids.iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Dataset(format!("fold plan names unknown subject {id:?}"))
                })
            })
            .collect()
    };
    let control_ids: HashSet<&str> = controls.iter().map(|c| c.id.as_str()).collect();
    let per_fold = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<SubjectFeatures> = lookup(&plan.train_ids(fold))?
                .into_iter()
                .cloned()
                .collect();
            let test = lookup(plan.test_ids(fold))?;
            let tested = augment_test_controls(test, controls)?;
            let composition = tested.composition.clone();
            if tested
                .subjects
                .iter()
                .filter(|s| control_ids.contains(s.id.as_str()))
                .count()
                != controls.len()
            {
                return Err(Error::Dataset("control ids collide with cohort ids".into()));
            }
            let rows = COMPARISON_ROWS
                .iter()
                .map(|(_, modalities)| {
                    let cfg = FusionTrainConfig {
                        seed: seed::derive(cfg.seed, &format!("compare/fold{fold}")),
                        ..*cfg
                    };
                    let head = train_fusion_head(&train, modalities, &cfg)?;
                    Ok(evaluate_features(&head.model, &tested.subjects)?.0)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((composition, rows))
        })
        .collect::<Vec<Result<_>>>();
    let mut compositions = Vec::new();
    let mut grid: Vec<Vec<Metrics>> = vec![Vec::new(); COMPARISON_ROWS.len()];
    for r in per_fold {
        let (c, rows) = r?;
        compositions.push(c);
        for (g, m) in grid.iter_mut().zip(rows) {
            g.push(m);
        }
    }
    let rows = COMPARISON_ROWS
        .iter()
        .zip(grid)
        .map(|((name, _), folds)| ComparisonRow {
            name: (*name).to_owned(),
            mean_accuracy: folds.iter().map(|m| m.accuracy).sum::<f64>() / folds.len() as f64,
            folds,
        })
        .collect();
    Ok(ComparisonReport {
        seed: plan.seed,
        k: plan.k,
        test_composition: compositions,
        rows,
    })
}

/// Mean of per-fold metrics, keyed by row name.
pub fn mean_accuracies(report: &ComparisonReport) -> BTreeMap<String, f64> {
    report
        .rows
        .iter()
        .map(|r| (r.name.clone(), r.mean_accuracy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: String, label: Diagnosis, source: SourceTag) -> SubjectRecord {
        SubjectRecord {
            id,
            label,
            images: vec![ImageEntry {
                path: "a.png".into(),
                expression: crate::face::ExpressionLabel::Neutral,
            }],
            gait: Some("a.txt".into()),
            source,
        }
    }

    fn pd_records(n: usize) -> Vec<SubjectRecord> {
        (0..n)
            .map(|i| record(format!("pd{i:03}"), Diagnosis::Pd, SourceTag::Clinical))
            .collect()
    }

    fn controls(n: usize) -> Vec<SubjectRecord> {
        (0..n)
            .map(|i| record(format!("c{i:03}"), Diagnosis::NonPd, SourceTag::Control))
            .collect()
    }

    #[test]
    fn ninety_five_subjects_give_76_19_folds() {
        let recs = pd_records(95);
        let plan = kfold_split(&recs, 5, 1).unwrap();
        for f in 0..5 {
            assert_eq!((plan.train_ids(f).len(), plan.test_ids(f).len()), (76, 19));
        }
    }

    #[test]
    fn controls_complete_the_66_subject_test_set() {
        let recs = pd_records(95);
        let ctrl = controls(47);
        let plan = kfold_split(&recs, 5, 1).unwrap();
        let by_id: HashMap<&str, &SubjectRecord> =
            recs.iter().map(|r| (r.id.as_str(), r)).collect();
        let fold: Vec<&SubjectRecord> = plan
            .test_ids(0)
            .iter()
            .map(|id| by_id[id.as_str()])
            .collect();
        let t = augment_test_controls(fold.clone(), &ctrl).unwrap();
        assert_eq!(t.subjects.len(), 66);
        assert_eq!((t.composition.pd, t.composition.non_pd), (19, 47));
        let empty = augment_test_controls(fold, &[]).unwrap();
        assert_eq!(empty.subjects.len(), 19);
    }

    #[test]
    fn control_without_gait_is_rejected_by_id() {
        let mut ctrl = controls(2);
        ctrl[1].gait = None;
        let err = augment_test_controls(Vec::new(), &ctrl)
            .unwrap_err()
            .to_string();
        assert!(err.contains("c001") && err.contains("gait"), "{err}");
    }

    #[test]
    fn controls_are_not_split() {
        let mut recs = pd_records(10);
        recs.extend(controls(7));
        let plan = kfold_split(&recs, 5, 0).unwrap();
        assert_eq!(plan.len(), 10);
        assert!(plan.folds.iter().flatten().all(|id| id.starts_with("pd")));
    }

    #[test]
    fn duplicate_ids_and_small_cohorts_are_rejected() {
        let mut recs = pd_records(6);
        recs.push(recs[0].clone());
        assert!(kfold_split(&recs, 5, 0).is_err());
        assert!(kfold_split(&pd_records(4), 5, 0).is_err());
        assert!(kfold_split(&pd_records(4), 1, 0).is_err());
    }

    #[test]
    fn metrics_from_outcomes() {
        use Diagnosis::*;
        let m = Metrics::from_outcomes(&[(Pd, Pd), (Pd, NonPd), (NonPd, NonPd), (NonPd, NonPd)]);
        assert_eq!(m.confusion, [[1, 1], [0, 2]]);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!((m.pd_accuracy, m.non_pd_accuracy), (Some(0.5), Some(1.0)));
        assert_eq!(m.confusion.iter().flatten().sum::<usize>(), m.n);
        let perfect = Metrics::from_outcomes(&[(Pd, Pd), (NonPd, NonPd)]);
        assert_eq!(perfect.accuracy, 1.0);
    }

    proptest! {
        #[test]
        fn folds_partition_the_cohort(n_pd in 0usize..40, n_non in 0usize..40, n_ctrl in 0usize..10, k in 2usize..8, seed in any::<u64>()) {
            prop_assume!(n_pd + n_non >= k);
            let mut recs = pd_records(n_pd);
            recs.extend((0..n_non).map(|i| record(format!("n{i}"), Diagnosis::NonPd, SourceTag::Synthetic)));
            recs.extend(controls(n_ctrl));
            let plan = kfold_split(&recs, k, seed).unwrap();
            prop_assert_eq!(plan.folds.len(), k);
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<&String> = plan.folds.iter().flatten().collect();
            all.sort();
            let mut expected: Vec<&String> = recs.iter().filter(|r| r.source != SourceTag::Control).map(|r| &r.id).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
            for f in 0..k {
                prop_assert_eq!(plan.train_ids(f).len() + plan.test_ids(f).len(), n_pd + n_non);
            }
            prop_assert_eq!(kfold_split(&recs, k, seed).unwrap(), plan);
        }

        #[test]
        fn accuracy_is_mean_of_indicators(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..50)) {
            let outcomes: Vec<_> = pairs.iter().map(|(a, b)| (Diagnosis::from_index(*a), Diagnosis::from_index(*b))).collect();
            let m = Metrics::from_outcomes(&outcomes);
            let hits = pairs.iter().filter(|(a, b)| a == b).count();
            prop_assert_eq!(m.accuracy, hits as f64 / pairs.len() as f64);
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
        }
    }
}
