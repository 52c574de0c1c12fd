use std::path::{Path, PathBuf};

use pdscreen_core::direction::FitConfig;
use pdscreen_core::fusion::FusionTrainConfig;
use pdscreen_core::io::config_hash;
use pdscreen_core::latent::InversionConfig;
use pdscreen_core::pipeline::{
    BenchmarkConfig, DirectionStageConfig, FaceStageConfig, GaitStageConfig,
};
use pdscreen_core::synthetic::{CohortSpec, FaceWorldSpec};
use serde::{Deserialize, Serialize};

/// Rejected configuration, located by section and key.
#[derive(Debug)]
pub struct ConfigError {
    pub section: String,
    pub key: Option<String>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.key {
            Some(k) => write!(
                f,
                "config section [{}], key `{k}`: {}",
                self.section, self.message
            ),
            None => write!(f, "config section [{}]: {}", self.section, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub folds: usize,
    /// Leave subjects whose prediction fails out of the metrics instead of
    /// aborting.
    pub skip_failures: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            folds: 5,
            skip_failures: false,
        }
    }
}

/// The whole pipeline's settings. Every section is optional and falls back
/// to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub face_world: FaceWorldSpec,
    pub directions: DirectionStageConfig,
    pub inversion: InversionConfig,
    pub face: FaceStageConfig,
    pub gait: GaitStageConfig,
    pub cohort: CohortSpec,
    pub fusion: FusionTrainConfig,
    pub evaluation: EvaluationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let bench = BenchmarkConfig::default();
        Self {
            seed: bench.seed,
            out_dir: PathBuf::from("runs/default"),
            workers: None,
            face_world: bench.face_world,
            directions: bench.directions,
            inversion: InversionConfig::default(),
            face: bench.face,
            gait: bench.gait,
            cohort: bench.cohort,
            fusion: bench.fusion,
            evaluation: EvaluationSection::default(),
        }
    }
}

/// Header of the innermost `[section]` or `[[section]]` that starts before
/// `offset`.
fn section_at(text: &str, offset: usize) -> String {
    let mut section = String::from("root");
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if pos > offset {
            break;
        }
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_owned();
        }
        pos += line.len();
    }
    section
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_owned())
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().trim().to_owned();
            let (section, spanned) = match e.span() {
                Some(span) => {
                    let key = text[span.clone()].trim().trim_matches('"').to_owned();
                    (
                        section_at(text, span.start),
                        (!key.is_empty() && !key.contains('\n')).then_some(key),
                    )
                }
                None => ("root".to_owned(), None),
            };
            let key = unknown_field(&message).or(spanned);
            ConfigError {
                section,
                key,
                message,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(Self::parse(&text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |section: &str, r: pdscreen_core::Result<()>| {
            r.map_err(|e| ConfigError {
                section: section.to_owned(),
                key: None,
                message: e.to_string(),
            })
        };
        wrap("face_world", self.face_world.validate())?;
        wrap("inversion", self.inversion.validate())?;
        wrap("face.inversion", self.face.inversion.validate())?;
        wrap("face.backbone", self.face.backbone.validate())?;
        wrap("face.train", self.face.train.validate())?;
        wrap("gait.model", self.gait.model.validate())?;
        wrap("gait.train", self.gait.train.validate())?;
        wrap("cohort", self.cohort.validate())?;
        wrap("fusion", self.fusion.validate())?;
        if self.evaluation.folds < 2 {
            return Err(ConfigError {
                section: "evaluation".into(),
                key: Some("folds".into()),
                message: format!("need at least 2 folds, got {}", self.evaluation.folds),
            });
        }
        if self.workers == Some(0) {
            return Err(ConfigError {
                section: "root".into(),
                key: Some("workers".into()),
                message: "worker count must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn fit(&self) -> FitConfig {
        self.directions.fit
    }

    /// Hash of everything that affects results; the output directory and
    /// worker count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = None;
        config_hash(&c).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = PipelineConfig::parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.fusion.learning_rate, 0.001);
        assert_eq!(c.fusion.epochs, 100);
        assert_eq!(c.inversion.layer_weights, vec![1.0; 4]);
        assert_eq!(c.inversion.mse_weight, 1.0);
    }

    #[test]
    fn effective_config_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_names_section_and_key() {
        let e = PipelineConfig::parse("seed = 1\n[fusion]\nepochs = 3\nlearning_rat = 0.1\n")
            .unwrap_err();
        assert_eq!(e.section, "fusion");
        assert_eq!(e.key.as_deref(), Some("learning_rat"));
        let e = PipelineConfig::parse("[gait.train]\nepoch = 3\n").unwrap_err();
        assert_eq!(e.section, "gait.train");
        assert_eq!(e.key.as_deref(), Some("epoch"));
    }

    #[test]
    fn invalid_value_names_section() {
        let e = PipelineConfig::parse("[evaluation]\nfolds = 1\n").unwrap_err();
        assert_eq!(
            (e.section.as_str(), e.key.as_deref()),
            ("evaluation", Some("folds"))
        );
        let e = PipelineConfig::parse("[fusion]\nlearning_rate = -1.0\n").unwrap_err();
        assert_eq!(e.section, "fusion");
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
    }
}
