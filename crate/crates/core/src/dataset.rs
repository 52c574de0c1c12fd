//! Subject records and line-delimited manifests.
//!
//! A manifest holds one JSON object per line. An optional first line
//! `{"format_version": 1, "config_hash": "..."}` identifies the producer.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::ExpressionLabel;
use crate::gait::{load_keypoints, SkeletonSequence};
use crate::io::{read_png, FORMAT_VERSION};
use crate::latent::ImageTensor;
use crate::types::Diagnosis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Clinical,
    Control,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub path: PathBuf,
    pub expression: ExpressionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRecord {
    pub id: String,
    pub label: Diagnosis,
    #[serde(default)]
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub gait: Option<PathBuf>,
    pub source: SourceTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    format_version: u32,
    config_hash: String,
}

/// Read-only view shared by records and loaded subjects.
pub trait SubjectInfo {
    fn id(&self) -> &str;
    fn label(&self) -> Diagnosis;
    fn source(&self) -> SourceTag;
    fn has_gait(&self) -> bool;
    fn has_face(&self) -> bool;
}

impl SubjectInfo for SubjectRecord {
    fn id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> Diagnosis {
        self.label
    }

    fn source(&self) -> SourceTag {
        self.source
    }

    fn has_gait(&self) -> bool {
        self.gait.is_some()
    }

    fn has_face(&self) -> bool {
        !self.images.is_empty()
    }
}

pub(crate) fn ensure_unique_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Dataset(format!("duplicate subject id {id:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<SubjectRecord>,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
    pub config_hash: Option<String>,
}

impl DatasetManifest {
    pub fn new(records: Vec<SubjectRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        ensure_unique_ids(records.iter().map(|r| r.id.as_str()))?;
        Ok(Self {
            records,
            base_dir: base_dir.into(),
            config_hash: None,
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut config_hash = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            };
            if records.is_empty() && config_hash.is_none() && line.contains("\"format_version\"") {
                let h: ManifestHeader = serde_json::from_str(line).map_err(parse_err)?;
                if h.format_version != FORMAT_VERSION {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: format!("unsupported manifest version {}", h.format_version),
                    });
                }
                config_hash = Some(h.config_hash);
                continue;
            }
            records.push(serde_json::from_str(line).map_err(parse_err)?);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut m = Self::new(records, base)?;
        m.config_hash = config_hash;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        if let Some(h) = &self.config_hash {
            out.push_str(&serde_json::to_string(&ManifestHeader {
                format_version: FORMAT_VERSION,
                config_hash: h.clone(),
            })?);
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_subject(&self, record: &SubjectRecord) -> Result<Subject> {
        let images = record
            .images
            .iter()
            .map(|e| Ok((e.expression, read_png(&self.resolve(&e.path))?)))
            .collect::<Result<Vec<_>>>()?;
        let gait = record
            .gait
            .as_ref()
            .map(|p| load_keypoints(&self.resolve(p)))
            .transpose()?;
        Ok(Subject {
            id: record.id.clone(),
            label: record.label,
            source: record.source,
            images,
            gait,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Subject>> {
        use rayon::prelude::*;
        self.records
            .par_iter()
            .map(|r| self.load_subject(r))
            .collect()
    }
}

/// A subject with its data in memory.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub label: Diagnosis,
    pub source: SourceTag,
    pub images: Vec<(ExpressionLabel, ImageTensor)>,
    pub gait: Option<SkeletonSequence>,
}

impl Subject {
    pub fn face_images(&self) -> Vec<ImageTensor> {
        self.images.iter().map(|(_, im)| im.clone()).collect()
    }
}

impl SubjectInfo for Subject {
    fn id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> Diagnosis {
        self.label
    }

    fn source(&self) -> SourceTag {
        self.source
    }

    fn has_gait(&self) -> bool {
        self.gait.is_some()
    }

    fn has_face(&self) -> bool {
        !self.images.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            label: Diagnosis::Pd,
            images: vec![ImageEntry {
                path: "img/a.png".into(),
                expression: ExpressionLabel::Happiness,
            }],
            gait: Some("gait/a.txt".into()),
            source: SourceTag::Clinical,
        }
    }

    #[test]
    fn jsonl_round_trip_with_header() {
        let mut m = DatasetManifest::new(vec![record("a"), record("b")], "/data").unwrap();
        m.config_hash = Some("abc".into());
        let text = m.to_jsonl().unwrap();
        assert!(text.lines().next().unwrap().contains("format_version"));
        let back = DatasetManifest::parse(&text, Path::new("/data/manifest.jsonl")).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.resolve(Path::new("img/a.png")),
            PathBuf::from("/data/img/a.png")
        );
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(DatasetManifest::new(vec![record("a"), record("a")], ".").is_err());
    }

    #[test]
    fn bad_line_reports_its_number() {
        let text = format!(
            "{}\n{{\"id\": 3}}\n",
            serde_json::to_string(&record("a")).unwrap()
        );
        match DatasetManifest::parse(&text, Path::new("m.jsonl")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_strings_match_manifest_schema() {
        let json = serde_json::to_string(&record("a")).unwrap();
        assert!(json.contains("\"label\":\"PD\""));
        assert!(json.contains("\"source\":\"clinical\""));
        assert!(json.contains("\"expression\":\"happiness\""));
    }
}
