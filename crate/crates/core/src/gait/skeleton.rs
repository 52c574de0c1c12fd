//! COCO17 keypoint sequences and their text file format.
//!
//! ```text
//! # pdscreen keypoints v1
//! subject <id>
//! frame_rate <hz>
//! frames <T>
//! joints 17
//! <x0 y0 c0 x1 y1 c1 ... x16 y16 c16>     (T lines, 51 reals each)
//! ```
//!
//! Header keys must appear in exactly this order. Coordinates are pixels,
//! confidences lie in `[0, 1]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 17;
pub const KEYPOINT_MAGIC: &str = "# pdscreen keypoints v1";

pub mod joint {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
}

/// One frame: `(x, y, confidence)` per joint.
pub type Frame = [[f64; 3]; NUM_JOINTS];

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    subject_id: String,
    frame_rate: f64,
    frames: Vec<Frame>,
}

impl SkeletonSequence {
    pub fn new(subject_id: impl Into<String>, frame_rate: f64, frames: Vec<Frame>) -> Result<Self> {
        let subject_id = subject_id.into();
        if subject_id.is_empty() || subject_id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidValue(format!(
                "subject id {subject_id:?} must be non-empty without whitespace"
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::InvalidValue(format!("frame rate {frame_rate}")));
        }
        if frames.is_empty() {
            return Err(Error::InvalidValue("sequence has no frames".into()));
        }
        for (t, frame) in frames.iter().enumerate() {
            validate_frame(frame).map_err(|m| Error::InvalidValue(format!("frame {t}: {m}")))?;
        }
        Ok(Self {
            subject_id,
            frame_rate,
            frames,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Applies `f` to every `(x, y)` pair; confidences are kept.
    pub fn map_coords(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let frames = self
            .frames
            .iter()
            .map(|fr| {
                let mut out = *fr;
                for j in out.iter_mut() {
                    let (x, y) = f(j[0], j[1]);
                    j[0] = x;
                    j[1] = y;
                }
                out
            })
            .collect();
        Self::new(self.subject_id.clone(), self.frame_rate, frames)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{KEYPOINT_MAGIC}").unwrap();
        writeln!(out, "subject {}", self.subject_id).unwrap();
        writeln!(out, "frame_rate {}", self.frame_rate).unwrap();
        writeln!(out, "frames {}", self.frames.len()).unwrap();
        writeln!(out, "joints {NUM_JOINTS}").unwrap();
        for frame in &self.frames {
            let line: Vec<String> = frame
                .iter()
                .flat_map(|j| j.iter().map(|v| v.to_string()))
                .collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, magic) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        if magic.trim() != KEYPOINT_MAGIC {
            return Err(err(n, format!("expected header {KEYPOINT_MAGIC:?}")));
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing header field {key:?}")))?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(v), None) if k == key => Ok((n, v.to_string())),
                _ => Err(err(
                    n,
                    format!("expected \"{key} <value>\", found {line:?}"),
                )),
            }
        };
        let (_, subject) = field("subject")?;
        let (n_rate, rate) = field("frame_rate")?;
        let frame_rate: f64 = rate
            .parse()
            .map_err(|_| err(n_rate, format!("bad frame rate {rate:?}")))?;
        let (n_frames, count) = field("frames")?;
        let count: usize = count
            .parse()
            .map_err(|_| err(n_frames, format!("bad frame count {count:?}")))?;
        let (n_joints, joints) = field("joints")?;
        if joints != NUM_JOINTS.to_string() {
            return Err(err(
                n_joints,
                format!("joint count {joints} (COCO17 layout requires {NUM_JOINTS})"),
            ));
        }
        let mut frames = Vec::with_capacity(count);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let t = frames.len();
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| err(n, format!("frame {t}: bad number {tok:?}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != NUM_JOINTS * 3 {
                return Err(err(
                    n,
                    format!(
                        "frame {t}: expected {} values ({NUM_JOINTS} joints x 3), found {} ({} joints)",
                        NUM_JOINTS * 3,
                        values.len(),
                        values.len() as f64 / 3.0
                    ),
                ));
            }
            let mut frame = [[0.0; 3]; NUM_JOINTS];
            for (j, chunk) in values.chunks_exact(3).enumerate() {
                frame[j].copy_from_slice(chunk);
            }
            validate_frame(&frame).map_err(|m| err(n, format!("frame {t}: {m}")))?;
            frames.push(frame);
        }
        if frames.len() != count {
            return Err(err(
                n_frames,
                format!("header declares {count} frames, file has {}", frames.len()),
            ));
        }
        Self::new(subject, frame_rate, frames).map_err(|e| err(0, e.to_string()))
    }
}

fn validate_frame(frame: &Frame) -> std::result::Result<(), String> {
    for (j, [x, y, c]) in frame.iter().enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(format!("joint {j} has non-finite coordinates"));
        }
        if !(0.0..=1.0).contains(c) {
            return Err(format!("joint {j} confidence {c} outside [0, 1]"));
        }
    }
    Ok(())
}

pub fn load_keypoints(path: &Path) -> Result<SkeletonSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SkeletonSequence::parse(&text, path)
}
