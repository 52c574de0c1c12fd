//! On-disk artifacts. Every file carries a format version and the hash of
//! the configuration that produced it.
//!
//! * binary latent files: magic `PDLT`, version, config hash, count, dim,
//!   then little-endian `f64` values;
//! * binary checkpoints: magic `PDCK`, version, a JSON header (kind, config
//!   echo, config hash, parameter count), then little-endian `f64` params;
//! * JSON artifacts: an envelope `{format_version, kind, config_hash, body}`;
//! * images: 16-bit PNG (grayscale or RGB).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{ImageShape, ImageTensor, LatentVector};
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;
const LATENT_MAGIC: &[u8; 4] = b"PDLT";
const CHECKPOINT_MAGIC: &[u8; 4] = b"PDCK";
const HASH_LEN: usize = 64;

/// SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize + ?Sized>(config: &T) -> Result<String> {
    Ok(seed::hash_bytes(&serde_json::to_vec(config)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "{}: expected magic {:?}, found {:?}",
            path.display(),
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version} (expected {FORMAT_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

fn write_hash(w: &mut impl Write, hash: &str, path: &Path) -> Result<()> {
    let mut buf = [b'0'; HASH_LEN];
    let bytes = hash.as_bytes();
    if bytes.len() > HASH_LEN {
        return Err(Error::Format(format!(
            "config hash longer than {HASH_LEN} bytes"
        )));
    }
    buf[..bytes.len()].copy_from_slice(bytes);
    w.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub config_hash: String,
    pub latents: Vec<LatentVector>,
}

pub fn write_latents(path: &Path, latents: &[LatentVector], config_hash: &str) -> Result<()> {
    let dim = latents.first().map_or(0, LatentVector::dim);
    if let Some(bad) = latents.iter().find(|l| l.dim() != dim) {
        return Err(Error::DimensionMismatch {
            context: "latent file records",
            expected: dim,
            actual: bad.dim(),
        });
    }
    let mut w = create(path)?;
    let e = |err| Error::io(path, err);
    w.write_all(LATENT_MAGIC).map_err(e)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(e)?;
    write_hash(&mut w, config_hash, path)?;
    w.write_u64::<LittleEndian>(latents.len() as u64)
        .map_err(e)?;
    w.write_u64::<LittleEndian>(dim as u64).map_err(e)?;
    for l in latents {
        for v in l.as_slice() {
            w.write_f64::<LittleEndian>(*v).map_err(e)?;
        }
    }
    w.flush().map_err(e)
}

pub fn read_latents(path: &Path) -> Result<LatentFile> {
    let mut r = open(path)?;
    read_magic(&mut r, LATENT_MAGIC, path)?;
    let e = |err| Error::io(path, err);
    let mut hash = [0u8; HASH_LEN];
    r.read_exact(&mut hash).map_err(e)?;
    let count = r.read_u64::<LittleEndian>().map_err(e)? as usize;
    let dim = r.read_u64::<LittleEndian>().map_err(e)? as usize;
    let mut latents = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut values = vec![0.0; dim];
        r.read_f64_into::<LittleEndian>(&mut values).map_err(e)?;
        latents.push(LatentVector::new(values)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(e)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after {count} latents of dim {dim}",
            path.display(),
            rest.len()
        )));
    }
    Ok(LatentFile {
        config_hash: String::from_utf8_lossy(&hash).into_owned(),
        latents,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    kind: String,
    config_hash: String,
    config: serde_json::Value,
    param_count: usize,
}

/// A model checkpoint: flat parameters plus the configuration that shapes
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<C> {
    pub kind: String,
    pub config_hash: String,
    pub config: C,
    pub params: Vec<f64>,
}

pub fn write_checkpoint<C: Serialize>(
    path: &Path,
    kind: &str,
    config: &C,
    params: &[f64],
) -> Result<String> {
    let hash = config_hash(config)?;
    let header = serde_json::to_vec(&CheckpointHeader {
        kind: kind.to_owned(),
        config_hash: hash.clone(),
        config: serde_json::to_value(config)?,
        param_count: params.len(),
    })?;
    let mut w = create(path)?;
    let e = |err| Error::io(path, err);
    w.write_all(CHECKPOINT_MAGIC).map_err(e)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(e)?;
    w.write_u64::<LittleEndian>(header.len() as u64)
        .map_err(e)?;
    w.write_all(&header).map_err(e)?;
    for v in params {
        w.write_f64::<LittleEndian>(*v).map_err(e)?;
    }
    w.flush().map_err(e)?;
    Ok(hash)
}

pub fn read_checkpoint<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<Checkpoint<C>> {
    let mut r = open(path)?;
    read_magic(&mut r, CHECKPOINT_MAGIC, path)?;
    let e = |err| Error::io(path, err);
    let len = r.read_u64::<LittleEndian>().map_err(e)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(e)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    if header.kind != kind {
        return Err(Error::Format(format!(
            "{}: checkpoint holds a {} model, expected {kind}",
            path.display(),
            header.kind
        )));
    }
    let mut params = vec![0.0; header.param_count];
    r.read_f64_into::<LittleEndian>(&mut params).map_err(e)?;
    Ok(Checkpoint {
        kind: header.kind,
        config_hash: header.config_hash,
        config: serde_json::from_value(header.config)?,
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonArtifact<T> {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub body: T,
}

pub fn write_json_artifact<T: Serialize>(
    path: &Path,
    kind: &str,
    config_hash: &str,
    body: &T,
) -> Result<()> {
    let mut w = create(path)?;
    let envelope = JsonArtifact {
        format_version: FORMAT_VERSION,
        kind: kind.to_owned(),
        config_hash: config_hash.to_owned(),
        body,
    };
    serde_json::to_writer_pretty(&mut w, &envelope)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<JsonArtifact<T>> {
    let a: JsonArtifact<T> = serde_json::from_reader(open(path)?)?;
    if a.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {}",
            path.display(),
            a.format_version
        )));
    }
    if a.kind != kind {
        return Err(Error::Format(format!(
            "{}: holds {}, expected {kind}",
            path.display(),
            a.kind
        )));
    }
    Ok(a)
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * f64::from(u16::MAX)).round() as u16
}

pub fn write_png(path: &Path, image: &ImageTensor) -> Result<()> {
    let s = image.shape();
    let data: Vec<u16> = image.pixels().iter().map(|v| to_u16(*v)).collect();
    let (w, h) = (s.width as u32, s.height as u32);
    let dynamic = match s.channels {
        1 => image::DynamicImage::ImageLuma16(
            image::ImageBuffer::from_raw(w, h, data).expect("buffer length matches shape"),
        ),
        3 => image::DynamicImage::ImageRgb16(
            image::ImageBuffer::from_raw(w, h, data).expect("buffer length matches shape"),
        ),
        c => {
            return Err(Error::Format(format!(
                "PNG export supports 1 or 3 channels, not {c}"
            )))
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    dynamic.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw): (usize, Vec<u16>) = match img.color().channel_count() {
        1 | 2 => (1, img.into_luma16().into_raw()),
        _ => (3, img.into_rgb16().into_raw()),
    };
    let scale = f64::from(u16::MAX);
    ImageTensor::new(
        ImageShape::new(h, w, channels),
        raw.into_iter().map(|v| f64::from(v) / scale).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.bin");
        let latents = vec![
            LatentVector::new(vec![1.0, -2.5, 3.25]).unwrap(),
            LatentVector::new(vec![0.0, 1e-300, -7.0]).unwrap(),
        ];
        let hash = config_hash(&"cfg").unwrap();
        write_latents(&path, &latents, &hash).unwrap();
        let back = read_latents(&path).unwrap();
        assert_eq!(back.latents, latents);
        assert_eq!(back.config_hash, hash);
    }

    #[test]
    fn mixed_latent_dims_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let latents = vec![LatentVector::zeros(2), LatentVector::zeros(3)];
        assert!(write_latents(&dir.path().join("z.bin"), &latents, "h").is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = vec![3usize, 4];
        let hash = write_checkpoint(&path, "gait", &cfg, &[0.5, -1.0]).unwrap();
        let ck: Checkpoint<Vec<usize>> = read_checkpoint(&path, "gait").unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.params, vec![0.5, -1.0]);
        assert_eq!(ck.config_hash, hash);
        assert!(read_checkpoint::<Vec<usize>>(&path, "face").is_err());
        assert!(read_latents(&path).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let shape = ImageShape::new(3, 2, 1);
        let img = ImageTensor::new(shape, vec![0.0, 0.1, 0.25, 0.5, 0.9, 1.0]).unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.shape(), shape);
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn json_artifact_checks_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        write_json_artifact(&path, "report", "abc", &vec![1, 2]).unwrap();
        let a: JsonArtifact<Vec<i32>> = read_json_artifact(&path, "report").unwrap();
        assert_eq!(
            (a.body, a.format_version, a.config_hash.as_str()),
            (vec![1, 2], 1, "abc")
        );
        assert!(read_json_artifact::<Vec<i32>>(&path, "other").is_err());
    }
}
