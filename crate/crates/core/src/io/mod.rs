//! Binary motion files and on-disk corpora.
//!
//! Both binary formats share a 56-byte little-endian header:
//!
//! ```text
//! offset  size  field
//!      0     4  magic         "DFM1" native motion, "DFC1" continuous frames
//!      4     4  version       u32, currently 1
//!      8     4  frames T      u32
//!     12     4  width D       u32
//!     16     4  fps           f32
//!     20     4  extra         u32: identity_dim (DFM1) or flags (DFC1, bit 0 = normalized)
//!     24    32  schema_hash   SHA-256 of the canonical schema document
//! ```
//!
//! A DFM1 payload is `f32[identity_dim]` followed by `f32[T·D]` row-major
//! frames; a DFC1 payload is `f32[T·D]` only.

mod corpus;
mod synth;

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::repr::{ContinuousMotion, MotionSequence};
use crate::schema::SkeletonSchema;

pub use corpus::{read_corpus, write_corpus, Corpus, CorpusItem, CorpusManifest, ManifestEntry};
pub use synth::{class_separation, synth_dataset, SynthClass, SynthConfig};

pub const MOTION_MAGIC: &[u8; 4] = b"DFM1";
pub const CONTINUOUS_MAGIC: &[u8; 4] = b"DFC1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 56;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("truncated file: expected {expected} bytes, found {actual} (data ends at byte offset {actual})")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("schema hash mismatch: file {found}, schema `{schema}` {expected}")]
    SchemaHashMismatch {
        schema: String,
        expected: String,
        found: String,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionFileHeader {
    pub magic: [u8; 4],
    pub version: u32,
    pub frames: u32,
    pub dim: u32,
    pub fps: f32,
    pub extra: u32,
    pub schema_hash: [u8; 32],
}

impl MotionFileHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&self.magic);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.frames.to_le_bytes());
        out[12..16].copy_from_slice(&self.dim.to_le_bytes());
        out[16..20].copy_from_slice(&self.fps.to_le_bytes());
        out[20..24].copy_from_slice(&self.extra.to_le_bytes());
        out[24..56].copy_from_slice(&self.schema_hash);
        out
    }

    /// Parses and checks magic and version.
    pub fn parse(bytes: &[u8], magic: &[u8; 4]) -> Result<Self, IoError> {
        if bytes.len() >= 4 && &bytes[0..4] != magic {
            return Err(IoError::MagicMismatch {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(IoError::TruncatedFile {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(IoError::VersionUnsupported(version));
        }
        let mut schema_hash = [0u8; 32];
        schema_hash.copy_from_slice(&bytes[24..56]);
        Ok(MotionFileHeader {
            magic: *magic,
            version,
            frames: u32_at(8),
            dim: u32_at(12),
            fps: f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")),
            extra: u32_at(20),
            schema_hash,
        })
    }
}

fn put_f32s<'a>(out: &mut Vec<u8>, values: impl Iterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn get_f32s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect()
}

fn check_hash(
    header: &MotionFileHeader,
    schema: &SkeletonSchema,
    strict: bool,
    warnings: &mut Vec<String>,
) -> Result<(), IoError> {
    let expected = schema.hash();
    if header.schema_hash != expected {
        let err = IoError::SchemaHashMismatch {
            schema: schema.name().to_string(),
            expected: hex::encode(expected),
            found: hex::encode(header.schema_hash),
        };
        if strict {
            return Err(err);
        }
        log::warn!("{err}");
        warnings.push(err.to_string());
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], values: usize) -> Result<&'a [u8], IoError> {
    let expected = HEADER_LEN + 4 * values;
    if bytes.len() < expected {
        return Err(IoError::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IoError::Dimension(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    Ok(&bytes[HEADER_LEN..])
}

pub fn encode_motion(m: &MotionSequence, schema: &SkeletonSchema) -> Result<Vec<u8>, IoError> {
    m.check_dims(schema)
        .map_err(|e| IoError::Dimension(e.to_string()))?;
    let header = MotionFileHeader {
        magic: *MOTION_MAGIC,
        version: FORMAT_VERSION,
        frames: m.len() as u32,
        dim: m.frames.ncols() as u32,
        fps: m.fps as f32,
        extra: m.identity.len() as u32,
        schema_hash: schema.hash(),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (m.identity.len() + m.frames.len()));
    out.extend_from_slice(&header.to_bytes());
    put_f32s(&mut out, m.identity.iter());
    put_f32s(&mut out, m.frames.iter());
    Ok(out)
}

/// Decoded motion plus any non-fatal warnings (schema hash mismatch when
/// not strict).
pub fn decode_motion(
    bytes: &[u8],
    schema: &SkeletonSchema,
    strict: bool,
) -> Result<(MotionSequence, Vec<String>), IoError> {
    let header = MotionFileHeader::parse(bytes, MOTION_MAGIC)?;
    let mut warnings = Vec::new();
    check_hash(&header, schema, strict, &mut warnings)?;
    let (t, d, k) = (
        header.frames as usize,
        header.dim as usize,
        header.extra as usize,
    );
    if d != schema.native_pose_dim() {
        return Err(IoError::Dimension(format!(
            "file width {d}, schema `{}` expects {}",
            schema.name(),
            schema.native_pose_dim()
        )));
    }
    let data = payload(bytes, k + t * d)?;
    let identity = get_f32s(&data[..4 * k]);
    let frames = Array2::from_shape_vec((t, d), get_f32s(&data[4 * k..])).expect("sized payload");
    let m = MotionSequence {
        schema_id: schema.name().to_string(),
        fps: header.fps as f64,
        frames,
        identity,
    };
    m.check_dims(schema)
        .map_err(|e| IoError::Dimension(e.to_string()))?;
    Ok((m, warnings))
}

pub fn write_motion(
    m: &MotionSequence,
    schema: &SkeletonSchema,
    path: &Path,
) -> Result<(), IoError> {
    std::fs::write(path, encode_motion(m, schema)?).map_err(io_err(path))
}

pub fn read_motion(
    path: &Path,
    schema: &SkeletonSchema,
    strict: bool,
) -> Result<(MotionSequence, Vec<String>), IoError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_motion(&bytes, schema, strict)
}

pub fn encode_continuous(
    c: &ContinuousMotion,
    schema: &SkeletonSchema,
) -> Result<Vec<u8>, IoError> {
    if c.frames.ncols() != schema.continuous_dim() {
        return Err(IoError::Dimension(format!(
            "continuous width {}, schema `{}` expects {}",
            c.frames.ncols(),
            schema.name(),
            schema.continuous_dim()
        )));
    }
    let header = MotionFileHeader {
        magic: *CONTINUOUS_MAGIC,
        version: FORMAT_VERSION,
        frames: c.len() as u32,
        dim: c.frames.ncols() as u32,
        fps: c.fps as f32,
        extra: u32::from(c.normalized),
        schema_hash: schema.hash(),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * c.frames.len());
    out.extend_from_slice(&header.to_bytes());
    put_f32s(&mut out, c.frames.iter());
    Ok(out)
}

pub fn decode_continuous(
    bytes: &[u8],
    schema: &SkeletonSchema,
    strict: bool,
) -> Result<(ContinuousMotion, Vec<String>), IoError> {
    let header = MotionFileHeader::parse(bytes, CONTINUOUS_MAGIC)?;
    let mut warnings = Vec::new();
    check_hash(&header, schema, strict, &mut warnings)?;
    let (t, d) = (header.frames as usize, header.dim as usize);
    if d != schema.continuous_dim() {
        return Err(IoError::Dimension(format!(
            "file width {d}, schema `{}` expects {}",
            schema.name(),
            schema.continuous_dim()
        )));
    }
    if header.extra > 1 {
        return Err(IoError::Dimension(format!(
            "unknown flags {:#x}",
            header.extra
        )));
    }
    let data = payload(bytes, t * d)?;
    let frames = Array2::from_shape_vec((t, d), get_f32s(data)).expect("sized payload");
    Ok((
        ContinuousMotion {
            schema_id: schema.name().to_string(),
            fps: header.fps as f64,
            frames,
            normalized: header.extra == 1,
        },
        warnings,
    ))
}

pub fn write_continuous(
    c: &ContinuousMotion,
    schema: &SkeletonSchema,
    path: &Path,
) -> Result<(), IoError> {
    std::fs::write(path, encode_continuous(c, schema)?).map_err(io_err(path))
}

pub fn read_continuous(
    path: &Path,
    schema: &SkeletonSchema,
    strict: bool,
) -> Result<(ContinuousMotion, Vec<String>), IoError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_continuous(&bytes, schema, strict)
}

/// Every `*.dfm` file directly inside `dir`, in file-name order.
pub fn read_motion_dir(
    dir: &Path,
    schema: &SkeletonSchema,
    strict: bool,
) -> Result<Vec<(PathBuf, MotionSequence)>, IoError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dfm"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_motion(&p, schema, strict).map(|(m, _)| (p, m)))
        .collect()
}
