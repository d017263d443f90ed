//! Checkpoint container.
//!
//! ```text
//! magic    4 bytes  "DFCK"
//! version  u32      1
//! hlen     u32      length of the JSON header
//! header   hlen bytes of UTF-8 JSON:
//!          { config, step, meta, adam: {config, step} | null, ema_decay: f64 | null }
//! tensors  params, then adam.m and adam.v (if adam), then the EMA shadow (if ema)
//! ```
//!
//! Every tensor group starts with a u32 count; each tensor is `u32 name
//! length, name bytes, u32 rows, u32 cols, rows·cols f32`. Integers and
//! floats are little-endian, tensors row-major.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamW, AdamWConfig, Ema, Model, ModelConfig, ParamStore};
use crate::autodiff::Mat;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DFCK";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("magic mismatch: expected DFCK, found {0:?}")]
    MagicMismatch([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("truncated checkpoint at byte {offset}: needed {needed} more bytes")]
    TruncatedFile { offset: usize, needed: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    /// Free-form metadata: schema name, normalizer, training settings.
    pub meta: serde_json::Value,
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
    pub ema: Option<Ema>,
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    /// Model with EMA weights when present, live weights otherwise.
    pub fn ema_model(&self) -> Model {
        Model {
            config: self.config.clone(),
            params: self
                .ema
                .as_ref()
                .map_or_else(|| self.params.clone(), |e| e.shadow.clone()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            meta: self.meta.clone(),
            adam: self.optimizer.as_ref().map(|o| AdamHeader {
                config: o.config,
                step: o.step,
            }),
            ema_decay: self.ema.as_ref().map(|e| e.decay),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let names = self.params.names();
        put_group(&mut out, names, self.params.values());
        if let Some(o) = &self.optimizer {
            put_group(&mut out, names, &o.m);
            put_group(&mut out, names, &o.v);
        }
        if let Some(e) = &self.ema {
            put_group(&mut out, e.shadow.names(), e.shadow.values());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::MagicMismatch(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionUnsupported(version));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        let params = r.group()?;
        let optimizer = match header.adam {
            Some(a) => {
                let m = r.group()?;
                let v = r.group()?;
                if m.names() != params.names() || v.names() != params.names() {
                    return Err(CheckpointError::Malformed(
                        "optimizer state does not match params".into(),
                    ));
                }
                Some(AdamW {
                    config: a.config,
                    step: a.step,
                    m: m.values().to_vec(),
                    v: v.values().to_vec(),
                })
            }
            None => None,
        };
        let ema = match header.ema_decay {
            Some(decay) => Some(Ema {
                decay,
                shadow: r.group()?,
            }),
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            meta: header.meta,
            params,
            optimizer,
            ema,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    meta: serde_json::Value,
    adam: Option<AdamHeader>,
    ema_decay: Option<f64>,
}

fn put_group(out: &mut Vec<u8>, names: &[String], values: &[Mat]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for (name, v) in names.iter().zip(values) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(v.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(v.ncols() as u32).to_le_bytes());
        for x in v.iter() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::TruncatedFile {
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn group(&mut self) -> Result<ParamStore, CheckpointError> {
        let count = self.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            if store.position(&name).is_some() {
                return Err(CheckpointError::Malformed(format!(
                    "duplicate tensor {name}"
                )));
            }
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let raw = self.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let m = Mat::from_shape_vec((rows, cols), data)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            store.insert(&name, m);
        }
        Ok(store)
    }
}

pub fn write_checkpoint(c: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&c.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            layers: 1,
            hidden_dim: 8,
            ffn_dim: 8,
            heads: 2,
            motion_dim: 3,
            token_vocab: 10,
            ..ModelConfig::desk(3, 10)
        };
        let model = Model::init(config.clone(), 4).unwrap();
        let opt = AdamW::new(AdamWConfig::default(), &model.params);
        let ema = Ema::new(0.99, &model.params);
        Checkpoint {
            config,
            step: 12,
            meta: serde_json::json!({"schema": "chain3"}),
            params: model.params,
            optimizer: Some(opt),
            ema: Some(ema),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step, 12);
        assert_eq!(back.params.names(), c.params.names());
        for (a, b) in back.params.values().iter().zip(c.params.values()) {
            assert!(a
                .iter()
                .zip(b.iter())
                .all(|(x, y)| *x == (*y as f32) as f64));
        }
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::MagicMismatch(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::VersionUnsupported(9))
        ));
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(CheckpointError::TruncatedFile { .. })
        ));
    }
}
