//! Checkpoint files.
//!
//! ```text
//! "ICONCK" | version: u8 | '\n'
//! header: one line of JSON | '\n'
//! { name_len: u16, name, len: u32, value * len }*   values at the model's width
//! sha256 of every preceding byte (32 bytes)
//! ```
//!
//! Blocks are the named parameter tensors in layout order, followed by
//! `adam.m` and `adam.v` when optimizer state is saved.

use super::{IconModel, ModelConfig};
use crate::error::{IconError, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"ICONCK";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Model weights plus optional optimizer state and free-form trainer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: IconModel<T>,
    pub step: u64,
    pub adam: Option<(Vec<T>, Vec<T>)>,
    pub train_state: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u8,
    scalar: String,
    config: ModelConfig,
    step: u64,
    has_optimizer: bool,
    train_state: serde_json::Value,
}

fn put_block<T: Scalar>(buf: &mut Vec<u8>, name: &str, v: &[T]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for &x in v {
        if T::NAME == "f32" {
            buf.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        } else {
            buf.extend_from_slice(&x.f64().to_le_bytes());
        }
    }
}

pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        scalar: T::NAME.into(),
        config: ck.model.config,
        step: ck.step,
        has_optimizer: ck.adam.is_some(),
        train_state: ck.train_state.clone(),
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    buf.push(b'\n');
    buf.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
    buf.push(b'\n');
    for (name, off, len) in ck.model.tensors() {
        put_block(&mut buf, name, &ck.model.params[off..off + len]);
    }
    if let Some((m, v)) = &ck.adam {
        put_block(&mut buf, "adam.m", m);
        put_block(&mut buf, "adam.v", v);
    }
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(IconError::Schema("checkpoint ends early".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn block<T: Scalar>(&mut self, expect: &str, width: usize) -> Result<Vec<T>> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let name = self.take(n)?;
        if name != expect.as_bytes() {
            return Err(IconError::Schema(format!("expected block '{expect}'")));
        }
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let raw = self.take(len * width)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                } else {
                    T::of(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect())
    }
}

/// Parse a checkpoint. Weights stored at either width load into either scalar type.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let m = CHECKPOINT_MAGIC.len();
    if bytes.len() < m + 2 || &bytes[..m] != CHECKPOINT_MAGIC {
        return Err(IconError::Schema("not a checkpoint file".into()));
    }
    if bytes[m] != CHECKPOINT_VERSION {
        return Err(IconError::VersionMismatch { found: bytes[m], expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < m + 2 + 32 {
        return Err(IconError::Checksum("checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(IconError::Checksum("checkpoint".into()));
    }
    let start = m + 2;
    let end = body[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| IconError::Schema("missing checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(&body[start..start + end])
        .map_err(|e| IconError::Schema(format!("bad checkpoint header: {e}")))?;
    let width = match header.scalar.as_str() {
        "f32" => 4,
        "f64" => 8,
        s => return Err(IconError::Schema(format!("unknown scalar type {s}"))),
    };
    let mut cur = Cursor { buf: body, pos: start + end + 1 };
    let template = IconModel::<T>::from_params(header.config, vec![T::zero(); header.config.param_count()])?;
    let mut params = vec![T::zero(); template.num_params()];
    for (name, off, len) in template.tensors() {
        let v: Vec<T> = cur.block(name, width)?;
        if v.len() != len {
            return Err(IconError::Schema(format!("tensor '{name}' has {} values, expected {len}", v.len())));
        }
        params[off..off + len].copy_from_slice(&v);
    }
    let adam = if header.has_optimizer {
        let m: Vec<T> = cur.block("adam.m", width)?;
        let v: Vec<T> = cur.block("adam.v", width)?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(IconError::Schema("optimizer state has the wrong length".into()));
        }
        Some((m, v))
    } else {
        None
    };
    if cur.pos != body.len() {
        return Err(IconError::Schema("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint {
        model: IconModel::from_params(header.config, params)?,
        step: header.step,
        adam,
        train_state: header.train_state,
    })
}

pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}
