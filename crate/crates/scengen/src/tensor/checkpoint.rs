//! Checkpoint file format: named arrays with raw little-endian payloads.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SGCKPT01"
//! u32     meta length, then meta bytes (UTF-8, typically JSON)
//! u32     entry count
//! entry*  u16 name length, name bytes,
//!         u8 dtype (0 = f32, 1 = f64), u8 rank, u32 * rank extents,
//!         raw element payload (numel * dtype width bytes)
//! ```
//!
//! Simple enough to read from any language; the dtype byte makes f32 and
//! f64 arrays self-describing.

use super::{numel_of, Dtype, Element, Tensor};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SGCKPT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported dtype tag {0}")]
    BadDtype(u8),
    #[error("dtype mismatch: file has {found:?}, expected {expected:?}")]
    DtypeMismatch { found: Dtype, expected: Dtype },
    #[error("truncated file")]
    Truncated,
    #[error("meta is not valid utf-8")]
    BadMeta,
}

/// Named arrays plus a free-form metadata string.
#[derive(Debug, Clone)]
pub struct Checkpoint<E: Element = f64> {
    pub meta: String,
    pub entries: Vec<(String, Tensor<E>)>,
}

impl<E: Element> Checkpoint<E> {
    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn save_checkpoint<E: Element>(path: &Path, ckpt: &Checkpoint<E>) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let meta = ckpt.meta.as_bytes();
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta);
    buf.extend_from_slice(&(ckpt.entries.len() as u32).to_le_bytes());
    for (name, tensor) in &ckpt.entries {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(E::DTYPE.tag());
        buf.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut buf);
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<Checkpoint<E>, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *at + n > bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };

    if take(&mut at, 8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let meta_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let meta = std::str::from_utf8(take(&mut at, meta_len)?)
        .map_err(|_| CheckpointError::BadMeta)?
        .to_string();
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut at, name_len)?)
            .map_err(|_| CheckpointError::BadMeta)?
            .to_string();
        let tag = take(&mut at, 1)?[0];
        let dtype = match tag {
            0 => Dtype::F32,
            1 => Dtype::F64,
            other => return Err(CheckpointError::BadDtype(other)),
        };
        if dtype != E::DTYPE {
            return Err(CheckpointError::DtypeMismatch { found: dtype, expected: E::DTYPE });
        }
        let rank = take(&mut at, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize);
        }
        let width = dtype.byte_width();
        let numel = numel_of(&shape);
        let payload = take(&mut at, numel * width)?;
        let data: Vec<E> = payload.chunks_exact(width).map(E::read_le).collect();
        entries.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(Checkpoint { meta, entries })
}
