//! Trained-head checkpoints: `b"HEAD"`, `u32` version, `u8` head kind,
//! `u32` input dim, `u32` class count, `u32` layer count (0 for single-layer
//! heads), then every parameter tensor as little-endian `f32` in declaration
//! order.

use std::path::Path;

use super::{AggregationHead, DenseHead, Head, HeadKind, LinearHead, DENSE_HIDDEN, LINEAR_HIDDEN};
use crate::error::{Error, Result};
use crate::nn::{Affine, Differentiable, Matrix};

pub const HEAD_MAGIC: [u8; 4] = *b"HEAD";
pub const HEAD_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 1 + 4 * 3;

pub fn encode_checkpoint(head: &Head) -> Vec<u8> {
    let layer_count = match head {
        Head::Aggregate(h) => h.layer_count(),
        _ => 0,
    };
    let tensors = head.tensors();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * head.param_count());
    out.extend_from_slice(&HEAD_MAGIC);
    out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
    out.push(head.kind().code());
    for dim in [head.input_dim(), head.num_classes(), layer_count] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for t in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Head> {
    if bytes.len() < 4 || bytes[..4] != HEAD_MAGIC {
        return Err(Error::CorruptRecord("not a head checkpoint".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptRecord("checkpoint header truncated".into()));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != HEAD_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = HeadKind::from_code(bytes[8])
        .ok_or_else(|| Error::CorruptRecord(format!("unknown head kind {}", bytes[8])))?;
    let d = u32_at(9) as usize;
    let c = u32_at(13) as usize;
    let layers = u32_at(17) as usize;
    if d == 0 || c == 0 || (kind == HeadKind::Aggregate) != (layers > 0) {
        return Err(Error::CorruptRecord(
            "inconsistent checkpoint dimensions".into(),
        ));
    }

    let mut head = match kind {
        HeadKind::Linear => Head::Linear(LinearHead {
            hidden: Affine::zeros(LINEAR_HIDDEN, d),
            out: Affine::zeros(c, LINEAR_HIDDEN),
        }),
        HeadKind::Dense => Head::Dense(blank_dense(d, c)),
        HeadKind::Aggregate => Head::Aggregate(AggregationHead {
            layer_logits: vec![0.0; layers],
            dense: blank_dense(d, c),
        }),
    };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != head.param_count() * 4 {
        return Err(Error::CorruptRecord(format!(
            "checkpoint payload holds {} bytes, expected {}",
            payload.len(),
            head.param_count() * 4
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let tensors: Vec<&mut [f32]> = match &mut head {
        Head::Linear(h) => h.tensors_mut(),
        Head::Dense(h) => h.tensors_mut(),
        Head::Aggregate(h) => h.tensors_mut(),
    };
    for t in tensors {
        for slot in t.iter_mut() {
            *slot = values.next().expect("payload length checked");
        }
    }
    Ok(head)
}

fn blank_dense(d: usize, c: usize) -> DenseHead {
    DenseHead {
        pw1: Affine::zeros(DENSE_HIDDEN, d),
        pw2: Affine {
            weight: Matrix::zeros(DENSE_HIDDEN, DENSE_HIDDEN),
            bias: vec![0.0; DENSE_HIDDEN],
        },
        out: Affine::zeros(c, DENSE_HIDDEN),
    }
}

pub fn write_checkpoint(head: &Head, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_checkpoint(head)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Head> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
