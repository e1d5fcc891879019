//! `.fstr` feature files.
//!
//! Layout, all integers little-endian:
//!
//! | field         | encoding                      |
//! |---------------|-------------------------------|
//! | magic         | `b"FSTR"`                     |
//! | version       | `u32`, currently 1            |
//! | model_id      | `u16` length + UTF-8 bytes    |
//! | utterance_id  | `u16` length + UTF-8 bytes    |
//! | layer_count   | `u16`                         |
//! | time_steps    | `u32`                         |
//! | feature_dim   | `u32`                         |
//! | payload       | `f32[layer_count·T·D]`, layer-major, then time-major |

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::catalog;
use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const FEATURE_MAGIC: [u8; 4] = *b"FSTR";
pub const FEATURE_VERSION: u32 = 1;

/// Hidden states of one utterance from every layer of one extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub utterance_id: String,
    pub model_id: String,
    pub layer_count: usize,
    pub time_steps: usize,
    pub feature_dim: usize,
    pub data: Vec<f32>,
}

impl FeatureRecord {
    pub fn new(
        utterance_id: impl Into<String>,
        model_id: impl Into<String>,
        layer_count: usize,
        time_steps: usize,
        feature_dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let record = Self {
            utterance_id: utterance_id.into(),
            model_id: model_id.into(),
            layer_count,
            time_steps,
            feature_dim,
            data,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, id) in [
            ("utterance_id", &self.utterance_id),
            ("model_id", &self.model_id),
        ] {
            if id.is_empty() {
                return Err(Error::InvalidRecord(format!("{what} is empty")));
            }
            if id.len() > u16::MAX as usize {
                return Err(Error::InvalidRecord(format!(
                    "{what} longer than 65535 bytes"
                )));
            }
        }
        if self.layer_count == 0 || self.layer_count > u16::MAX as usize {
            return Err(Error::InvalidRecord(format!(
                "layer_count {} outside 1..=65535",
                self.layer_count
            )));
        }
        if self.time_steps == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidRecord(
                "time_steps and feature_dim must be at least 1".into(),
            ));
        }
        if self.time_steps > u32::MAX as usize || self.feature_dim > u32::MAX as usize {
            return Err(Error::InvalidRecord("dimension exceeds u32".into()));
        }
        let expected = self.layer_count * self.time_steps * self.feature_dim;
        if self.data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: self.data.len(),
            });
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(info) = catalog::model(&self.model_id) {
            if self.layer_count != info.layer_count() {
                return Err(Error::InvalidRecord(format!(
                    "{} features must have {} layers, found {}",
                    info.name,
                    info.layer_count(),
                    self.layer_count
                )));
            }
        }
        Ok(())
    }

    fn layer_len(&self) -> usize {
        self.time_steps * self.feature_dim
    }

    pub fn layer_slice(&self, layer: usize) -> &[f32] {
        let n = self.layer_len();
        &self.data[layer * n..(layer + 1) * n]
    }

    /// One layer as a `[T][D]` matrix.
    pub fn layer(&self, layer: usize) -> Result<Matrix> {
        if layer >= self.layer_count {
            return Err(Error::Shape(format!(
                "layer {layer} requested from a record with {} layers",
                self.layer_count
            )));
        }
        Matrix::new(
            self.time_steps,
            self.feature_dim,
            self.layer_slice(layer).to_vec(),
        )
    }

    /// Every layer, zeroth first.
    pub fn stack(&self) -> Vec<Matrix> {
        (0..self.layer_count)
            .map(|l| {
                Matrix::new(
                    self.time_steps,
                    self.feature_dim,
                    self.layer_slice(l).to_vec(),
                )
            })
            .collect::<Result<_>>()
            .expect("validated record has consistent layer sizes")
    }

    pub fn header_len(&self) -> usize {
        4 + 4 + 2 + self.model_id.len() + 2 + self.utterance_id.len() + 2 + 4 + 4
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.data.len() * 4
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        for id in [&self.model_id, &self.utterance_id] {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out.extend_from_slice(&(self.layer_count as u16).to_le_bytes());
        out.extend_from_slice(&(self.time_steps as u32).to_le_bytes());
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let header = RecordHeader::read_from(&mut cursor)?;
        let expected = header.payload_len() * 4;
        if cursor.len() != expected {
            return Err(Error::CorruptRecord(format!(
                "payload holds {} bytes, header implies {expected}",
                cursor.len()
            )));
        }
        let data = cursor
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let record = Self {
            utterance_id: header.utterance_id,
            model_id: header.model_id,
            layer_count: header.layer_count,
            time_steps: header.time_steps,
            feature_dim: header.feature_dim,
            data,
        };
        record.validate().map_err(|e| match e {
            Error::NonFinite { .. } | Error::InvalidRecord(_) => {
                Error::CorruptRecord(e.to_string())
            }
            other => other,
        })?;
        Ok(record)
    }
}

/// Everything in a feature file except the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordHeader {
    pub model_id: String,
    pub utterance_id: String,
    pub layer_count: usize,
    pub time_steps: usize,
    pub feature_dim: usize,
    /// Bytes preceding the payload.
    pub byte_len: usize,
}

impl RecordHeader {
    pub fn payload_len(&self) -> usize {
        self.layer_count * self.time_steps * self.feature_dim
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader
            .read_exact(&mut magic)
            .map_err(|_| Error::NotFeatureFile)?;
        if magic != FEATURE_MAGIC {
            return Err(Error::NotFeatureFile);
        }
        let version = read_u32(reader)?;
        if version != FEATURE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let model_id = read_string(reader, "model_id")?;
        let utterance_id = read_string(reader, "utterance_id")?;
        let layer_count = read_u16(reader)? as usize;
        let time_steps = read_u32(reader)? as usize;
        let feature_dim = read_u32(reader)? as usize;
        let byte_len = 4 + 4 + 2 + model_id.len() + 2 + utterance_id.len() + 2 + 4 + 4;
        Ok(Self {
            model_id,
            utterance_id,
            layer_count,
            time_steps,
            feature_dim,
            byte_len,
        })
    }
}

fn truncated(_: std::io::Error) -> Error {
    Error::CorruptRecord("header truncated".into())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u16(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::CorruptRecord(format!("{what} is not UTF-8")))
}

pub fn write_feature_record(record: &FeatureRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = record.to_bytes()?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_record(path: impl AsRef<Path>) -> Result<FeatureRecord> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureRecord::from_bytes(&bytes)
}

pub fn read_feature_header(path: impl AsRef<Path>) -> Result<RecordHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    RecordHeader::read_from(&mut BufReader::new(file))
}

/// Reads a single layer without loading the rest of the payload.
pub fn read_feature_layer(path: impl AsRef<Path>, layer: usize) -> Result<(RecordHeader, Matrix)> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
    let header = RecordHeader::read_from(&mut BufReader::new(&mut file))?;
    if file_len != header.byte_len + header.payload_len() * 4 {
        return Err(Error::CorruptRecord(format!(
            "file holds {file_len} bytes, header implies {}",
            header.byte_len + header.payload_len() * 4
        )));
    }
    if layer >= header.layer_count {
        return Err(Error::Shape(format!(
            "layer {layer} requested from {} with {} layers",
            path.display(),
            header.layer_count
        )));
    }
    let per_layer = header.time_steps * header.feature_dim;
    let offset = header.byte_len + layer * per_layer * 4;
    file.seek(SeekFrom::Start(offset as u64))
        .map_err(|e| Error::io(path, e))?;
    let mut buf = vec![0u8; per_layer * 4];
    file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let data: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptRecord("non-finite value in payload".into()));
    }
    let m = Matrix::new(header.time_steps, header.feature_dim, data)?;
    Ok((header, m))
}
