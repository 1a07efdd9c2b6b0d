//! On-disk formats: binary feature tables, text pair/relevance/STS lists, and
//! binary checkpoints. Readers reject malformed input with byte or line positions.

mod checkpoint;
mod features;
mod text;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use features::{
    decode_features, encode_features, read_features, write_features, FeatureTable, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use text::{
    encode_pairs, encode_relevance, parse_pairs, parse_relevance, parse_sts, read_pairs,
    read_relevance, read_sts, write_pairs, write_relevance, Pair, RelevanceMap, StsPair,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {version} at byte {offset}")]
    VersionUnsupported { version: u32, offset: usize },
    #[error("file truncated at byte {offset}: needed {needed} more bytes")]
    TruncatedFile { offset: usize, needed: usize },
    #[error("{count} unexpected trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("invalid header at byte {offset}: {reason}")]
    InvalidHeader { offset: usize, reason: String },
    #[error("duplicate id {id:?} at byte {offset}")]
    DuplicateId { id: String, offset: usize },
    #[error("non-finite value for id {id:?} at byte {offset}")]
    NonFiniteValue { id: String, offset: usize },
    #[error("invalid UTF-8 in id at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("invalid feature table: {0}")]
    InvalidTable(String),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("unknown id {id:?} (line {line})")]
    UnknownId { id: String, line: usize },
    #[error("no feature row for id {0:?}")]
    MissingFeature(String),
    #[error("query {0:?} has no relevant items in the gallery")]
    NoRelevant(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

/// Bounds-checked little-endian reader over a byte buffer.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(DataError::TruncatedFile {
                offset: self.buf.len(),
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], DataError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn finish(&self) -> Result<(), DataError> {
        if self.pos != self.buf.len() {
            return Err(DataError::TrailingBytes {
                offset: self.pos,
                count: self.buf.len() - self.pos,
            });
        }
        Ok(())
    }
}
