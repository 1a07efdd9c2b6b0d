use std::collections::HashMap;
use std::path::Path;

use super::{read_file, write_file, ByteReader, DataError};
use crate::matrix::RealMatrix;

pub const FEATURE_MAGIC: [u8; 4] = *b"CUSF";
pub const FEATURE_VERSION: u32 = 1;

/// Id-keyed feature rows stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    dim: usize,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self, DataError> {
        if ids.is_empty() || dim == 0 {
            return Err(DataError::InvalidTable(format!(
                "need at least one row and one column, got {} x {dim}",
                ids.len()
            )));
        }
        if dim > u32::MAX as usize {
            return Err(DataError::InvalidTable(format!(
                "dimension {dim} too large"
            )));
        }
        if values.len() != ids.len() * dim {
            return Err(DataError::InvalidTable(format!(
                "{} values for {} rows of width {dim}",
                values.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.len() > u16::MAX as usize {
                return Err(DataError::InvalidTable(format!(
                    "id of {} bytes exceeds the 65535-byte limit",
                    id.len()
                )));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(DataError::InvalidTable(format!("duplicate id {id:?}")));
            }
            if values[i * dim..(i + 1) * dim]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Err(DataError::InvalidTable(format!(
                    "non-finite value for id {id:?}"
                )));
            }
        }
        Ok(Self {
            ids,
            dim,
            values,
            index,
        })
    }

    /// Stores `m` at 32-bit precision.
    pub fn from_matrix(ids: Vec<String>, m: &RealMatrix) -> Result<Self, DataError> {
        if ids.len() != m.rows() {
            return Err(DataError::InvalidTable(format!(
                "{} ids for {} rows",
                ids.len(),
                m.rows()
            )));
        }
        Self::new(ids, m.cols(), m.data().iter().map(|&v| v as f32).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// All rows upconverted to `f64`.
    pub fn to_matrix(&self) -> RealMatrix {
        RealMatrix::from_fn(self.len(), self.dim, |i, j| {
            f64::from(self.values[i * self.dim + j])
        })
    }

    /// Rows for `ids`, in order, upconverted to `f64`.
    pub fn gather(&self, ids: &[&str]) -> Result<RealMatrix, DataError> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let i = self
                .index_of(id)
                .ok_or_else(|| DataError::MissingFeature((*id).to_string()))?;
            data.extend(self.row(i).iter().map(|&v| f64::from(v)));
        }
        RealMatrix::new(ids.len(), self.dim, data)
            .map_err(|e| DataError::InvalidTable(e.to_string()))
    }
}

/// Serializes a table: 20-byte header, then `(id_len u16, id, dim × f32)` records, all little-endian.
pub fn encode_features(table: &FeatureTable) -> Vec<u8> {
    let record = 2 + table.dim * 4;
    let mut out = Vec::with_capacity(20 + table.len() * (record + 16));
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for (i, id) in table.ids.iter().enumerate() {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in table.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureTable, DataError> {
    let mut r = ByteReader::new(bytes);
    let magic = r.array::<4>()?;
    if magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    let version_at = r.offset();
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(DataError::VersionUnsupported {
            version,
            offset: version_at,
        });
    }
    let n_at = r.offset();
    let n = r.u64()?;
    let d_at = r.offset();
    let d = r.u32()? as usize;
    if n == 0 {
        return Err(DataError::InvalidHeader {
            offset: n_at,
            reason: "row count is zero".into(),
        });
    }
    if d == 0 {
        return Err(DataError::InvalidHeader {
            offset: d_at,
            reason: "dimension is zero".into(),
        });
    }
    // Each record is at least 2 + 4d bytes; reject impossible counts before allocating.
    let min_record = 2 + 4 * d as u64;
    let remaining = (bytes.len() - r.offset()) as u64;
    if n.saturating_mul(min_record) > remaining {
        return Err(DataError::TruncatedFile {
            offset: bytes.len(),
            needed: (n.saturating_mul(min_record) - remaining).min(usize::MAX as u64) as usize,
        });
    }
    let n = n as usize;
    let mut ids = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * d);
    let mut seen = HashMap::with_capacity(n);
    for _ in 0..n {
        let record_at = r.offset();
        let len = r.u16()? as usize;
        let id_at = r.offset();
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| DataError::InvalidUtf8 { offset: id_at })?
            .to_string();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(DataError::DuplicateId {
                id,
                offset: record_at,
            });
        }
        for _ in 0..d {
            let at = r.offset();
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue { id, offset: at });
            }
            values.push(v);
        }
        ids.push(id);
    }
    r.finish()?;
    FeatureTable::new(ids, d, values)
}

pub fn write_features(path: impl AsRef<Path>, table: &FeatureTable) -> Result<(), DataError> {
    write_file(path.as_ref(), &encode_features(table))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTable, DataError> {
    decode_features(&read_file(path.as_ref())?)
}
