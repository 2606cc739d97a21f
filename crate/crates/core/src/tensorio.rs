//! Point clouds, activation stores and pair manifests.
//!
//! Activation store layout (all integers little-endian):
//!
//! ```text
//! 0..8    magic "REPSTOR1"
//! 8..10   format version (u16) = 1
//! 10..14  record count (u32)
//! 14..16  reserved, zero
//! u32 byte length + UTF-8 JSON {"model": str, "n_layers": int, "dim": int}
//! per record:
//!   u32 id byte length + UTF-8 sample id
//!   u16 layer
//!   u32 token count T
//!   T * dim f32, token-major
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"REPSTOR1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {found:?}, expected \"REPSTOR1\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("reserved header bytes must be zero")]
    ReservedNonZero,
    #[error("truncated payload while reading {what} at byte {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("{0} unexpected trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("invalid metadata block: {0}")]
    InvalidMetadata(String),
    #[error("dtype mismatch: store declares {declared:?}, only float32 is supported")]
    DtypeMismatch { declared: String },
    #[error("sample id is not valid UTF-8 at byte {offset}")]
    InvalidSampleId { offset: usize },
    #[error("duplicate record for sample {sample_id:?} at layer {layer}")]
    DuplicateRecord { sample_id: String, layer: u16 },
    #[error("layer {layer} out of range for a store with {n_layers} layers")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("record {sample_id:?} has {got} values, expected tokens*dim = {expected}")]
    BlockShape {
        sample_id: String,
        got: usize,
        expected: usize,
    },
    #[error("record {sample_id:?} has zero tokens")]
    EmptyRecord { sample_id: String },
    #[error("manifest references unknown {side} sample {id:?}")]
    DanglingId { side: &'static str, id: String },
    #[error("manifest contains duplicate pair ({0:?}, {1:?})")]
    DuplicatePair(String, String),
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
}

/// An `n_samples x dim` matrix of representations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    n_samples: usize,
    dim: usize,
    data: Vec<f64>,
    sample_ids: Vec<String>,
}

impl PointCloud {
    /// Builds a cloud from row-major data. Rejects non-finite values,
    /// fewer than three samples and repeated ids.
    pub fn new(data: Vec<f64>, dim: usize, sample_ids: Vec<String>) -> Result<Self, StoreError> {
        let n = sample_ids.len();
        if dim == 0 {
            return Err(StoreError::InvalidCloud("dim must be positive".into()));
        }
        if n < 3 {
            return Err(StoreError::InvalidCloud(format!(
                "need at least 3 samples, got {n}"
            )));
        }
        if data.len() != n * dim {
            return Err(StoreError::InvalidCloud(format!(
                "data has {} values, expected {n} x {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::InvalidCloud(format!(
                "non-finite value at sample {}, feature {}",
                pos / dim,
                pos % dim
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(StoreError::InvalidCloud(format!("duplicate sample id {id:?}")));
            }
        }
        Ok(Self {
            n_samples: n,
            dim,
            data,
            sample_ids,
        })
    }

    /// Same as [`PointCloud::new`] with ids `"0"`, `"1"`, ...
    pub fn from_data(data: Vec<f64>, dim: usize) -> Result<Self, StoreError> {
        let n = data.len().checked_div(dim).unwrap_or(0);
        Self::new(data, dim, (0..n).map(|i| i.to_string()).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, StoreError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(StoreError::InvalidCloud("ragged rows".into()));
        }
        Self::from_data(rows.concat(), dim)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self, StoreError> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.dim) {
            return Err(StoreError::InvalidCloud(format!("column {c} out of range")));
        }
        let mut data = Vec::with_capacity(self.n_samples * columns.len());
        for i in 0..self.n_samples {
            let row = self.row(i);
            data.extend(columns.iter().map(|&c| row[c]));
        }
        Self::new(data, columns.len(), self.sample_ids.clone())
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, StoreError> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.n_samples {
                return Err(StoreError::InvalidCloud(format!("row {r} out of range")));
            }
            data.extend_from_slice(self.row(r));
            ids.push(self.sample_ids[r].clone());
        }
        Self::new(data, self.dim, ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub model: String,
    pub n_layers: usize,
    pub dim: usize,
    /// Optional payload type tag written by some producers; only float32
    /// variants are accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<String>,
}

impl StoreMetadata {
    pub fn new(model: impl Into<String>, n_layers: usize, dim: usize) -> Self {
        Self {
            model: model.into(),
            n_layers,
            dim,
            dtype: None,
        }
    }

    fn check(&self) -> Result<(), StoreError> {
        if let Some(dtype) = &self.dtype {
            if !matches!(dtype.as_str(), "float32" | "f32" | "<f4") {
                return Err(StoreError::DtypeMismatch {
                    declared: dtype.clone(),
                });
            }
        }
        if self.dim == 0 {
            return Err(StoreError::InvalidMetadata("dim must be positive".into()));
        }
        if self.n_layers == 0 || self.n_layers > usize::from(u16::MAX) + 1 {
            return Err(StoreError::InvalidMetadata(format!(
                "n_layers must be in 1..=65536, got {}",
                self.n_layers
            )));
        }
        Ok(())
    }
}

/// One owned `(sample, layer)` block of token activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub sample_id: String,
    pub layer: u16,
    pub tokens: usize,
    /// `tokens x dim` values, token-major.
    pub block: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct RecordEntry {
    sample_id: String,
    layer: u16,
    tokens: usize,
    /// Offset of the first payload byte inside `ActivationStore::records`.
    payload: usize,
}

/// A ragged collection of per-sample, per-layer activation blocks.
///
/// Records are kept in their encoded on-disk form and decoded on access, so
/// a loaded store can be written back byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStore {
    metadata: StoreMetadata,
    metadata_json: String,
    records: Vec<u8>,
    entries: Vec<RecordEntry>,
    index: HashMap<(String, u16), usize>,
}

/// Borrowed view of one record inside a store.
#[derive(Debug, Clone, Copy)]
pub struct RecordRef<'a> {
    pub sample_id: &'a str,
    pub layer: u16,
    pub tokens: usize,
    dim: usize,
    payload: &'a [u8],
}

impl<'a> RecordRef<'a> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, token: usize, feature: usize) -> f32 {
        let at = (token * self.dim + feature) * 4;
        f32::from_le_bytes(self.payload[at..at + 4].try_into().unwrap())
    }

    /// Decodes one token vector, widening to f64.
    pub fn token_f64(&self, token: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.add_token_into(token, &mut out);
        out
    }

    /// Adds token `token` into `acc` element-wise.
    pub fn add_token_into(&self, token: usize, acc: &mut [f64]) {
        let start = token * self.dim * 4;
        let bytes = &self.payload[start..start + self.dim * 4];
        for (a, b) in acc.iter_mut().zip(bytes.chunks_exact(4)) {
            *a += f64::from(f32::from_le_bytes(b.try_into().unwrap()));
        }
    }

    pub fn block(&self) -> Vec<f32> {
        self.payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    }

    pub fn to_record(&self) -> ActivationRecord {
        ActivationRecord {
            sample_id: self.sample_id.to_string(),
            layer: self.layer,
            tokens: self.tokens,
            block: self.block(),
        }
    }
}

impl ActivationStore {
    pub fn new(metadata: StoreMetadata) -> Result<Self, StoreError> {
        metadata.check()?;
        let metadata_json =
            serde_json::to_string(&metadata).map_err(|e| StoreError::InvalidMetadata(e.to_string()))?;
        Ok(Self {
            metadata,
            metadata_json,
            records: Vec::new(),
            entries: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn model(&self) -> &str {
        &self.metadata.model
    }

    pub fn n_layers(&self) -> usize {
        self.metadata.n_layers
    }

    pub fn dim(&self) -> usize {
        self.metadata.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a record. The record is encoded immediately.
    pub fn push(&mut self, record: ActivationRecord) -> Result<(), StoreError> {
        let ActivationRecord {
            sample_id,
            layer,
            tokens,
            block,
        } = record;
        if usize::from(layer) >= self.metadata.n_layers {
            return Err(StoreError::LayerOutOfRange {
                layer: layer.into(),
                n_layers: self.metadata.n_layers,
            });
        }
        if tokens == 0 {
            return Err(StoreError::EmptyRecord { sample_id });
        }
        let expected = tokens * self.metadata.dim;
        if block.len() != expected {
            return Err(StoreError::BlockShape {
                sample_id,
                got: block.len(),
                expected,
            });
        }
        if tokens > u32::MAX as usize || sample_id.len() > u32::MAX as usize {
            return Err(StoreError::InvalidMetadata("record too large".into()));
        }
        let key = (sample_id, layer);
        if self.index.contains_key(&key) {
            return Err(StoreError::DuplicateRecord {
                sample_id: key.0,
                layer,
            });
        }
        let buf = &mut self.records;
        buf.extend_from_slice(&(key.0.len() as u32).to_le_bytes());
        buf.extend_from_slice(key.0.as_bytes());
        buf.extend_from_slice(&layer.to_le_bytes());
        buf.extend_from_slice(&(tokens as u32).to_le_bytes());
        let payload = buf.len();
        buf.reserve(block.len() * 4);
        for v in &block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.index.insert(key.clone(), self.entries.len());
        self.entries.push(RecordEntry {
            sample_id: key.0,
            layer,
            tokens,
            payload,
        });
        Ok(())
    }

    fn view<'s>(&'s self, entry: &'s RecordEntry) -> RecordRef<'s> {
        let len = entry.tokens * self.metadata.dim * 4;
        RecordRef {
            sample_id: &entry.sample_id,
            layer: entry.layer,
            tokens: entry.tokens,
            dim: self.metadata.dim,
            payload: &self.records[entry.payload..entry.payload + len],
        }
    }

    pub fn record(&self, sample_id: &str, layer: u16) -> Option<RecordRef<'_>> {
        // HashMap<(String, u16)> cannot be probed with a borrowed key pair.
        self.index
            .get(&(sample_id.to_string(), layer))
            .map(|&i| self.view(&self.entries[i]))
    }

    /// Records in file order.
    pub fn records(&self) -> impl Iterator<Item = RecordRef<'_>> {
        self.entries.iter().map(|e| self.view(e))
    }

    pub fn contains_sample(&self, sample_id: &str) -> bool {
        (0..self.metadata.n_layers).any(|l| self.index.contains_key(&(sample_id.to_string(), l as u16)))
    }

    /// Distinct sample ids in order of first appearance.
    pub fn sample_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.sample_id.as_str()))
            .map(|e| e.sample_id.as_str())
            .collect()
    }

    /// Encodes the full file image.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata_json.as_bytes();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 + meta.len() + self.records.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&self.records);
        out
    }

    /// Parses a full file image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8, "magic")?;
        if magic != MAGIC {
            return Err(StoreError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let version = cur.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let count = cur.u32("record count")? as usize;
        if cur.u16("reserved")? != 0 {
            return Err(StoreError::ReservedNonZero);
        }
        let meta_len = cur.u32("metadata length")? as usize;
        let meta_bytes = cur.take(meta_len, "metadata")?;
        let metadata_json = std::str::from_utf8(meta_bytes)
            .map_err(|e| StoreError::InvalidMetadata(e.to_string()))?
            .to_string();
        let metadata: StoreMetadata =
            serde_json::from_str(&metadata_json).map_err(|e| StoreError::InvalidMetadata(e.to_string()))?;
        metadata.check()?;

        let records_start = cur.pos;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        let mut index = HashMap::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id_len = cur.u32("sample id length")? as usize;
            let id_at = cur.pos;
            let id = std::str::from_utf8(cur.take(id_len, "sample id")?)
                .map_err(|_| StoreError::InvalidSampleId { offset: id_at })?
                .to_string();
            let layer = cur.u16("layer")?;
            if usize::from(layer) >= metadata.n_layers {
                return Err(StoreError::LayerOutOfRange {
                    layer: layer.into(),
                    n_layers: metadata.n_layers,
                });
            }
            let tokens = cur.u32("token count")? as usize;
            if tokens == 0 {
                return Err(StoreError::EmptyRecord { sample_id: id });
            }
            let payload = cur.pos - records_start;
            let len = tokens
                .checked_mul(metadata.dim)
                .and_then(|v| v.checked_mul(4))
                .ok_or(StoreError::Truncated {
                    what: "record payload",
                    offset: cur.pos,
                })?;
            cur.take(len, "record payload")?;
            let key = (id, layer);
            if index.contains_key(&key) {
                return Err(StoreError::DuplicateRecord {
                    sample_id: key.0,
                    layer,
                });
            }
            index.insert(key.clone(), entries.len());
            entries.push(RecordEntry {
                sample_id: key.0,
                layer,
                tokens,
                payload,
            });
        }
        if cur.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - cur.pos));
        }
        Ok(Self {
            metadata,
            metadata_json,
            records: bytes[records_start..].to_vec(),
            entries,
            index,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], StoreError> {
        let end =
            self.pos
                .checked_add(n)
                .filter(|&e| e <= self.bytes.len())
                .ok_or(StoreError::Truncated {
                    what,
                    offset: self.pos,
                })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_store(path: impl AsRef<Path>) -> Result<ActivationStore, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    ActivationStore::from_bytes(&bytes)
}

pub fn write_store(store: &ActivationStore, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    fs::write(path, store.to_bytes()).map_err(io_err(path))
}

/// Which sample of the left store corresponds to which sample of the right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairManifest {
    pub left_source: String,
    pub right_source: String,
    pub pairs: Vec<(String, String)>,
}

impl PairManifest {
    /// Pairs every id with itself, in the given order.
    pub fn identity<S: AsRef<str>>(ids: &[S], source: &str) -> Self {
        Self {
            left_source: source.to_string(),
            right_source: source.to_string(),
            pairs: ids
                .iter()
                .map(|s| (s.as_ref().to_string(), s.as_ref().to_string()))
                .collect(),
        }
    }

    /// Swaps the roles of the two sides.
    pub fn flipped(&self) -> Self {
        Self {
            left_source: self.right_source.clone(),
            right_source: self.left_source.clone(),
            pairs: self.pairs.iter().map(|(l, r)| (r.clone(), l.clone())).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Checks that every referenced id exists in its store and that no pair
/// repeats.
pub fn validate_manifest(
    manifest: &PairManifest,
    left: &ActivationStore,
    right: &ActivationStore,
) -> Result<(), StoreError> {
    let left_ids: HashSet<&str> = left.sample_ids().into_iter().collect();
    let right_ids: HashSet<&str> = right.sample_ids().into_iter().collect();
    let mut seen = HashSet::with_capacity(manifest.pairs.len());
    for (l, r) in &manifest.pairs {
        if !left_ids.contains(l.as_str()) {
            return Err(StoreError::DanglingId {
                side: "left",
                id: l.clone(),
            });
        }
        if !right_ids.contains(r.as_str()) {
            return Err(StoreError::DanglingId {
                side: "right",
                id: r.clone(),
            });
        }
        if !seen.insert((l.as_str(), r.as_str())) {
            return Err(StoreError::DuplicatePair(l.clone(), r.clone()));
        }
    }
    Ok(())
}
