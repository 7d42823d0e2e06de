//! On-disk feature cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "MFFC"
//! u32     format version (currently 1)
//! u64     MFCC config fingerprint
//! u64     LFCC config fingerprint
//! u64     chroma config fingerprint
//! u32     entry count
//! entry*  u32 id length, UTF-8 clip id, u8 kind, u32 rows, u32 cols,
//!         rows*cols f32 values (row-major)
//! ```
//!
//! The header fingerprints describe the full extraction bundle even when
//! only a subset of kinds was extracted; readers that expect a particular
//! configuration must reject mismatching fingerprints.

use super::{FeatureFingerprints, FeatureKind, FeatureMatrix};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

pub const CACHE_MAGIC: &[u8; 4] = b"MFFC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("bad cache magic (expected MFFC)")]
    BadMagic,
    #[error("unsupported cache version {0}")]
    UnsupportedVersion(u32),
    #[error("cache file truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown feature kind byte {0}")]
    BadKind(u8),
    #[error("clip id is not valid UTF-8")]
    BadUtf8,
    #[error(
        "feature fingerprint mismatch for {kind}: expected {expected:#018x}, found {found:#018x}"
    )]
    FingerprintMismatch {
        kind: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("cache miss: no {kind} features for clip '{clip_id}'")]
    CacheMiss { clip_id: String, kind: &'static str },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub clip_id: String,
    pub kind: FeatureKind,
    pub rows: u32,
    pub cols: u32,
    pub data: Vec<f32>,
}

/// In-memory form of a cache file, indexed by (clip id, kind).
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub fingerprints: FeatureFingerprints,
    entries: Vec<CacheEntry>,
    index: HashMap<(String, FeatureKind), usize>,
}

impl FeatureCache {
    pub fn new(fingerprints: FeatureFingerprints) -> Self {
        FeatureCache {
            fingerprints,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn push_matrix(&mut self, clip_id: &str, fm: &FeatureMatrix) {
        self.push(CacheEntry {
            clip_id: clip_id.to_string(),
            kind: fm.kind,
            rows: fm.rows() as u32,
            cols: fm.cols() as u32,
            data: fm.data_f32(),
        });
    }

    pub fn push(&mut self, entry: CacheEntry) {
        let key = (entry.clip_id.clone(), entry.kind);
        assert!(
            !self.index.contains_key(&key),
            "duplicate cache entry for ({}, {:?})",
            key.0,
            key.1
        );
        self.index.insert(key, self.entries.len());
        self.entries.push(entry);
    }

    pub fn get(&self, clip_id: &str, kind: FeatureKind) -> Result<&CacheEntry, CacheError> {
        self.index
            .get(&(clip_id.to_string(), kind))
            .map(|&i| &self.entries[i])
            .ok_or_else(|| CacheError::CacheMiss {
                clip_id: clip_id.to_string(),
                kind: kind.name(),
            })
    }

    pub fn contains(&self, clip_id: &str, kind: FeatureKind) -> bool {
        self.index.contains_key(&(clip_id.to_string(), kind))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprints.mfcc.to_le_bytes());
        out.extend_from_slice(&self.fingerprints.lfcc.to_le_bytes());
        out.extend_from_slice(&self.fingerprints.chroma.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.clip_id.len() as u32).to_le_bytes());
            out.extend_from_slice(e.clip_id.as_bytes());
            out.push(e.kind.byte());
            out.extend_from_slice(&e.rows.to_le_bytes());
            out.extend_from_slice(&e.cols.to_le_bytes());
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CacheError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(CacheError::BadMagic);
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(CacheError::UnsupportedVersion(version));
        }
        let fingerprints = FeatureFingerprints {
            mfcc: r.u64()?,
            lfcc: r.u64()?,
            chroma: r.u64()?,
        };
        let count = r.u32()?;
        let mut cache = FeatureCache::new(fingerprints);
        for _ in 0..count {
            let id_len = r.u32()? as usize;
            let clip_id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| CacheError::BadUtf8)?
                .to_string();
            let kind_byte = r.u8()?;
            let kind = FeatureKind::from_byte(kind_byte).ok_or(CacheError::BadKind(kind_byte))?;
            let rows = r.u32()?;
            let cols = r.u32()?;
            let n = rows as usize * cols as usize;
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            cache.push(CacheEntry {
                clip_id,
                kind,
                rows,
                cols,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(CacheError::Truncated(r.pos));
        }
        Ok(cache)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), CacheError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, CacheError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Reads a cache and rejects it unless the header fingerprints match the
    /// expected extraction configuration exactly.
    pub fn read_file_checked(
        path: &Path,
        expected: FeatureFingerprints,
    ) -> Result<Self, CacheError> {
        let cache = Self::read_file(path)?;
        cache.check_fingerprints(expected)?;
        Ok(cache)
    }

    pub fn check_fingerprints(&self, expected: FeatureFingerprints) -> Result<(), CacheError> {
        for kind in FeatureKind::ALL {
            let (e, f) = (expected.for_kind(kind), self.fingerprints.for_kind(kind));
            if e != f {
                return Err(CacheError::FingerprintMismatch {
                    kind: kind.name(),
                    expected: e,
                    found: f,
                });
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheError> {
        if self.pos + n > self.bytes.len() {
            return Err(CacheError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CacheError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CacheError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64, CacheError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}
