//! Checkpoint serialization.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic   "MFAA"
//! u32     version (currently 1)
//! u8      model kind (1 = fusion network, 2 = baseline)
//! u32     config length, then that many bytes of UTF-8 JSON holding the
//!         architecture, feature configuration, fingerprints, and seed
//! u32     tensor count
//! tensor* u32 name length, UTF-8 name, u32 rank, rank u32 dims,
//!         row-major f32 values
//! u32     CRC32 of every preceding byte
//! ```
//!
//! Parameters are stored in f32; `load(save(m))` reproduces an f32 model
//! bitwise. Normalization statistics ride along as `norm.*` tensors.

use super::{AnyModel, ArchConfig, ModelKind, NormStats};
use crate::features::{FeatureConfig, FeatureFingerprints};
use crate::nn::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFAA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic (expected MFAA)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("checkpoint truncated at byte {0}")]
    TruncatedFile(usize),
    #[error("unknown model kind byte {0}")]
    BadKindByte(u8),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    ModelKindMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("malformed config block: {0}")]
    BadConfig(String),
    #[error("checkpoint tensor problem: {0}")]
    BadTensor(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    arch: ArchConfig,
    features: FeatureConfig,
    fingerprints: FeatureFingerprints,
    seed: u64,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn norm_tensors(kind: &str, stats: &NormStats<f32>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    vec![
        (format!("norm.{kind}.mean"), vec![stats.mean.len()], stats.mean.clone()),
        (format!("norm.{kind}.std"), vec![stats.std.len()], stats.std.clone()),
    ]
}

pub fn save_checkpoint(model: &AnyModel<f32>) -> Vec<u8> {
    let config = ConfigBlock {
        arch: *model.arch(),
        features: *model.feature_config(),
        fingerprints: model.fingerprints(),
        seed: model.seed(),
    };
    let json = serde_json::to_vec(&config).expect("config serialization");

    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = model
        .named_params()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec(), t.values().to_vec()))
        .collect();
    match model {
        AnyModel::Mfaan(m) => {
            if let Some(norm) = &m.norm {
                for (kind, stats) in ["mfcc", "lfcc", "chroma"].iter().zip(norm) {
                    tensors.extend(norm_tensors(kind, stats));
                }
            }
        }
        AnyModel::Baseline(m) => {
            if let Some(stats) = &m.norm {
                tensors.extend(norm_tensors("mfcc", stats));
            }
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(model.kind().byte());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, values) in &tensors {
        push_tensor(&mut out, name, shape, values);
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&out);
    out.extend_from_slice(&hasher.finalize().to_le_bytes());
    out
}

pub fn save_checkpoint_file(model: &AnyModel<f32>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, save_checkpoint(model))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::TruncatedFile(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<AnyModel<f32>, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::TruncatedFile(bytes.len()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 17 {
        // magic + version + kind + config len + crc
        return Err(CheckpointError::TruncatedFile(bytes.len()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let kind_byte = r.u8()?;
    let kind = ModelKind::from_byte(kind_byte).ok_or(CheckpointError::BadKindByte(kind_byte))?;
    let json_len = r.u32()? as usize;
    let config: ConfigBlock = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;

    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::BadTensor("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let values: Vec<f32> = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(name.clone(), (shape, values)).is_some() {
            return Err(CheckpointError::BadTensor(format!("duplicate tensor '{name}'")));
        }
    }
    if r.pos != body.len() {
        return Err(CheckpointError::BadTensor(format!(
            "{} trailing bytes after the tensor table",
            body.len() - r.pos
        )));
    }

    let mut model = AnyModel::<f32>::init(
        kind,
        config.arch,
        config.features,
        config.fingerprints,
        config.seed,
    );
    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    for (name, tensor) in names.iter().zip(model.param_tensors_mut()) {
        let (shape, values) = tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::BadTensor(format!("missing tensor '{name}'")))?;
        if shape != tensor.shape() {
            return Err(CheckpointError::BadTensor(format!(
                "tensor '{name}' has shape {shape:?}, expected {:?}",
                tensor.shape()
            )));
        }
        *tensor = Tensor::new(shape, values);
    }

    let mut take_norm = |kind: &str| -> Result<Option<NormStats<f32>>, CheckpointError> {
        let mean = tensors.remove(&format!("norm.{kind}.mean"));
        let std = tensors.remove(&format!("norm.{kind}.std"));
        match (mean, std) {
            (Some((_, mean)), Some((_, std))) => {
                if mean.len() != std.len() {
                    return Err(CheckpointError::BadTensor(format!(
                        "norm.{kind} mean/std length mismatch"
                    )));
                }
                Ok(Some(NormStats { mean, std }))
            }
            (None, None) => Ok(None),
            _ => Err(CheckpointError::BadTensor(format!(
                "norm.{kind} is missing one of mean/std"
            ))),
        }
    };
    match &mut model {
        AnyModel::Mfaan(m) => {
            let parts = (take_norm("mfcc")?, take_norm("lfcc")?, take_norm("chroma")?);
            m.norm = match parts {
                (Some(a), Some(b), Some(c)) => Some([a, b, c]),
                (None, None, None) => None,
                _ => {
                    return Err(CheckpointError::BadTensor(
                        "normalization tensors present for only some paths".into(),
                    ))
                }
            };
        }
        AnyModel::Baseline(m) => m.norm = take_norm("mfcc")?,
    }
    if let Some(name) = tensors.keys().next() {
        return Err(CheckpointError::BadTensor(format!("unexpected tensor '{name}'")));
    }
    Ok(model)
}

pub fn load_checkpoint_file(path: &Path) -> Result<AnyModel<f32>, CheckpointError> {
    load_checkpoint(&std::fs::read(path)?)
}

/// The payload CRC32 stored in a checkpoint's trailer - a stable identifier
/// for the exact parameter bytes. (The CRC32 of the whole file is useless
/// for identification: any stream ending in its own CRC hashes to the fixed
/// residue constant.)
pub fn checkpoint_checksum(bytes: &[u8]) -> Result<u32, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::TruncatedFile(bytes.len()));
    }
    Ok(u32::from_le_bytes(
        bytes[bytes.len() - 4..].try_into().unwrap(),
    ))
}

/// Convenience guard for call sites that require one specific architecture.
pub fn expect_kind(model: AnyModel<f32>, expected: ModelKind) -> Result<AnyModel<f32>, CheckpointError> {
    if model.kind() != expected {
        return Err(CheckpointError::ModelKindMismatch {
            expected: expected.name(),
            found: model.kind().name(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use crate::model::{BaselineCnn, MfaanModel};

    fn model_with_norm(seed: u64) -> AnyModel<f32> {
        let cfg = FeatureConfig::default();
        let mut m = MfaanModel::<f32>::init(
            ArchConfig::default(),
            cfg,
            cfg.fingerprints(crate::CANONICAL_SAMPLE_RATE),
            seed,
        );
        m.norm = Some([
            NormStats {
                mean: vec![0.5; 40],
                std: vec![2.0; 40],
            },
            NormStats {
                mean: vec![-0.25; 40],
                std: vec![1.5; 40],
            },
            NormStats {
                mean: vec![0.1; 12],
                std: vec![0.9; 12],
            },
        ]);
        AnyModel::Mfaan(m)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let model = model_with_norm(42);
        let bytes = save_checkpoint(&model);
        let loaded = load_checkpoint(&bytes).unwrap();
        assert_eq!(save_checkpoint(&loaded), bytes);
        match (&model, &loaded) {
            (AnyModel::Mfaan(a), AnyModel::Mfaan(b)) => {
                assert_eq!(a.norm, b.norm);
                for ((_, x), (_, y)) in a.named_params().iter().zip(b.named_params()) {
                    let same = x
                        .values()
                        .iter()
                        .zip(y.values())
                        .all(|(p, q)| p.to_bits() == q.to_bits());
                    assert!(same);
                }
            }
            _ => panic!("kind changed across round trip"),
        }
    }

    #[test]
    fn every_flipped_byte_is_caught() {
        let bytes = save_checkpoint(&model_with_norm(1));
        // magic corruption reports BadMagic, anything else the checksum
        let mut corrupt = bytes.clone();
        corrupt[0] ^= 0xff;
        assert!(matches!(load_checkpoint(&corrupt), Err(CheckpointError::BadMagic)));

        let mut rng = crate::rng::Rng::seed_from(3);
        for _ in 0..32 {
            let i = 4 + rng.below(bytes.len() - 4);
            let mut corrupt = bytes.clone();
            corrupt[i] ^= 0x01;
            assert!(
                matches!(
                    load_checkpoint(&corrupt),
                    Err(CheckpointError::ChecksumMismatch { .. })
                ),
                "byte {i} flip not caught"
            );
        }
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = save_checkpoint(&model_with_norm(2));
        assert!(matches!(
            load_checkpoint(&bytes[..2]),
            Err(CheckpointError::TruncatedFile(_))
        ));
        // longer truncations land in the checksum check
        assert!(load_checkpoint(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn kind_guard_rejects_wrong_architecture() {
        let cfg = FeatureConfig::default();
        let baseline = AnyModel::Baseline(BaselineCnn::<f32>::init(
            ArchConfig::default(),
            cfg,
            cfg.fingerprints(crate::CANONICAL_SAMPLE_RATE),
            7,
        ));
        let loaded = load_checkpoint(&save_checkpoint(&baseline)).unwrap();
        assert_eq!(loaded.kind(), ModelKind::Baseline);
        assert!(matches!(
            expect_kind(loaded, ModelKind::Mfaan),
            Err(CheckpointError::ModelKindMismatch { .. })
        ));
    }

    #[test]
    fn norm_stats_survive_for_baseline_too() {
        let cfg = FeatureConfig::default();
        let mut b = BaselineCnn::<f32>::init(
            ArchConfig::default(),
            cfg,
            cfg.fingerprints(crate::CANONICAL_SAMPLE_RATE),
            5,
        );
        b.norm = Some(NormStats {
            mean: vec![1.0; 40],
            std: vec![3.0; 40],
        });
        let loaded = load_checkpoint(&save_checkpoint(&AnyModel::Baseline(b.clone()))).unwrap();
        match loaded {
            AnyModel::Baseline(lb) => assert_eq!(lb.norm, b.norm),
            _ => panic!("wrong kind"),
        }
    }
}
