//! Shared extraction plumbing: decode -> resample -> window -> extract,
//! fanned out per file, with cache reuse keyed on config fingerprints.

use mfaan_core::audio_io::load_wav_file;
use mfaan_core::dataset::{crop_or_pad, ManifestEntry};
use mfaan_core::features::{FeatureCache, FeatureConfig, FeatureExtractor, FeatureKind};
use mfaan_core::{AudioClip, CANONICAL_SAMPLE_RATE};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub exit_code: u8,
}

impl CliError {
    pub fn data(message: String) -> Self {
        CliError {
            message,
            exit_code: 1,
        }
    }

    pub fn diverged(epoch: usize) -> Self {
        CliError {
            message: format!("training diverged (non-finite loss) at epoch {epoch}"),
            exit_code: 2,
        }
    }
}

impl From<&str> for CliError {
    fn from(s: &str) -> Self {
        CliError::data(s.to_string())
    }
}

/// Canonicalizes a clip for the model: resample to 16 kHz, fixed-length
/// center crop / symmetric pad.
pub fn prepare_clip(clip: &AudioClip, features: &FeatureConfig) -> AudioClip {
    let clip = if clip.sample_rate == CANONICAL_SAMPLE_RATE {
        clip.clone()
    } else {
        mfaan_core::audio_io::resample_linear(clip, CANONICAL_SAMPLE_RATE)
    };
    crop_or_pad(&clip, features.clip_samples)
}

/// Extracts the requested feature kinds for every entry, in parallel, and
/// assembles the cache in manifest order. Fails on the first (in manifest
/// order) unreadable or undecodable file, naming its row.
pub fn extract_cache(
    entries: &[ManifestEntry],
    features: &FeatureConfig,
    kinds: &[FeatureKind],
) -> Result<FeatureCache, CliError> {
    let extractor = FeatureExtractor::new(*features, CANONICAL_SAMPLE_RATE)
        .map_err(|e| CliError::data(format!("bad feature config: {e}")))?;

    let results: Vec<Result<Vec<mfaan_core::FeatureMatrix>, String>> = entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let clip = load_wav_file(&entry.path).map_err(|e| {
                format!("row {}: cannot decode {}: {e}", i + 2, entry.path.display())
            })?;
            let prepared = prepare_clip(&clip, features);
            let mats = kinds
                .iter()
                .map(|&k| extractor.extract(&prepared, k))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("row {}: {}: {e}", i + 2, entry.path.display()))?;
            eprintln!("extracted {} ({} kinds)", entry.clip_id, mats.len());
            Ok(mats)
        })
        .collect();

    let mut cache = FeatureCache::new(features.fingerprints(CANONICAL_SAMPLE_RATE));
    for (entry, result) in entries.iter().zip(results) {
        let mats = result.map_err(CliError::data)?;
        for fm in &mats {
            cache.push_matrix(&entry.clip_id, fm);
        }
    }
    Ok(cache)
}

/// The sibling cache file a manifest owns.
pub fn manifest_cache_path(manifest: &Path) -> PathBuf {
    PathBuf::from(format!("{}.mffc", manifest.display()))
}

/// Returns a cache valid for `features`, building or rebuilding
/// `<manifest>.mffc` as allowed.
///
/// * missing file: extract and write.
/// * present and complete with matching fingerprints: reuse.
/// * present but mismatched/incomplete: rebuild when `rebuild` is set
///   (training owns its cache), otherwise fail with the fingerprint or
///   missing-entry diagnostic (evaluation must match the model exactly).
pub fn ensure_cache(
    manifest: &Path,
    entries: &[ManifestEntry],
    features: &FeatureConfig,
    rebuild: bool,
) -> Result<FeatureCache, CliError> {
    let path = manifest_cache_path(manifest);
    let expected = features.fingerprints(CANONICAL_SAMPLE_RATE);
    if path.exists() {
        let cache = FeatureCache::read_file(&path)
            .map_err(|e| CliError::data(format!("cache {}: {e}", path.display())))?;
        let fingerprints_ok = cache.check_fingerprints(expected);
        let missing = entries.iter().find(|e| {
            !FeatureKind::ALL
                .iter()
                .all(|&k| cache.contains(&e.clip_id, k))
        });
        match (&fingerprints_ok, missing) {
            (Ok(()), None) => {
                eprintln!("reusing cache {}", path.display());
                return Ok(cache);
            }
            (Err(e), _) if !rebuild => {
                return Err(CliError::data(format!("cache {}: {e}", path.display())));
            }
            (Ok(()), Some(entry)) if !rebuild => {
                return Err(CliError::data(format!(
                    "cache {} lacks features for clip '{}'",
                    path.display(),
                    entry.clip_id
                )));
            }
            _ => eprintln!("rebuilding stale cache {}", path.display()),
        }
    }
    let cache = extract_cache(entries, features, &FeatureKind::ALL)?;
    cache
        .write_file(&path)
        .map_err(|e| CliError::data(format!("cannot write cache {}: {e}", path.display())))?;
    Ok(cache)
}
