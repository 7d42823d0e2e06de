//! Scoring and evaluation: accuracy, ROC sweep, equal error rate.
//!
//! Orientation, fixed and recorded in every report: spoof is the positive
//! class and a clip is predicted spoof when score >= threshold. FAR is the
//! fraction of bona-fide clips accepted as spoof, FRR the fraction of spoof
//! clips rejected as bona-fide. The EER is read off the threshold sweep by
//! linear interpolation between the two sweep points where FAR - FRR
//! changes sign (an exact tie at a sweep point is returned directly); the
//! crossing value itself does not depend on the orientation choice.

use crate::dataset::ManifestEntry;
use crate::features::{CacheError, FeatureCache, FeatureFingerprints, FeatureKind};
use crate::model::{AnyModel, ModelError};
use crate::nn::{NnError, Scalar};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty score set")]
    EmptySet,
    #[error("EER undefined: all labels belong to a single class")]
    SingleClass,
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Spoof probabilities with their ground-truth labels (1 = spoof).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricsError::EmptySet);
        }
        if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(MetricsError::ScoreOutOfRange(bad));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(MetricsError::BadLabel(bad));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.labels.len() - pos)
    }
}

/// Fraction of correct predictions under the >= threshold spoof rule.
pub fn accuracy(set: &ScoredSet, threshold: f64) -> f64 {
    let correct = set
        .scores
        .iter()
        .zip(&set.labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    correct as f64 / set.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn confusion(set: &ScoredSet, threshold: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Offset placing the sweep sentinels strictly below the minimum and above
/// the maximum score.
const SENTINEL_OFFSET: f64 = 0.01;

/// FAR/FRR at every decision point: the sorted unique scores plus one
/// sentinel below the minimum and one above the maximum. FAR is
/// non-increasing and FRR non-decreasing in the threshold.
pub fn roc_sweep(set: &ScoredSet) -> Result<Vec<RocPoint>, MetricsError> {
    let (pos, neg) = set.class_counts();
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut pairs: Vec<(f64, u8)> = set
        .scores
        .iter()
        .copied()
        .zip(set.labels.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut thresholds = Vec::with_capacity(pairs.len() + 2);
    thresholds.push(pairs[0].0 - SENTINEL_OFFSET);
    for &(s, _) in &pairs {
        if thresholds.last() != Some(&s) {
            thresholds.push(s);
        }
    }
    thresholds.push(pairs[pairs.len() - 1].0 + SENTINEL_OFFSET);

    let mut points = Vec::with_capacity(thresholds.len());
    let (mut idx, mut pos_below, mut neg_below) = (0usize, 0usize, 0usize);
    for t in thresholds {
        while idx < pairs.len() && pairs[idx].0 < t {
            if pairs[idx].1 == 1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            idx += 1;
        }
        points.push(RocPoint {
            threshold: t,
            far: (neg - neg_below) as f64 / neg as f64,
            frr: pos_below as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Equal error rate and the threshold where the interpolated FAR and FRR
/// curves cross.
pub fn eer(set: &ScoredSet) -> Result<(f64, f64), MetricsError> {
    let sweep = roc_sweep(set)?;
    eer_from_sweep(&sweep)
}

pub fn eer_from_sweep(sweep: &[RocPoint]) -> Result<(f64, f64), MetricsError> {
    for p in sweep {
        if p.far == p.frr {
            return Ok((p.far, p.threshold));
        }
    }
    // FAR - FRR is non-increasing, starts at +1 and ends at -1, so exactly
    // one adjacent pair brackets the sign change.
    for w in sweep.windows(2) {
        let d1 = w[0].far - w[0].frr;
        let d2 = w[1].far - w[1].frr;
        if d1 > 0.0 && d2 < 0.0 {
            let alpha = d1 / (d1 - d2);
            let value = w[0].far + alpha * (w[1].far - w[0].far);
            let threshold = w[0].threshold + alpha * (w[1].threshold - w[0].threshold);
            return Ok((value, threshold));
        }
    }
    unreachable!("monotone sweep always brackets a crossing");
}

/// The serialized evaluation protocol output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub confusion: Confusion,
    /// (threshold, far, frr) triples.
    pub roc: Vec<(f64, f64, f64)>,
    pub model_checksum: u32,
    pub feature_fingerprints: FeatureFingerprints,
    pub seed: u64,
    /// Orientation note: spoof positive, predicted spoof when score >=
    /// threshold, FAR = bona-fide accepted as spoof.
    pub far_convention: String,
}

pub const FAR_CONVENTION: &str =
    "positive=spoof; predict spoof when score>=threshold; FAR=bona_fide misclassified as spoof; FRR=spoof misclassified as bona_fide";

/// Builds the full report for a scored set at decision threshold 0.5.
pub fn evaluate_scored(
    set: &ScoredSet,
    model_checksum: u32,
    feature_fingerprints: FeatureFingerprints,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    let sweep = roc_sweep(set)?;
    let (eer_value, eer_threshold) = eer_from_sweep(&sweep)?;
    Ok(EvalReport {
        accuracy: accuracy(set, 0.5),
        eer: eer_value,
        eer_threshold,
        confusion: confusion(set, 0.5),
        roc: sweep.iter().map(|p| (p.threshold, p.far, p.frr)).collect(),
        model_checksum,
        feature_fingerprints,
        seed,
        far_convention: FAR_CONVENTION.to_string(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Scores every entry against the cache, in manifest order.
pub fn score_entries<S: Scalar>(
    model: &AnyModel<S>,
    entries: &[ManifestEntry],
    cache: &FeatureCache,
) -> Result<ScoredSet, EvalError> {
    cache.check_fingerprints(model.fingerprints())?;
    let mut scores = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for entry in entries {
        let sample = prepare_cached_sample(model, cache, &entry.clip_id)?;
        let (logit, _) = model.forward_sample(&sample)?;
        scores.push(crate::nn::sigmoid(logit).as_f64());
        labels.push(entry.label.to_byte());
    }
    Ok(ScoredSet::new(scores, labels)?)
}

/// Pulls one clip's feature triple out of the cache and normalizes it with
/// the model's stored statistics.
pub fn prepare_cached_sample<S: Scalar>(
    model: &AnyModel<S>,
    cache: &FeatureCache,
    clip_id: &str,
) -> Result<crate::model::SampleTensors<S>, EvalError> {
    let fetch = |kind: FeatureKind| -> Result<crate::nn::Tensor<S>, EvalError> {
        let e = cache.get(clip_id, kind)?;
        Ok(model.prepare_cached(kind, e.rows as usize, e.cols as usize, &e.data)?)
    };
    Ok(match model {
        AnyModel::Mfaan(_) => crate::model::SampleTensors {
            mfcc: fetch(FeatureKind::Mfcc)?,
            lfcc: fetch(FeatureKind::Lfcc)?,
            chroma: fetch(FeatureKind::Chroma)?,
        },
        AnyModel::Baseline(_) => crate::model::SampleTensors {
            mfcc: fetch(FeatureKind::Mfcc)?,
            lfcc: crate::nn::Tensor::zeros(vec![1, 1]),
            chroma: crate::nn::Tensor::zeros(vec![1, 1]),
        },
    })
}

/// Full protocol: score a split part from the cache and report metrics.
pub fn evaluate_model<S: Scalar>(
    model: &AnyModel<S>,
    entries: &[ManifestEntry],
    cache: &FeatureCache,
    model_checksum: u32,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let scored = score_entries(model, entries, cache)?;
    Ok(evaluate_scored(
        &scored,
        model_checksum,
        model.fingerprints(),
        seed,
    )?)
}
