//! Deterministic training.
//!
//! The loop is single-threaded by contract: batches are visited in their
//! seeded shuffle order, per-sample gradients are averaged in batch order,
//! and one Adam step follows each batch, so identical seeds and data give
//! bitwise-identical parameters. Feature tensors always come through the
//! f32 cache representation, which keeps training, evaluation, and
//! single-clip inference numerically aligned.

use crate::dataset::{make_batches, DatasetSplit, ManifestEntry};
use crate::features::{FeatureCache, FeatureConfig, FeatureKind};
use crate::metrics::{prepare_cached_sample, EvalError};
use crate::model::{AnyModel, ArchConfig, ModelKind, NormStats, SampleTensors};
use crate::nn::{bce_grad_logit, bce_with_logits, sigmoid, AdamConfig, AdamState, NnError, Scalar};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub arch: ModelKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            arch: ModelKind::Mfaan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The checkpointed model: best validation accuracy, earliest epoch on
    /// ties.
    pub model: AnyModel<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Per-row mean/std of one feature kind over the given entries' cached
/// matrices (population statistics, accumulated in f64).
pub fn norm_stats_from_cache(
    cache: &FeatureCache,
    entries: &[ManifestEntry],
    kind: FeatureKind,
) -> Result<NormStats<f32>, EvalError> {
    let mut rows = 0usize;
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    let mut sumsq: Vec<f64> = Vec::new();
    for e in entries {
        let ce = cache.get(&e.clip_id, kind)?;
        if sum.is_empty() {
            rows = ce.rows as usize;
            sum = vec![0.0; rows];
            sumsq = vec![0.0; rows];
        }
        let cols = ce.cols as usize;
        for r in 0..rows {
            for &v in &ce.data[r * cols..(r + 1) * cols] {
                sum[r] += v as f64;
                sumsq[r] += (v as f64) * (v as f64);
            }
        }
        count += cols;
    }
    let n = count.max(1) as f64;
    let mean: Vec<f32> = sum.iter().map(|&s| (s / n) as f32).collect();
    let std: Vec<f32> = sum
        .iter()
        .zip(&sumsq)
        .map(|(&s, &sq)| {
            let m = s / n;
            ((sq / n - m * m).max(0.0)).sqrt() as f32
        })
        .collect();
    Ok(NormStats { mean, std })
}

/// Incremental trainer: owns the model, the prepared sample set, and the
/// optimizer, and advances one batch at a time. Both the epoch loop and the
/// interactive demo drive training through this.
pub struct StepTrainer {
    pub model: AnyModel<f32>,
    samples: Vec<(SampleTensors<f32>, f32)>,
    adam: AdamState<f32>,
    pub steps_taken: usize,
}

impl StepTrainer {
    pub fn new(mut model: AnyModel<f32>, samples: Vec<(SampleTensors<f32>, f32)>, lr: f64) -> Self {
        let sizes = model.param_sizes();
        StepTrainer {
            model,
            samples,
            adam: AdamState::new(AdamConfig::with_lr(lr), &sizes),
            steps_taken: 0,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// One optimizer step over the given sample indices; returns the mean
    /// batch loss.
    pub fn step(&mut self, batch: &[usize]) -> Result<f64, TrainError> {
        assert!(!batch.is_empty());
        let inv = 1.0f32 / batch.len() as f32;
        let mut loss_sum = 0.0f64;
        for &i in batch {
            let (sample, label) = &self.samples[i];
            let (logit, trace) = self.model.forward_sample(sample)?;
            loss_sum += bce_with_logits(logit, *label).as_f64();
            self.model
                .backward_sample(&trace, bce_grad_logit(logit, *label) * inv)?;
        }
        self.adam.step_params(&mut self.model.param_tensors_mut())?;
        self.steps_taken += 1;
        Ok(loss_sum / batch.len() as f64)
    }

    /// One step over every sample.
    pub fn full_batch_step(&mut self) -> Result<f64, TrainError> {
        let all: Vec<usize> = (0..self.samples.len()).collect();
        self.step(&all)
    }

    /// Accuracy over the training samples at threshold 0.5.
    pub fn train_accuracy(&self) -> Result<f64, TrainError> {
        accuracy_over(&self.model, &self.samples)
    }
}

fn accuracy_over(
    model: &AnyModel<f32>,
    samples: &[(SampleTensors<f32>, f32)],
) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    for (sample, label) in samples {
        let (logit, _) = model.forward_sample(sample)?;
        let spoof = sigmoid(logit) >= 0.5;
        if spoof == (*label >= 0.5) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len().max(1) as f64)
}

fn prepare_set(
    model: &AnyModel<f32>,
    cache: &FeatureCache,
    entries: &[ManifestEntry],
) -> Result<Vec<(SampleTensors<f32>, f32)>, EvalError> {
    entries
        .iter()
        .map(|e| {
            let sample = prepare_cached_sample(model, cache, &e.clip_id)?;
            Ok((sample, e.label.to_byte() as f32))
        })
        .collect()
}

/// Builds a fresh model for the split's feature cache: seeded init plus
/// normalization statistics from the training part.
pub fn init_model_for_training(
    split: &DatasetSplit,
    cache: &FeatureCache,
    feature_config: FeatureConfig,
    arch: ArchConfig,
    cfg: &TrainConfig,
) -> Result<AnyModel<f32>, EvalError> {
    let fingerprints = feature_config.fingerprints(crate::CANONICAL_SAMPLE_RATE);
    cache.check_fingerprints(fingerprints)?;
    let mut model = AnyModel::<f32>::init(cfg.arch, arch, feature_config, fingerprints, cfg.seed);
    let mfcc = norm_stats_from_cache(cache, &split.train, FeatureKind::Mfcc)?;
    let (lfcc, chroma) = match cfg.arch {
        ModelKind::Mfaan => (
            norm_stats_from_cache(cache, &split.train, FeatureKind::Lfcc)?,
            norm_stats_from_cache(cache, &split.train, FeatureKind::Chroma)?,
        ),
        ModelKind::Baseline => (
            NormStats::identity(feature_config.rows_for(FeatureKind::Lfcc)),
            NormStats::identity(feature_config.rows_for(FeatureKind::Chroma)),
        ),
    };
    model.set_norm_stats([mfcc, lfcc, chroma]);
    Ok(model)
}

/// The full protocol: init, epoch loop with per-epoch reshuffling, validation
/// after every epoch, best-checkpoint selection.
pub fn train(
    split: &DatasetSplit,
    cache: &FeatureCache,
    feature_config: FeatureConfig,
    arch: ArchConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let model = init_model_for_training(split, cache, feature_config, arch, cfg)?;
    let train_samples = prepare_set(&model, cache, &split.train)?;
    let val_samples = prepare_set(&model, cache, &split.val)?;

    let mut trainer = StepTrainer::new(model, train_samples, cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, AnyModel<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let batches = make_batches(trainer.n_samples(), cfg.batch_size, cfg.seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            let mean = trainer.step(batch)?;
            loss_sum += mean * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let val_accuracy = accuracy_over(&trainer.model, &val_samples)?;
        log.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
        });
        let improved = match &best {
            Some((best_acc, _, _)) => val_accuracy > *best_acc,
            None => true,
        };
        if improved {
            best = Some((val_accuracy, epoch, trainer.model.clone()));
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic_dataset, load_manifest, split_dataset, SplitFractions};
    use crate::features::FeatureExtractor;
    use crate::model::save_checkpoint;
    use crate::{CANONICAL_SAMPLE_RATE, DEFAULT_CLIP_SAMPLES};

    fn build_cache(
        entries: &[ManifestEntry],
        feature_config: FeatureConfig,
    ) -> FeatureCache {
        let extractor = FeatureExtractor::new(feature_config, CANONICAL_SAMPLE_RATE).unwrap();
        let mut cache = FeatureCache::new(feature_config.fingerprints(CANONICAL_SAMPLE_RATE));
        for e in entries {
            let clip = crate::audio_io::load_wav_file(&e.path).unwrap();
            let clip = crate::dataset::crop_or_pad(&clip, DEFAULT_CLIP_SAMPLES);
            for fm in extractor.extract_all(&clip).unwrap() {
                cache.push_matrix(&e.clip_id, &fm);
            }
        }
        cache
    }

    fn tiny_setup() -> (DatasetSplit, FeatureCache, FeatureConfig) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_synthetic_dataset(5, 123, dir.path()).unwrap();
        let entries = load_manifest(&std::fs::read_to_string(manifest).unwrap()).unwrap();
        let feature_config = FeatureConfig::default();
        let cache = build_cache(&entries, feature_config);
        let split = split_dataset(&entries, 7, SplitFractions::default()).unwrap();
        (split, cache, feature_config)
    }

    #[test]
    fn two_epoch_run_is_bitwise_deterministic() {
        let (split, cache, feature_config) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let out = train(&split, &cache, feature_config, ArchConfig::default(), &cfg).unwrap();
            save_checkpoint(&out.model)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn loss_moves_and_log_is_complete() {
        let (split, cache, feature_config) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&split, &cache, feature_config, ArchConfig::default(), &cfg).unwrap();
        assert_eq!(out.log.len(), 3);
        assert!(out.log.iter().all(|l| l.train_loss.is_finite()));
        assert!(out.best_epoch < 3);
        // training on 8 samples for 3 epochs must change the loss
        assert_ne!(out.log[0].train_loss, out.log[2].train_loss);
    }

    #[test]
    fn baseline_arch_trains_too() {
        let (split, cache, feature_config) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 1,
            arch: ModelKind::Baseline,
            ..TrainConfig::default()
        };
        let out = train(&split, &cache, feature_config, ArchConfig::default(), &cfg).unwrap();
        assert_eq!(out.model.kind(), ModelKind::Baseline);
    }

    #[test]
    fn zeroed_decision_head_scores_half_everywhere() {
        let (split, cache, feature_config) = tiny_setup();
        let cfg = TrainConfig::default();
        let mut model =
            init_model_for_training(&split, &cache, feature_config, ArchConfig::default(), &cfg)
                .unwrap();
        if let AnyModel::Mfaan(m) = &mut model {
            m.fuse_out.weights = crate::nn::Tensor::zeros(vec![1, 64]);
            m.fuse_out.bias = crate::nn::Tensor::zeros(vec![1]);
        }
        // every clip scores exactly 0.5: accuracy is the spoof fraction of a
        // balanced set (0.5 under the >= rule) and the EER crossing sits at 0.5
        let all: Vec<ManifestEntry> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .cloned()
            .collect();
        let scored = crate::metrics::score_entries(&model, &all, &cache).unwrap();
        assert!(scored.scores().iter().all(|&s| s == 0.5));
        assert_eq!(crate::metrics::accuracy(&scored, 0.5), 0.5);
        let (eer_value, _) = crate::metrics::eer(&scored).unwrap();
        assert!((eer_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn step_trainer_descends_on_one_sample() {
        let (split, cache, feature_config) = tiny_setup();
        let cfg = TrainConfig::default();
        let model =
            init_model_for_training(&split, &cache, feature_config, ArchConfig::default(), &cfg)
                .unwrap();
        let samples = prepare_set(&model, &cache, &split.train[..1].to_vec()).unwrap();
        let mut trainer = StepTrainer::new(model, samples, 1e-2);
        let first = trainer.full_batch_step().unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = trainer.full_batch_step().unwrap();
        }
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        assert_eq!(trainer.train_accuracy().unwrap(), 1.0);
    }
}
