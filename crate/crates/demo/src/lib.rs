//! Browser demo bindings.
//!
//! Three interactive operations, exported through wasm-bindgen for the
//! static page in `www/`:
//!
//! * [`ClipExplorer`] - synthesize a bona-fide or spoofed clip from a seed
//!   and render its waveform and MFCC/LFCC/chroma heatmaps.
//! * [`TrainingSession`] - train the fusion network on a small in-memory
//!   synthetic set, one batch at a time, streaming loss/accuracy.
//! * [`TrainingSession::classify`] / [`TrainingSession::roc_json`] - score
//!   fresh clips with the live model and plot the held-out ROC with its
//!   equal error rate.
//!
//! Everything here is a thin layer over the core crate; clips are one
//! second long (vs four in the CLI pipeline) to keep in-browser latency
//! low.

use mfaan_core::dataset::{draw_synth_params, synth_clip};
use mfaan_core::features::{FeatureConfig, FeatureExtractor, FeatureKind};
use mfaan_core::metrics::{eer, roc_sweep, ScoredSet};
use mfaan_core::model::{ArchConfig, SampleTensors};
use mfaan_core::nn::sigmoid;
use mfaan_core::training::{init_model_for_training, StepTrainer, TrainConfig};
use mfaan_core::{AudioClip, Rng, CANONICAL_SAMPLE_RATE};
use wasm_bindgen::prelude::*;

/// One-second clips keep the browser responsive.
const DEMO_CLIP_SAMPLES: usize = 16_000;

fn demo_feature_config() -> FeatureConfig {
    FeatureConfig {
        clip_samples: DEMO_CLIP_SAMPLES,
        ..FeatureConfig::default()
    }
}

fn make_clip(seed: u64, spoof: bool) -> (AudioClip, mfaan_core::dataset::SynthParams) {
    let mut rng = Rng::seed_from(seed);
    let params = draw_synth_params(&mut rng, spoof);
    let clip = synth_clip(&params, CANONICAL_SAMPLE_RATE, &mut rng);
    let clip = mfaan_core::dataset::crop_or_pad(&clip, DEMO_CLIP_SAMPLES);
    (clip, params)
}

/// A three-stop heat colormap (dark blue -> teal -> yellow).
fn heat_rgb(x: f64) -> [u8; 3] {
    let x = x.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let (r, g, b) = if x < 0.5 {
        let t = x * 2.0;
        (lerp(13.0, 32.0, t), lerp(8.0, 144.0, t), lerp(135.0, 140.0, t))
    } else {
        let t = (x - 0.5) * 2.0;
        (lerp(32.0, 250.0, t), lerp(144.0, 231.0, t), lerp(140.0, 37.0, t))
    };
    [r as u8, g as u8, b as u8]
}

/// RGBA pixels of one feature matrix, one pixel per cell, low rows at the
/// bottom, values min-max normalized per matrix.
#[wasm_bindgen]
pub struct FeatureImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

#[wasm_bindgen]
impl FeatureImage {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }
}

fn render_matrix(rows: usize, cols: usize, data: &[f64]) -> FeatureImage {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pixels = vec![0u8; rows * cols * 4];
    for r in 0..rows {
        for c in 0..cols {
            let v = (data[r * cols + c] - lo) / span;
            let [red, green, blue] = heat_rgb(v);
            // row 0 of the matrix is the lowest coefficient: draw it at the
            // bottom of the image
            let px = ((rows - 1 - r) * cols + c) * 4;
            pixels[px] = red;
            pixels[px + 1] = green;
            pixels[px + 2] = blue;
            pixels[px + 3] = 255;
        }
    }
    FeatureImage {
        width: cols as u32,
        height: rows as u32,
        pixels,
    }
}

fn parse_kind(name: &str) -> Result<FeatureKind, String> {
    match name {
        "mfcc" => Ok(FeatureKind::Mfcc),
        "lfcc" => Ok(FeatureKind::Lfcc),
        "chroma" => Ok(FeatureKind::Chroma),
        other => Err(format!("unknown feature kind '{other}'")),
    }
}

/// Synthesizes one clip and exposes its waveform and feature views.
#[wasm_bindgen]
pub struct ClipExplorer {
    clip: AudioClip,
    params_json: String,
    extractor: FeatureExtractor,
}

#[wasm_bindgen]
impl ClipExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, spoof: bool) -> Result<ClipExplorer, String> {
        let (clip, params) = make_clip(seed, spoof);
        let extractor = FeatureExtractor::new(demo_feature_config(), CANONICAL_SAMPLE_RATE)
            .map_err(|e| e.to_string())?;
        let params_json = serde_json::json!({
            "spoof": params.spoof,
            "fundamental_hz": params.fundamental_hz,
            "harmonic_gains": params.harmonic_gains,
            "envelope_hz": params.envelope_hz,
            "noise_amp": params.noise_amp,
            "pitch_offset": params.pitch_offset,
        })
        .to_string();
        Ok(ClipExplorer {
            clip,
            params_json,
            extractor,
        })
    }

    /// Drawn construction parameters, as JSON.
    pub fn params_json(&self) -> String {
        self.params_json.clone()
    }

    /// Min/max envelope pairs for a `width`-column waveform plot.
    pub fn waveform(&self, width: usize) -> Vec<f32> {
        let n = self.clip.samples.len();
        let mut out = Vec::with_capacity(width * 2);
        for col in 0..width {
            let start = col * n / width;
            let end = ((col + 1) * n / width).max(start + 1).min(n);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &s in &self.clip.samples[start..end] {
                lo = lo.min(s);
                hi = hi.max(s);
            }
            out.push(lo as f32);
            out.push(hi as f32);
        }
        out
    }

    /// Heatmap of one feature matrix ("mfcc" | "lfcc" | "chroma").
    pub fn feature_image(&self, kind: &str) -> Result<FeatureImage, String> {
        let kind = parse_kind(kind)?;
        let fm = self
            .extractor
            .extract(&self.clip, kind)
            .map_err(|e| e.to_string())?;
        Ok(render_matrix(fm.rows(), fm.cols(), &fm.mat.data))
    }
}

/// Live training over an in-memory synthetic set.
#[wasm_bindgen]
pub struct TrainingSession {
    trainer: StepTrainer,
    eval_samples: Vec<(SampleTensors<f32>, u8)>,
    extractor: FeatureExtractor,
    batch_seed: u64,
    losses: Vec<f64>,
}

#[wasm_bindgen]
impl TrainingSession {
    /// Builds a balanced set of 2*`n_per_class` training and evaluation
    /// clips and a seeded fresh model.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, n_per_class: usize) -> Result<TrainingSession, String> {
        if n_per_class == 0 {
            return Err("n_per_class must be at least 1".to_string());
        }
        let features = demo_feature_config();
        let extractor = FeatureExtractor::new(features, CANONICAL_SAMPLE_RATE)
            .map_err(|e| e.to_string())?;

        // clip index i: even bona-fide, odd spoof; training set first, then
        // the held-out evaluation set
        let clip_for = |i: u64| make_clip(mfaan_core::rng::mix_seed(seed, i), i % 2 == 1).0;

        let mut entries = Vec::new();
        let mut cache = mfaan_core::features::FeatureCache::new(
            features.fingerprints(CANONICAL_SAMPLE_RATE),
        );
        for i in 0..4 * n_per_class as u64 {
            let clip = clip_for(i);
            let clip_id = format!("demo-{i}");
            for fm in extractor
                .extract_all(&clip)
                .map_err(|e| e.to_string())?
            {
                cache.push_matrix(&clip_id, &fm);
            }
            entries.push(mfaan_core::dataset::ManifestEntry {
                clip_id,
                path: std::path::PathBuf::new(),
                label: if i % 2 == 1 {
                    mfaan_core::dataset::Label::Spoof
                } else {
                    mfaan_core::dataset::Label::BonaFide
                },
            });
        }
        let (train_entries, eval_entries) = entries.split_at(2 * n_per_class);

        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let split = mfaan_core::dataset::DatasetSplit {
            train: train_entries.to_vec(),
            val: eval_entries.to_vec(),
            test: eval_entries.to_vec(),
            seed,
            fractions: mfaan_core::dataset::SplitFractions::default(),
        };
        let model = init_model_for_training(&split, &cache, features, ArchConfig::default(), &cfg)
            .map_err(|e| e.to_string())?;

        let collect = |list: &[mfaan_core::dataset::ManifestEntry]| {
            list.iter()
                .map(|e| {
                    let sample =
                        mfaan_core::metrics::prepare_cached_sample(&model, &cache, &e.clip_id)
                            .map_err(|err| err.to_string())?;
                    Ok((sample, e.label.to_byte()))
                })
                .collect::<Result<Vec<_>, String>>()
        };
        let train_samples: Vec<(SampleTensors<f32>, f32)> = collect(train_entries)?
            .into_iter()
            .map(|(s, l)| (s, l as f32))
            .collect();
        let eval_samples = collect(eval_entries)?;

        Ok(TrainingSession {
            trainer: StepTrainer::new(model, train_samples, cfg.lr),
            eval_samples,
            extractor,
            batch_seed: seed,
            losses: Vec::new(),
        })
    }

    /// Runs `n` full-batch optimizer steps; returns
    /// `{step, loss, train_accuracy}` for the last one.
    pub fn step(&mut self, n: usize) -> Result<String, String> {
        let mut last = f64::NAN;
        for _ in 0..n.max(1) {
            last = self
                .trainer
                .full_batch_step()
                .map_err(|e| e.to_string())?;
            self.losses.push(last);
        }
        let acc = self
            .trainer
            .train_accuracy()
            .map_err(|e| e.to_string())?;
        Ok(serde_json::json!({
            "step": self.trainer.steps_taken,
            "loss": last,
            "train_accuracy": acc,
        })
        .to_string())
    }

    pub fn steps_taken(&self) -> usize {
        self.trainer.steps_taken
    }

    /// Every recorded full-batch loss, for the loss curve.
    pub fn loss_history(&self) -> Vec<f64> {
        self.losses.clone()
    }

    fn eval_scores(&self) -> Result<ScoredSet, String> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (sample, label) in &self.eval_samples {
            let (logit, _) = self
                .trainer
                .model
                .forward_sample(sample)
                .map_err(|e| e.to_string())?;
            scores.push(sigmoid(logit) as f64);
            labels.push(*label);
        }
        ScoredSet::new(scores, labels).map_err(|e| e.to_string())
    }

    /// Held-out ROC points plus the interpolated equal error rate:
    /// `{eer, eer_threshold, accuracy, points: [[threshold, far, frr], ...]}`.
    pub fn roc_json(&self) -> Result<String, String> {
        let scored = self.eval_scores()?;
        let sweep = roc_sweep(&scored).map_err(|e| e.to_string())?;
        let (eer_value, eer_threshold) = eer(&scored).map_err(|e| e.to_string())?;
        let points: Vec<[f64; 3]> = sweep.iter().map(|p| [p.threshold, p.far, p.frr]).collect();
        Ok(serde_json::json!({
            "eer": eer_value,
            "eer_threshold": eer_threshold,
            "accuracy": mfaan_core::metrics::accuracy(&scored, 0.5),
            "points": points,
        })
        .to_string())
    }

    /// Scores one fresh clip with the live model; returns the spoof
    /// probability.
    pub fn classify(&self, seed: u64, spoof: bool) -> Result<f64, String> {
        let (clip, _) = make_clip(seed, spoof);
        let [mfcc, lfcc, chroma] = self
            .extractor
            .extract_all(&clip)
            .map_err(|e| e.to_string())?;
        let prob = self
            .trainer
            .model
            .score(&mfcc, &lfcc, &chroma)
            .map_err(|e| e.to_string())?;
        Ok(prob as f64)
    }

    /// Seed actually used for batching; exposed for the page's status line.
    pub fn seed(&self) -> u64 {
        self.batch_seed
    }
}
