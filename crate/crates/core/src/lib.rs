//! Multi-feature audio authenticity network.
//!
//! Detects fabricated (spoofed) speech by fusing three spectral views of a
//! clip - mel-frequency cepstra, linear-frequency cepstra, and a chroma
//! pitch-class profile - each processed by its own small 1D-convolutional
//! path and concatenated into a binary genuine/fabricated decision head.
//!
//! The crate is self-contained end to end:
//!
//! * [`audio_io`] - WAV decode/encode, resampling, framing
//! * [`features`] - MFCC / LFCC / Chroma-STFT extraction and the on-disk
//!   feature cache
//! * [`nn`] - a minimal reverse-mode tensor engine (conv1d, pooling, dense,
//!   ReLU, sigmoid + BCE, Adam) with a finite-difference gradient checker
//! * [`model`] - the three-path fusion network, a single-feature baseline,
//!   and checkpoint serialization
//! * [`dataset`] - manifest ingestion, deterministic splits and batching,
//!   and a seeded synthetic bona-fide/spoof generator
//! * [`metrics`] - accuracy, ROC sweep, and equal error rate
//! * [`training`] - the deterministic training loop
//!
//! Everything is a pure function of its inputs and seeds: two runs with the
//! same configuration produce bitwise-identical caches, checkpoints, and
//! reports.

pub mod audio_io;
pub mod dataset;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod training;

pub use audio_io::AudioClip;
pub use features::{FeatureConfig, FeatureKind, FeatureMatrix};
pub use metrics::{EvalReport, ScoredSet};
pub use model::{AnyModel, ModelKind};
pub use rng::Rng;

/// Internal sample rate every extractor consumes; clips at other rates are
/// resampled on ingestion.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Fixed training window: 4 s at the canonical rate.
pub const DEFAULT_CLIP_SAMPLES: usize = 64_000;
