//! The three spectral views the classifier fuses: MFCC, LFCC, Chroma-STFT.
//!
//! MFCC and LFCC run the identical cepstral pipeline - power spectrogram,
//! triangular filterbank, log, orthonormal DCT-II - and differ only in how
//! the filter edges are spaced (mel-warped vs linear). Chroma folds STFT bin
//! energies into 12 octave-equivalent pitch classes. All extraction is done
//! in f64 and is bitwise deterministic for a given clip and configuration;
//! each output matrix carries a fingerprint of the exact configuration that
//! produced it.

mod cache;

pub use cache::{CacheEntry, CacheError, FeatureCache, CACHE_MAGIC, CACHE_VERSION};

use crate::audio_io::{frame_signal, AudioClip};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chroma matrices always have one row per pitch class.
pub const N_CHROMA: usize = 12;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip too short: {len} samples, need at least {frame_len}")]
    ClipTooShort { len: usize, frame_len: usize },
    #[error(
        "degenerate filter: edges {edge_a_hz:.2} Hz and {edge_b_hz:.2} Hz both map to FFT bin {bin}"
    )]
    DegenerateFilter {
        edge_a_hz: f64,
        edge_b_hz: f64,
        bin: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
}

impl From<crate::audio_io::AudioError> for FeatureError {
    fn from(e: crate::audio_io::AudioError) -> Self {
        match e {
            crate::audio_io::AudioError::ClipTooShort { len, frame_len } => {
                FeatureError::ClipTooShort { len, frame_len }
            }
            other => FeatureError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Mfcc,
    Lfcc,
    Chroma,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::Lfcc, FeatureKind::Chroma];

    pub fn byte(self) -> u8 {
        match self {
            FeatureKind::Mfcc => 1,
            FeatureKind::Lfcc => 2,
            FeatureKind::Chroma => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(FeatureKind::Mfcc),
            2 => Some(FeatureKind::Lfcc),
            3 => Some(FeatureKind::Chroma),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Lfcc => "lfcc",
            FeatureKind::Chroma => "chroma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterScale {
    Mel,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WindowKind {
    #[default]
    Hann,
}

/// Short-time analysis parameters: 25 ms Hann frames every 10 ms at 16 kHz,
/// zero-padded to a 512-point FFT, with 0.97 pre-emphasis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
    pub pre_emphasis: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame_len: 400,
            hop: 160,
            fft_size: 512,
            window: WindowKind::Hann,
            pre_emphasis: 0.97,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.frame_len == 0 || self.hop == 0 {
            return Err(FeatureError::InvalidConfig(
                "frame_len and hop must be positive".into(),
            ));
        }
        if self.fft_size < self.frame_len {
            return Err(FeatureError::InvalidConfig(format!(
                "fft_size {} < frame_len {}",
                self.fft_size, self.frame_len
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(FeatureError::InvalidConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(FeatureError::InvalidConfig(format!(
                "pre_emphasis {} outside [0, 1)",
                self.pre_emphasis
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn n_frames(&self, clip_len: usize) -> Option<usize> {
        if clip_len < self.frame_len {
            None
        } else {
            Some((clip_len - self.frame_len) / self.hop + 1)
        }
    }
}

/// Full cepstral pipeline parameters for one of MFCC / LFCC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CepstralConfig {
    pub stft: StftConfig,
    pub n_filters: usize,
    pub n_coeffs: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub scale: FilterScale,
    pub log_floor: f64,
}

impl CepstralConfig {
    pub fn mel_default() -> Self {
        CepstralConfig {
            stft: StftConfig::default(),
            n_filters: 40,
            n_coeffs: 40,
            f_min: 0.0,
            f_max: 8000.0,
            scale: FilterScale::Mel,
            log_floor: 1e-10,
        }
    }

    pub fn linear_default() -> Self {
        CepstralConfig {
            scale: FilterScale::Linear,
            ..CepstralConfig::mel_default()
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        self.stft.validate()?;
        if self.n_filters == 0 {
            return Err(FeatureError::InvalidConfig("n_filters must be > 0".into()));
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_filters {
            return Err(FeatureError::InvalidConfig(format!(
                "n_coeffs {} must be in 1..=n_filters ({})",
                self.n_coeffs, self.n_filters
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(FeatureError::InvalidConfig(format!(
                "need 0 <= f_min ({}) < f_max ({}) <= Nyquist ({nyquist})",
                self.f_min, self.f_max
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(FeatureError::InvalidConfig("log_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// The extraction bundle the pipeline, checkpoints, and the cache all share:
/// one STFT configuration plus the cepstral and chroma parameters.
///
/// `clip_samples` is the fixed crop/pad window clips pass through before
/// extraction. It shapes the dataset, not the per-frame math, so it does
/// not enter any fingerprint; it rides along so inference can window clips
/// the same way training did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub stft: StftConfig,
    pub n_filters: usize,
    pub n_coeffs: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
    pub chroma_tuning_hz: f64,
    pub clip_samples: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            stft: StftConfig::default(),
            n_filters: 40,
            n_coeffs: 40,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-10,
            chroma_tuning_hz: 440.0,
            clip_samples: crate::DEFAULT_CLIP_SAMPLES,
        }
    }
}

impl FeatureConfig {
    pub fn cepstral(&self, scale: FilterScale) -> CepstralConfig {
        CepstralConfig {
            stft: self.stft,
            n_filters: self.n_filters,
            n_coeffs: self.n_coeffs,
            f_min: self.f_min,
            f_max: self.f_max,
            scale,
            log_floor: self.log_floor,
        }
    }

    pub fn rows_for(&self, kind: FeatureKind) -> usize {
        match kind {
            FeatureKind::Mfcc | FeatureKind::Lfcc => self.n_coeffs,
            FeatureKind::Chroma => N_CHROMA,
        }
    }

    pub fn fingerprints(&self, sample_rate: u32) -> FeatureFingerprints {
        FeatureFingerprints {
            mfcc: cepstral_fingerprint(FeatureKind::Mfcc, &self.cepstral(FilterScale::Mel), sample_rate),
            lfcc: cepstral_fingerprint(
                FeatureKind::Lfcc,
                &self.cepstral(FilterScale::Linear),
                sample_rate,
            ),
            chroma: chroma_fingerprint(&self.stft, self.chroma_tuning_hz, sample_rate),
        }
    }
}

/// Hashes binding every feature matrix (and any model trained on it) to the
/// exact extraction configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFingerprints {
    pub mfcc: u64,
    pub lfcc: u64,
    pub chroma: u64,
}

impl FeatureFingerprints {
    pub fn for_kind(&self, kind: FeatureKind) -> u64 {
        match kind {
            FeatureKind::Mfcc => self.mfcc,
            FeatureKind::Lfcc => self.lfcc,
            FeatureKind::Chroma => self.chroma,
        }
    }
}

// ---------------------------------------------------------------------------
// Fingerprinting (FNV-1a over a canonical field encoding)
// ---------------------------------------------------------------------------

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_bits().to_le_bytes());
    }
}

fn stft_into(h: &mut Fnv, cfg: &StftConfig, sample_rate: u32) {
    h.u64(sample_rate as u64);
    h.u64(cfg.frame_len as u64);
    h.u64(cfg.hop as u64);
    h.u64(cfg.fft_size as u64);
    h.bytes(match cfg.window {
        WindowKind::Hann => b"hann",
    });
    h.f64(cfg.pre_emphasis);
}

pub fn cepstral_fingerprint(kind: FeatureKind, cfg: &CepstralConfig, sample_rate: u32) -> u64 {
    let mut h = Fnv::new();
    h.bytes(kind.name().as_bytes());
    stft_into(&mut h, &cfg.stft, sample_rate);
    h.u64(cfg.n_filters as u64);
    h.u64(cfg.n_coeffs as u64);
    h.f64(cfg.f_min);
    h.f64(cfg.f_max);
    h.bytes(match cfg.scale {
        FilterScale::Mel => b"mel",
        FilterScale::Linear => b"linear",
    });
    h.f64(cfg.log_floor);
    h.0
}

pub fn chroma_fingerprint(cfg: &StftConfig, tuning_hz: f64, sample_rate: u32) -> u64 {
    let mut h = Fnv::new();
    h.bytes(b"chroma");
    stft_into(&mut h, cfg, sample_rate);
    h.f64(tuning_hz);
    h.bytes(b"per-frame-max");
    h.0
}

// ---------------------------------------------------------------------------
// Matrices
// ---------------------------------------------------------------------------

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// A coefficients-by-frames matrix tagged with the feature kind and the
/// fingerprint of the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub mat: Mat,
    pub fingerprint: u64,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.mat.rows
    }

    pub fn cols(&self) -> usize {
        self.mat.cols
    }

    pub fn data_f32(&self) -> Vec<f32> {
        self.mat.data.iter().map(|&v| v as f32).collect()
    }
}

/// Per-row mean/std used for z-score normalization; computed on the training
/// split only and stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

/// Population mean/std per row across the frames of all given matrices.
pub fn compute_row_stats<'a>(mats: impl IntoIterator<Item = &'a Mat> + Clone) -> RowStats {
    let mut rows = 0usize;
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    for m in mats.clone() {
        if sum.is_empty() {
            rows = m.rows;
            sum = vec![0.0; rows];
        }
        assert_eq!(m.rows, rows, "row count mismatch across matrices");
        for r in 0..rows {
            sum[r] += m.row(r).iter().sum::<f64>();
        }
        count += m.cols;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count.max(1) as f64).collect();
    let mut sq = vec![0.0; rows];
    for m in mats {
        for r in 0..rows {
            sq[r] += m.row(r).iter().map(|&v| (v - mean[r]) * (v - mean[r])).sum::<f64>();
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count.max(1) as f64).sqrt()).collect();
    RowStats { mean, std }
}

/// Row-wise z-score: row_i <- (row_i - mean_i) / max(std_i, 1e-8).
pub fn normalize_per_coefficient(
    fm: &FeatureMatrix,
    stats: &RowStats,
) -> Result<FeatureMatrix, FeatureError> {
    if stats.mean.len() != fm.rows() || stats.std.len() != fm.rows() {
        return Err(FeatureError::ShapeMismatch(format!(
            "stats have {} rows, features have {}",
            stats.mean.len(),
            fm.rows()
        )));
    }
    let mut out = fm.clone();
    for r in 0..out.mat.rows {
        let (mean, std) = (stats.mean[r], stats.std[r].max(STD_FLOOR));
        let base = r * out.mat.cols;
        for v in &mut out.mat.data[base..base + out.mat.cols] {
            *v = (*v - mean) / std;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Core DSP
// ---------------------------------------------------------------------------

/// O'Shaughnessy mel scale: mel(f) = 2595 * log10(1 + f/700).
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Short-term power spectrum: per frame, pre-emphasis y[n] = x[n] - a*x[n-1]
/// (y[0] = x[0]), Hann window, zero-pad to fft_size, DFT, |X[k]|^2 for the
/// fft_size/2 + 1 non-negative-frequency bins. Rows are bins, columns frames.
pub fn power_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<Mat, FeatureError> {
    cfg.validate()?;
    let frames = frame_signal(&clip.samples, cfg.frame_len, cfg.hop)?;
    let n_bins = cfg.n_bins();
    let mut out = Mat::zeros(n_bins, frames.len());

    let window: Vec<f64> = (0..cfg.frame_len)
        .map(|n| {
            0.5 - 0.5
                * (std::f64::consts::TAU * n as f64 / (cfg.frame_len as f64 - 1.0)).cos()
        })
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];

    for (j, frame) in frames.iter().enumerate() {
        buf.fill(Complex::new(0.0, 0.0));
        buf[0] = Complex::new(frame[0] * window[0], 0.0);
        for n in 1..cfg.frame_len {
            let emphasized = frame[n] - cfg.pre_emphasis * frame[n - 1];
            buf[n] = Complex::new(emphasized * window[n], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            out.set(k, j, buf[k].norm_sqr());
        }
    }
    Ok(out)
}

/// Triangular filterbank with n_filters + 2 edges spaced uniformly on the
/// chosen scale between f_min and f_max. Each filter is the continuous
/// triangle rising from edge i to 1.0 at edge i+1 and falling to edge i+2,
/// sampled at the FFT bin frequencies k * sample_rate / fft_size.
pub fn triangular_filterbank(
    cfg: &CepstralConfig,
    sample_rate: u32,
    fft_size: usize,
) -> Result<Mat, FeatureError> {
    cfg.validate(sample_rate)?;
    let n_bins = fft_size / 2 + 1;
    let n_edges = cfg.n_filters + 2;

    let edges_hz: Vec<f64> = match cfg.scale {
        FilterScale::Mel => {
            let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
            (0..n_edges)
                .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_edges - 1) as f64))
                .collect()
        }
        FilterScale::Linear => (0..n_edges)
            .map(|i| cfg.f_min + (cfg.f_max - cfg.f_min) * i as f64 / (n_edges - 1) as f64)
            .collect(),
    };

    let bin_hz = sample_rate as f64 / fft_size as f64;
    for w in edges_hz.windows(2) {
        let (a, b) = ((w[0] / bin_hz).round() as usize, (w[1] / bin_hz).round() as usize);
        if a == b {
            return Err(FeatureError::DegenerateFilter {
                edge_a_hz: w[0],
                edge_b_hz: w[1],
                bin: a,
            });
        }
    }

    let mut bank = Mat::zeros(cfg.n_filters, n_bins);
    for f in 0..cfg.n_filters {
        let (lo, mid, hi) = (edges_hz[f], edges_hz[f + 1], edges_hz[f + 2]);
        for k in 0..n_bins {
            let freq = k as f64 * bin_hz;
            let w = ((freq - lo) / (mid - lo)).min((hi - freq) / (hi - mid));
            if w > 0.0 {
                bank.set(f, k, w.min(1.0));
            }
        }
    }
    Ok(bank)
}

/// Orthonormal DCT-II truncated to n_out coefficients:
/// c[k] = s(k) * sum_n x[n] cos(pi k (n + 0.5) / N),
/// s(0) = sqrt(1/N), s(k>0) = sqrt(2/N).
pub fn dct2_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n_out <= n, "n_out ({n_out}) exceeds input length ({n})");
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        let sum: f64 = x
            .iter()
            .enumerate()
            .map(|(i, &v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos())
            .sum();
        out.push(scale * sum);
    }
    out
}

/// The full orthonormal DCT-II matrix, rows = output coefficients.
pub fn dct2_matrix(n: usize, n_out: usize) -> Mat {
    let mut m = Mat::zeros(n_out, n);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m.set(
                k,
                i,
                scale * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos(),
            );
        }
    }
    m
}

fn cepstral_pipeline(
    clip: &AudioClip,
    cfg: &CepstralConfig,
    sample_rate: u32,
    kind: FeatureKind,
) -> Result<FeatureMatrix, FeatureError> {
    let spec = power_spectrogram(clip, &cfg.stft)?;
    let bank = triangular_filterbank(cfg, sample_rate, cfg.stft.fft_size)?;
    let dct = dct2_matrix(cfg.n_filters, cfg.n_coeffs);
    let fm = apply_cepstral(&spec, &bank, &dct, cfg.log_floor);
    Ok(FeatureMatrix {
        kind,
        mat: fm,
        fingerprint: cepstral_fingerprint(kind, cfg, sample_rate),
    })
}

fn apply_cepstral(spec: &Mat, bank: &Mat, dct: &Mat, log_floor: f64) -> Mat {
    let (n_filters, n_coeffs, n_frames) = (bank.rows, dct.rows, spec.cols);
    let mut out = Mat::zeros(n_coeffs, n_frames);
    let mut col = vec![0.0; spec.rows];
    let mut log_e = vec![0.0; n_filters];
    for j in 0..n_frames {
        for k in 0..spec.rows {
            col[k] = spec.at(k, j);
        }
        for (f, le) in log_e.iter_mut().enumerate() {
            let e: f64 = bank
                .row(f)
                .iter()
                .zip(&col)
                .map(|(&w, &p)| w * p)
                .sum();
            *le = e.max(log_floor).ln();
        }
        for c in 0..n_coeffs {
            let v: f64 = dct.row(c).iter().zip(&log_e).map(|(&d, &l)| d * l).sum();
            out.set(c, j, v);
        }
    }
    out
}

/// Mel-frequency cepstral coefficients. `cfg.scale` must be `Mel`.
pub fn mfcc(
    clip: &AudioClip,
    cfg: &CepstralConfig,
    sample_rate: u32,
) -> Result<FeatureMatrix, FeatureError> {
    if cfg.scale != FilterScale::Mel {
        return Err(FeatureError::InvalidConfig(
            "mfcc requires scale = Mel".into(),
        ));
    }
    cepstral_pipeline(clip, cfg, sample_rate, FeatureKind::Mfcc)
}

/// Linear-frequency cepstral coefficients. `cfg.scale` must be `Linear`.
pub fn lfcc(
    clip: &AudioClip,
    cfg: &CepstralConfig,
    sample_rate: u32,
) -> Result<FeatureMatrix, FeatureError> {
    if cfg.scale != FilterScale::Linear {
        return Err(FeatureError::InvalidConfig(
            "lfcc requires scale = Linear".into(),
        ));
    }
    cepstral_pipeline(clip, cfg, sample_rate, FeatureKind::Lfcc)
}

/// Chroma-STFT: every FFT bin k > 0 at frequency f_k contributes its power
/// to pitch class round(12 log2(f_k / tuning)) mod 12 (class 0 = A); each
/// frame column is then divided by its maximum. All-zero columns stay zero.
pub fn chroma_stft(
    clip: &AudioClip,
    cfg: &StftConfig,
    tuning_hz: f64,
    sample_rate: u32,
) -> Result<FeatureMatrix, FeatureError> {
    if tuning_hz <= 0.0 {
        return Err(FeatureError::InvalidConfig("tuning must be positive".into()));
    }
    let spec = power_spectrogram(clip, cfg)?;
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;
    let class_of: Vec<usize> = (0..spec.rows)
        .map(|k| {
            if k == 0 {
                usize::MAX // DC carries no pitch
            } else {
                let semis = (12.0 * (k as f64 * bin_hz / tuning_hz).log2()).round() as i64;
                semis.rem_euclid(N_CHROMA as i64) as usize
            }
        })
        .collect();

    let mut out = Mat::zeros(N_CHROMA, spec.cols);
    for j in 0..spec.cols {
        for k in 1..spec.rows {
            let p = class_of[k];
            out.data[p * spec.cols + j] += spec.at(k, j);
        }
        let mut max = 0.0f64;
        for p in 0..N_CHROMA {
            max = max.max(out.at(p, j));
        }
        if max > 0.0 {
            for p in 0..N_CHROMA {
                let v = out.at(p, j) / max;
                out.set(p, j, v);
            }
        }
    }
    Ok(FeatureMatrix {
        kind: FeatureKind::Chroma,
        mat: out,
        fingerprint: chroma_fingerprint(cfg, tuning_hz, sample_rate),
    })
}

/// Precomputed extraction state for a fixed configuration: filterbanks, DCT
/// matrix, window, and FFT plan are built once and reused across clips.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    mel_bank: Mat,
    lin_bank: Mat,
    dct: Mat,
    fingerprints: FeatureFingerprints,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        let mel = cfg.cepstral(FilterScale::Mel);
        let lin = cfg.cepstral(FilterScale::Linear);
        let mel_bank = triangular_filterbank(&mel, sample_rate, cfg.stft.fft_size)?;
        let lin_bank = triangular_filterbank(&lin, sample_rate, cfg.stft.fft_size)?;
        let dct = dct2_matrix(cfg.n_filters, cfg.n_coeffs);
        Ok(FeatureExtractor {
            cfg,
            sample_rate,
            mel_bank,
            lin_bank,
            dct,
            fingerprints: cfg.fingerprints(sample_rate),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn fingerprints(&self) -> FeatureFingerprints {
        self.fingerprints
    }

    /// Extracts all three views of a clip, sharing one spectrogram pass.
    pub fn extract_all(&self, clip: &AudioClip) -> Result<[FeatureMatrix; 3], FeatureError> {
        let spec = power_spectrogram(clip, &self.cfg.stft)?;
        let mfcc_mat = apply_cepstral(&spec, &self.mel_bank, &self.dct, self.cfg.log_floor);
        let lfcc_mat = apply_cepstral(&spec, &self.lin_bank, &self.dct, self.cfg.log_floor);
        let chroma = chroma_stft(clip, &self.cfg.stft, self.cfg.chroma_tuning_hz, self.sample_rate)?;
        Ok([
            FeatureMatrix {
                kind: FeatureKind::Mfcc,
                mat: mfcc_mat,
                fingerprint: self.fingerprints.mfcc,
            },
            FeatureMatrix {
                kind: FeatureKind::Lfcc,
                mat: lfcc_mat,
                fingerprint: self.fingerprints.lfcc,
            },
            chroma,
        ])
    }

    pub fn extract(&self, clip: &AudioClip, kind: FeatureKind) -> Result<FeatureMatrix, FeatureError> {
        match kind {
            FeatureKind::Mfcc => mfcc(clip, &self.cfg.cepstral(FilterScale::Mel), self.sample_rate),
            FeatureKind::Lfcc => {
                lfcc(clip, &self.cfg.cepstral(FilterScale::Linear), self.sample_rate)
            }
            FeatureKind::Chroma => {
                chroma_stft(clip, &self.cfg.stft, self.cfg.chroma_tuning_hz, self.sample_rate)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CANONICAL_SAMPLE_RATE;

    fn sine(freq: f64, amp: f64, secs: f64, rate: u32) -> AudioClip {
        let n = (secs * rate as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| amp * (std::f64::consts::TAU * freq * i as f64 / rate as f64).sin())
                .collect(),
            rate,
        )
    }

    fn silence(secs: f64, rate: u32) -> AudioClip {
        AudioClip::new(vec![0.0; (secs * rate as f64) as usize], rate)
    }

    /// Amplitude-modulated broadband noise: every filter sees energy well
    /// above the log floor and every coefficient row varies over time.
    fn noise_clip(secs: f64, amp: f64, seed: u64) -> AudioClip {
        let rate = CANONICAL_SAMPLE_RATE;
        let n = (secs * rate as f64) as usize;
        let mut rng = crate::rng::Rng::seed_from(seed);
        AudioClip::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 / rate as f64;
                    let envelope = 0.6 + 0.4 * (std::f64::consts::TAU * 3.0 * t).sin();
                    amp * envelope * rng.uniform(-1.0, 1.0)
                })
                .collect(),
            rate,
        )
    }

    #[test]
    fn zero_clip_gives_zero_spectrogram() {
        let spec = power_spectrogram(&silence(0.2, 16_000), &StftConfig::default()).unwrap();
        assert!(spec.data.iter().all(|&v| v == 0.0));
        assert_eq!(spec.rows, 257);
    }

    #[test]
    fn bin_center_sine_peaks_at_its_bin() {
        let cfg = StftConfig {
            pre_emphasis: 0.0,
            ..StftConfig::default()
        };
        let k = 80; // 80 * 16000/512 = 2500 Hz
        let freq = k as f64 * 16_000.0 / cfg.fft_size as f64;
        let spec = power_spectrogram(&sine(freq, 0.8, 0.5, 16_000), &cfg).unwrap();
        for j in 0..spec.cols {
            let argmax = (0..spec.rows)
                .max_by(|&a, &b| spec.at(a, j).total_cmp(&spec.at(b, j)))
                .unwrap();
            assert_eq!(argmax, k, "frame {j}");
        }
    }

    #[test]
    fn parseval_energy_identity() {
        let cfg = StftConfig::default();
        let mut rng = crate::rng::Rng::seed_from(99);
        let clip = AudioClip::new(
            (0..cfg.frame_len).map(|_| rng.uniform(-0.9, 0.9)).collect(),
            16_000,
        );
        let spec = power_spectrogram(&clip, &cfg).unwrap();
        assert_eq!(spec.cols, 1);

        // time-domain energy of the pre-emphasized, windowed frame
        let mut y = vec![0.0; cfg.frame_len];
        y[0] = clip.samples[0];
        for n in 1..cfg.frame_len {
            y[n] = clip.samples[n] - cfg.pre_emphasis * clip.samples[n - 1];
        }
        let energy: f64 = y
            .iter()
            .enumerate()
            .map(|(n, &v)| {
                let w = 0.5
                    - 0.5
                        * (std::f64::consts::TAU * n as f64 / (cfg.frame_len as f64 - 1.0)).cos();
                (v * w) * (v * w)
            })
            .sum();

        // conjugate symmetry: interior bins count twice
        let mut spectral = spec.at(0, 0) + spec.at(spec.rows - 1, 0);
        for k in 1..spec.rows - 1 {
            spectral += 2.0 * spec.at(k, 0);
        }
        spectral /= cfg.fft_size as f64;
        assert!(
            (spectral - energy).abs() <= 1e-6 * energy.abs(),
            "spectral={spectral} energy={energy}"
        );
    }

    #[test]
    fn mel_formula_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        let expected = 2595.0 * 2f64.log10(); // mel(700)
        assert!((hz_to_mel(700.0) - expected).abs() < 1e-9);
        assert!((expected - 781.17).abs() < 0.01);
    }

    #[test]
    fn mel_round_trip() {
        for f in [0.0, 120.5, 1000.0, 4000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_filterbank_peaks_uniformly_spaced() {
        let cfg = CepstralConfig::linear_default();
        let bank = triangular_filterbank(&cfg, 16_000, 512).unwrap();
        let peaks: Vec<usize> = (0..bank.rows)
            .map(|f| {
                (0..bank.cols)
                    .max_by(|&a, &b| bank.at(f, a).total_cmp(&bank.at(f, b)))
                    .unwrap()
            })
            .collect();
        // edges every 8000/41 Hz = 6.24 bins, so argmax spacing is 6 or 7
        let diffs: Vec<isize> = peaks.windows(2).map(|w| w[1] as isize - w[0] as isize).collect();
        assert!(diffs.iter().all(|&d| d == 6 || d == 7), "diffs={diffs:?}");
    }

    #[test]
    fn filterbank_rows_are_nonnegative_unimodal_bandlimited() {
        for cfg in [CepstralConfig::mel_default(), CepstralConfig::linear_default()] {
            let bank = triangular_filterbank(&cfg, 16_000, 512).unwrap();
            let bin_hz = 16_000.0 / 512.0;
            for f in 0..bank.rows {
                let row = bank.row(f);
                assert!(row.iter().all(|&w| w >= 0.0));
                let peak = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap();
                assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1] || w[0] == 0.0 && w[1] == 0.0));
                assert!(row[peak..].windows(2).all(|w| w[0] >= w[1] || w[0] == 0.0));
                for (k, &w) in row.iter().enumerate() {
                    let freq = k as f64 * bin_hz;
                    if freq < cfg.f_min || freq > cfg.f_max {
                        assert_eq!(w, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_filter_is_rejected() {
        // 512 filters over 0..8000 Hz with 31.25 Hz bins cannot all separate
        let cfg = CepstralConfig {
            n_filters: 512,
            n_coeffs: 12,
            ..CepstralConfig::linear_default()
        };
        assert!(matches!(
            triangular_filterbank(&cfg, 16_000, 512),
            Err(FeatureError::DegenerateFilter { .. })
        ));
    }

    #[test]
    fn dct_constant_input_is_dc_only() {
        let c = 3.25;
        let out = dct2_orthonormal(&[c; 40], 40);
        assert!((out[0] - c * 40f64.sqrt()).abs() < 1e-12);
        for &v in &out[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn dct_two_point_hand_value() {
        // c[1] = sqrt(2/2) * (cos(pi/4) - cos(3pi/4)) = sqrt(2)
        let out = dct2_orthonormal(&[1.0, -1.0], 2);
        assert!(out[0].abs() < 1e-12);
        assert!((out[1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dct_matrix_is_orthonormal() {
        for n in [12usize, 40, 64] {
            let d = dct2_matrix(n, n);
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = d.row(i).iter().zip(d.row(j)).map(|(&a, &b)| a * b).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10, "n={n} ({i},{j}) dot={dot}");
                }
            }
        }
    }

    #[test]
    fn dct_preserves_norm_at_full_length() {
        let mut rng = crate::rng::Rng::seed_from(4);
        let x: Vec<f64> = (0..40).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let y = dct2_orthonormal(&x, 40);
        let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((nx - ny).abs() < 1e-10);
    }

    #[test]
    fn mfcc_of_silence_is_the_dc_column() {
        let cfg = CepstralConfig::mel_default();
        let fm = mfcc(&silence(0.2, CANONICAL_SAMPLE_RATE), &cfg, CANONICAL_SAMPLE_RATE).unwrap();
        let expect_c0 = 1e-10f64.ln() * (cfg.n_filters as f64).sqrt();
        for j in 0..fm.cols() {
            assert!((fm.mat.at(0, j) - expect_c0).abs() < 1e-9);
            for r in 1..fm.rows() {
                assert!(fm.mat.at(r, j).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mfcc_gain_invariance_above_row_zero() {
        // the additive-log-constant structure requires every filter energy
        // to clear the log floor at both gains, hence broadband noise rather
        // than a narrowband tone
        let base = noise_clip(0.3, 0.05, 42);
        let cfg = CepstralConfig::mel_default();
        let fm1 = mfcc(&base, &cfg, CANONICAL_SAMPLE_RATE).unwrap();
        for g in [0.1, 2.0, 10.0] {
            let scaled = AudioClip::new(
                base.samples.iter().map(|&s| s * g).collect(),
                base.sample_rate,
            );
            let fm2 = mfcc(&scaled, &cfg, CANONICAL_SAMPLE_RATE).unwrap();
            for r in 1..fm1.rows() {
                for j in 0..fm1.cols() {
                    let d = (fm1.mat.at(r, j) - fm2.mat.at(r, j)).abs();
                    assert!(d < 1e-8, "g={g} r={r} j={j} d={d}");
                }
            }
        }
    }

    #[test]
    fn mfcc_and_lfcc_differ_on_non_silence() {
        let clip = sine(700.0, 0.4, 0.3, CANONICAL_SAMPLE_RATE);
        let m = mfcc(&clip, &CepstralConfig::mel_default(), CANONICAL_SAMPLE_RATE).unwrap();
        let l = lfcc(&clip, &CepstralConfig::linear_default(), CANONICAL_SAMPLE_RATE).unwrap();
        assert_ne!(m.mat.data, l.mat.data);
    }

    #[test]
    fn high_tone_sits_higher_in_mel_bank_than_linear_bank() {
        // A 7 kHz tone: the mel warp stretches low frequencies across most of
        // the filter axis, so a high tone lands at a higher mel filter index
        // than linear spacing puts it. Expected indices derived by locating
        // the filter peaks nearest 7 kHz on each axis: mel 38, linear 35.
        let clip = sine(7000.0, 0.5, 0.3, CANONICAL_SAMPLE_RATE);
        let spec = power_spectrogram(&clip, &StftConfig::default()).unwrap();
        let argmax_energy = |cfg: &CepstralConfig| -> usize {
            let bank = triangular_filterbank(cfg, CANONICAL_SAMPLE_RATE, 512).unwrap();
            let mut energies = vec![0.0; bank.rows];
            for (f, e) in energies.iter_mut().enumerate() {
                for j in 0..spec.cols {
                    for k in 0..spec.rows {
                        *e += bank.at(f, k) * spec.at(k, j);
                    }
                }
            }
            (0..energies.len())
                .max_by(|&a, &b| energies[a].total_cmp(&energies[b]))
                .unwrap()
        };
        let mel_idx = argmax_energy(&CepstralConfig::mel_default());
        let lin_idx = argmax_energy(&CepstralConfig::linear_default());
        assert_eq!(mel_idx, 38);
        assert_eq!(lin_idx, 35);
        assert!(mel_idx > lin_idx);
    }

    #[test]
    fn chroma_440_and_880_peak_at_class_zero() {
        for freq in [440.0, 880.0] {
            let fm = chroma_stft(
                &sine(freq, 0.5, 0.3, CANONICAL_SAMPLE_RATE),
                &StftConfig::default(),
                440.0,
                CANONICAL_SAMPLE_RATE,
            )
            .unwrap();
            assert_eq!(fm.rows(), 12);
            for j in 0..fm.cols() {
                let argmax = (0..12)
                    .max_by(|&a, &b| fm.mat.at(a, j).total_cmp(&fm.mat.at(b, j)))
                    .unwrap();
                assert_eq!(argmax, 0, "freq={freq} frame={j}");
                assert!((fm.mat.at(0, j) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chroma_of_silence_is_zero() {
        let fm = chroma_stft(
            &silence(0.2, CANONICAL_SAMPLE_RATE),
            &StftConfig::default(),
            440.0,
            CANONICAL_SAMPLE_RATE,
        )
        .unwrap();
        assert!(fm.mat.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chroma_columns_lie_in_unit_interval() {
        let clip = sine(523.25, 0.4, 0.3, CANONICAL_SAMPLE_RATE);
        let fm = chroma_stft(&clip, &StftConfig::default(), 440.0, CANONICAL_SAMPLE_RATE).unwrap();
        for j in 0..fm.cols() {
            let mut max = 0.0f64;
            for r in 0..12 {
                let v = fm.mat.at(r, j);
                assert!((0.0..=1.0).contains(&v));
                max = max.max(v);
            }
            assert!(max == 0.0 || (max - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let clip = sine(610.0, 0.3, 0.3, CANONICAL_SAMPLE_RATE);
        let ex = FeatureExtractor::new(FeatureConfig::default(), CANONICAL_SAMPLE_RATE).unwrap();
        let a = ex.extract_all(&clip).unwrap();
        let b = ex.extract_all(&clip).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mat.data, y.mat.data);
        }
    }

    #[test]
    fn extractor_matches_single_shot_ops() {
        let clip = sine(610.0, 0.3, 0.25, CANONICAL_SAMPLE_RATE);
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(cfg, CANONICAL_SAMPLE_RATE).unwrap();
        let [m, l, c] = ex.extract_all(&clip).unwrap();
        assert_eq!(
            m.mat.data,
            mfcc(&clip, &cfg.cepstral(FilterScale::Mel), CANONICAL_SAMPLE_RATE)
                .unwrap()
                .mat
                .data
        );
        assert_eq!(
            l.mat.data,
            lfcc(&clip, &cfg.cepstral(FilterScale::Linear), CANONICAL_SAMPLE_RATE)
                .unwrap()
                .mat
                .data
        );
        assert_eq!(
            c.mat.data,
            chroma_stft(&clip, &cfg.stft, 440.0, CANONICAL_SAMPLE_RATE)
                .unwrap()
                .mat
                .data
        );
    }

    #[test]
    fn all_entries_finite_even_for_silence_and_loud_input() {
        let ex = FeatureExtractor::new(FeatureConfig::default(), CANONICAL_SAMPLE_RATE).unwrap();
        for clip in [silence(0.2, 16_000), sine(440.0, 1.0, 0.2, 16_000)] {
            for fm in ex.extract_all(&clip).unwrap() {
                assert!(fm.mat.data.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn fingerprint_changes_with_every_field() {
        let rate = CANONICAL_SAMPLE_RATE;
        let base = CepstralConfig::mel_default();
        let fp = |c: &CepstralConfig| cepstral_fingerprint(FeatureKind::Mfcc, c, rate);
        let base_fp = fp(&base);

        let variants = [
            CepstralConfig { n_filters: 41, ..base },
            CepstralConfig { n_coeffs: 39, ..base },
            CepstralConfig { f_min: 50.0, ..base },
            CepstralConfig { f_max: 7000.0, ..base },
            CepstralConfig { log_floor: 1e-9, ..base },
            CepstralConfig { scale: FilterScale::Linear, ..base },
            CepstralConfig {
                stft: StftConfig { hop: 200, ..base.stft },
                ..base
            },
            CepstralConfig {
                stft: StftConfig { frame_len: 320, ..base.stft },
                ..base
            },
            CepstralConfig {
                stft: StftConfig { fft_size: 1024, ..base.stft },
                ..base
            },
            CepstralConfig {
                stft: StftConfig { pre_emphasis: 0.95, ..base.stft },
                ..base
            },
        ];
        for (i, v) in variants.iter().enumerate() {
            assert_ne!(base_fp, fp(v), "variant {i} did not change the fingerprint");
        }
        assert_ne!(
            cepstral_fingerprint(FeatureKind::Mfcc, &base, rate),
            cepstral_fingerprint(FeatureKind::Lfcc, &base, rate),
            "kind must enter the fingerprint"
        );
        assert_ne!(fp(&base), cepstral_fingerprint(FeatureKind::Mfcc, &base, 8000));
    }

    #[test]
    fn normalize_self_stats_gives_zero_mean_unit_std() {
        let clip = noise_clip(0.3, 0.4, 17);
        let fm = mfcc(&clip, &CepstralConfig::mel_default(), CANONICAL_SAMPLE_RATE).unwrap();
        let stats = compute_row_stats([&fm.mat]);
        let out = normalize_per_coefficient(&fm, &stats).unwrap();
        for r in 0..out.rows() {
            let row = out.mat.row(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-9, "row {r} mean {mean}");
            if stats.std[r] > STD_FLOOR {
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                    / row.len() as f64;
                assert!((var.sqrt() - 1.0).abs() < 1e-6, "row {r} std {}", var.sqrt());
            }
        }
    }

    #[test]
    fn normalize_constant_row_floors_to_zero() {
        let fm = FeatureMatrix {
            kind: FeatureKind::Mfcc,
            mat: Mat {
                rows: 2,
                cols: 4,
                data: vec![5.0, 5.0, 5.0, 5.0, 1.0, 2.0, 3.0, 4.0],
            },
            fingerprint: 0,
        };
        let stats = compute_row_stats([&fm.mat]);
        let out = normalize_per_coefficient(&fm, &stats).unwrap();
        assert!(out.mat.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_rejects_mismatched_stats() {
        let fm = FeatureMatrix {
            kind: FeatureKind::Chroma,
            mat: Mat::zeros(12, 3),
            fingerprint: 0,
        };
        let stats = RowStats {
            mean: vec![0.0; 40],
            std: vec![1.0; 40],
        };
        assert!(matches!(
            normalize_per_coefficient(&fm, &stats),
            Err(FeatureError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn normalize_with_stored_stats_is_repeatable() {
        let train = sine(523.0, 0.4, 0.3, CANONICAL_SAMPLE_RATE);
        let valid = sine(660.0, 0.2, 0.3, CANONICAL_SAMPLE_RATE);
        let cfg = CepstralConfig::mel_default();
        let stats = compute_row_stats([&mfcc(&train, &cfg, 16_000).unwrap().mat]);
        let v = mfcc(&valid, &cfg, 16_000).unwrap();
        let a = normalize_per_coefficient(&v, &stats).unwrap();
        let b = normalize_per_coefficient(&v, &stats).unwrap();
        assert_eq!(a.mat.data, b.mat.data);
    }
}
