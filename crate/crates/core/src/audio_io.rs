//! WAV decoding/encoding and the framing primitives the extractors build on.
//!
//! Only RIFF/WAVE with 16-bit integer PCM (mono or stereo) is supported;
//! that is the one interchange format the pipeline reads and writes.
//! Stereo is folded to mono by channel averaging, samples are scaled by
//! 1/32768 so every decoded value lies in [-1, 1].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV container: {0}")]
    MalformedContainer(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("WAV file contains no audio frames")]
    EmptyAudio,
    #[error("clip too short: {len} samples, need at least {frame_len}")]
    ClipTooShort { len: usize, frame_len: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono PCM audio, samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample_rate must be positive");
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

const PCM_FORMAT: u16 = 1;
const PCM_SCALE: f64 = 32768.0;

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Decodes a RIFF/WAVE byte stream into a mono [`AudioClip`].
///
/// Accepts 16-bit integer PCM with 1 or 2 channels at any sample rate.
/// Stereo frames are averaged channel-wise before scaling by 1/32768.
pub fn load_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::MalformedContainer(
            "shorter than a RIFF header".into(),
        ));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::MalformedContainer("missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedContainer("missing WAVE marker".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let chunk_id = &bytes[pos..pos + 4];
        let chunk_size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if body_start + chunk_size > bytes.len() {
            return Err(AudioError::MalformedContainer(format!(
                "chunk {:?} of {} bytes overruns the file",
                String::from_utf8_lossy(chunk_id),
                chunk_size
            )));
        }
        match chunk_id {
            b"fmt " => {
                if chunk_size < 16 {
                    return Err(AudioError::MalformedContainer(
                        "fmt chunk shorter than 16 bytes".into(),
                    ));
                }
                fmt = Some((
                    read_u16(bytes, body_start),
                    read_u16(bytes, body_start + 2),
                    read_u32(bytes, body_start + 4),
                    read_u16(bytes, body_start + 14),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_start + chunk_size]),
            _ => {} // LIST, fact, cue, ... skipped
        }
        // chunk bodies are word-aligned; odd sizes carry a pad byte
        pos = body_start + chunk_size + (chunk_size & 1);
    }
    if pos != bytes.len() {
        return Err(AudioError::MalformedContainer(
            "trailing bytes after the last chunk".into(),
        ));
    }

    let (format, channels, sample_rate, bits) = fmt
        .ok_or_else(|| AudioError::MalformedContainer("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedContainer("no data chunk".into()))?;

    if format != PCM_FORMAT {
        return Err(AudioError::UnsupportedEncoding(format!(
            "audio format {format}, only integer PCM (1) is supported"
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{bits}-bit samples, only 16-bit PCM is supported"
        )));
    }
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{channels} channels, only mono and stereo are supported"
        )));
    }
    if sample_rate == 0 {
        return Err(AudioError::MalformedContainer("zero sample rate".into()));
    }

    let block = 2 * channels as usize;
    if data.len() % block != 0 {
        return Err(AudioError::MalformedContainer(
            "data chunk is not a whole number of frames".into(),
        ));
    }
    let n_frames = data.len() / block;
    if n_frames == 0 {
        return Err(AudioError::EmptyAudio);
    }

    let mut samples = Vec::with_capacity(n_frames);
    for frame in data.chunks_exact(block) {
        let mut acc = 0.0f64;
        for ch in frame.chunks_exact(2) {
            acc += i16::from_le_bytes([ch[0], ch[1]]) as f64;
        }
        samples.push(acc / channels as f64 / PCM_SCALE);
    }
    Ok(AudioClip::new(samples, sample_rate))
}

pub fn load_wav_file(path: &std::path::Path) -> Result<AudioClip, AudioError> {
    let bytes = std::fs::read(path)?;
    load_wav(&bytes)
}

/// Encodes interleaved 16-bit PCM. `channels` must be 1 or 2 equal-length
/// sample slices in [-1, 1]; out-of-range values are clamped.
pub fn encode_wav_pcm16(channels: &[&[f64]], sample_rate: u32) -> Vec<u8> {
    assert!(
        channels.len() == 1 || channels.len() == 2,
        "only mono and stereo encoding supported"
    );
    let n_frames = channels[0].len();
    assert!(
        channels.iter().all(|c| c.len() == n_frames),
        "channel length mismatch"
    );
    let n_ch = channels.len() as u16;
    let block_align = 2 * n_ch;
    let data_size = n_frames as u32 * block_align as u32;

    let mut out = Vec::with_capacity(44 + data_size as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for i in 0..n_frames {
        for ch in channels {
            let q = (ch[i] * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
            out.extend_from_slice(&q.to_le_bytes());
        }
    }
    out
}

/// Encodes a mono clip as 16-bit PCM WAV bytes.
pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    encode_wav_pcm16(&[&clip.samples], clip.sample_rate)
}

pub fn write_wav_file(clip: &AudioClip, path: &std::path::Path) -> Result<(), AudioError> {
    std::fs::write(path, write_wav(clip))?;
    Ok(())
}

/// Linear-interpolation resampling. Output sample i is read at source
/// position i * (source_rate / target_rate); length is
/// floor(input_len * target / source). Positions past the last input sample
/// clamp to it.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target_rate must be positive");
    if target_rate == clip.sample_rate || clip.samples.is_empty() {
        return AudioClip::new(clip.samples.clone(), target_rate.max(1));
    }
    let src = &clip.samples;
    let out_len =
        (src.len() as u128 * target_rate as u128 / clip.sample_rate as u128) as usize;
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * ratio;
        let idx = pos.floor() as usize;
        if idx + 1 >= src.len() {
            out.push(src[src.len() - 1]);
        } else {
            let frac = pos - idx as f64;
            out.push(src[idx] * (1.0 - frac) + src[idx + 1] * frac);
        }
    }
    AudioClip::new(out, target_rate)
}

/// Cuts the signal into overlapping frames: frame k covers
/// [k*hop, k*hop + frame_len). The trailing remainder is dropped, never
/// padded, so the frame count is exactly floor((len - frame_len)/hop) + 1.
pub fn frame_signal(
    samples: &[f64],
    frame_len: usize,
    hop: usize,
) -> Result<Vec<&[f64]>, AudioError> {
    assert!(frame_len > 0 && hop > 0, "frame_len and hop must be positive");
    if samples.len() < frame_len {
        return Err(AudioError::ClipTooShort {
            len: samples.len(),
            frame_len,
        });
    }
    let n_frames = (samples.len() - frame_len) / hop + 1;
    Ok((0..n_frames)
        .map(|k| &samples[k * hop..k * hop + frame_len])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn silence_round_trip() {
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000);
        let decoded = load_wav(&write_wav(&clip)).unwrap();
        assert_eq!(decoded.sample_rate, 16_000);
        assert_eq!(decoded.samples.len(), 16_000);
        assert!(decoded.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_symmetric_channels_average_to_zero() {
        let left = [32767.0 / PCM_SCALE];
        let right = [-32767.0 / PCM_SCALE];
        let bytes = encode_wav_pcm16(&[&left, &right], 16_000);
        let clip = load_wav(&bytes).unwrap();
        assert_eq!(clip.samples.len(), 1);
        assert!(clip.samples[0].abs() <= 1.0 / PCM_SCALE, "s={}", clip.samples[0]);
    }

    #[test]
    fn sine_round_trip_preserves_amplitude() {
        // 440 Hz at 16 kHz hits its exact peak every 400 samples.
        let amp = 0.5;
        let samples: Vec<f64> = (0..16_000)
            .map(|n| amp * (std::f64::consts::TAU * 440.0 * n as f64 / 16_000.0).sin())
            .collect();
        let clip = AudioClip::new(samples, 16_000);
        let decoded = load_wav(&write_wav(&clip)).unwrap();
        let max_abs = decoded.samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
        assert!((max_abs - amp).abs() <= 1.0 / PCM_SCALE, "max_abs={max_abs}");
    }

    #[test]
    fn decoded_samples_are_normalized() {
        let samples = vec![-1.0, 1.0, 0.25, -0.25];
        let decoded = load_wav(&write_wav(&AudioClip::new(samples, 8000))).unwrap();
        assert!(decoded.samples.iter().all(|&s| (-1.0..=1.0).contains(&s)));
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = write_wav(&AudioClip::new(vec![0.0; 4], 8000));
        bytes[0] = b'X';
        assert!(matches!(
            load_wav(&bytes),
            Err(AudioError::MalformedContainer(_))
        ));
    }

    #[test]
    fn rejects_truncated_data_chunk() {
        let bytes = write_wav(&AudioClip::new(vec![0.1; 100], 8000));
        assert!(matches!(
            load_wav(&bytes[..bytes.len() - 7]),
            Err(AudioError::MalformedContainer(_))
        ));
    }

    #[test]
    fn rejects_non_16_bit() {
        let mut bytes = write_wav(&AudioClip::new(vec![0.0; 4], 8000));
        bytes[34] = 24; // bits-per-sample field
        assert!(matches!(
            load_wav(&bytes),
            Err(AudioError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn rejects_non_pcm_format() {
        let mut bytes = write_wav(&AudioClip::new(vec![0.0; 4], 8000));
        bytes[20] = 3; // IEEE float tag
        assert!(matches!(
            load_wav(&bytes),
            Err(AudioError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn rejects_empty_data() {
        let bytes = encode_wav_pcm16(&[&[][..]], 8000);
        assert!(matches!(load_wav(&bytes), Err(AudioError::EmptyAudio)));
    }

    #[test]
    fn resample_identity_at_same_rate() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 16_000);
        let out = resample_linear(&clip, 16_000);
        assert_eq!(out.samples, clip.samples);
        assert_eq!(out.sample_rate, 16_000);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let clip = AudioClip::new(vec![0.5; 100], 44_100);
        let out = resample_linear(&clip, 16_000);
        assert_eq!(out.sample_rate, 16_000);
        assert!(!out.samples.is_empty());
        assert!(out.samples.iter().all(|&s| (s - 0.5).abs() < 1e-12));
    }

    #[test]
    fn resample_ramp_doubling_interpolates_midpoints() {
        let clip = AudioClip::new(vec![0.0, 0.1, 0.2, 0.3], 8000);
        let out = resample_linear(&clip, 16_000);
        assert_eq!(out.samples.len(), 8);
        for even in (0..8).step_by(2) {
            assert!((out.samples[even] - clip.samples[even / 2]).abs() < 1e-12);
        }
        // odd samples interior to the ramp sit at neighbor midpoints
        for odd in [1usize, 3, 5] {
            let mid = (out.samples[odd - 1] + out.samples[odd + 1]) / 2.0;
            assert!((out.samples[odd] - mid).abs() < 1e-12, "odd={odd}");
        }
        // the final position reads past the last input sample and clamps
        assert!((out.samples[7] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn frame_counts_match_formula() {
        let samples = vec![0.0; 400];
        assert_eq!(frame_signal(&samples, 400, 160).unwrap().len(), 1);

        let samples = vec![0.0; 720];
        let frames = frame_signal(&samples, 400, 160).unwrap();
        assert_eq!(frames.len(), 3);
        // starts at 0, 160, 320
        let base = samples.as_ptr() as usize;
        let starts: Vec<usize> = frames
            .iter()
            .map(|f| (f.as_ptr() as usize - base) / std::mem::size_of::<f64>())
            .collect();
        assert_eq!(starts, vec![0, 160, 320]);
    }

    #[test]
    fn frame_too_short_is_an_error() {
        let samples = vec![0.0; 399];
        assert!(matches!(
            frame_signal(&samples, 400, 160),
            Err(AudioError::ClipTooShort { len: 399, frame_len: 400 })
        ));
    }

    #[test]
    fn frames_reproduce_the_input_prefix() {
        let samples: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let (frame_len, hop) = (64, 16);
        let frames = frame_signal(&samples, frame_len, hop).unwrap();
        for (k, frame) in frames.iter().enumerate() {
            assert_eq!(*frame, &samples[k * hop..k * hop + frame_len]);
        }
    }

    proptest! {
        #[test]
        fn pcm_round_trip_is_lossless_up_to_quantization(
            samples in proptest::collection::vec(-1.0f64..=1.0, 1..200),
            rate in 1u32..96_000,
        ) {
            let clip = AudioClip::new(samples.clone(), rate);
            let decoded = load_wav(&write_wav(&clip)).unwrap();
            prop_assert_eq!(decoded.sample_rate, rate);
            prop_assert_eq!(decoded.samples.len(), samples.len());
            for (a, b) in samples.iter().zip(&decoded.samples) {
                prop_assert!((a - b).abs() <= 1.0 / PCM_SCALE);
            }
        }

        #[test]
        fn resample_output_length_formula(
            len in 1usize..500,
            src in 1000u32..50_000,
            dst in 1000u32..50_000,
        ) {
            let clip = AudioClip::new(vec![0.25; len], src);
            let out = resample_linear(&clip, dst);
            let expect = (len as u128 * dst as u128 / src as u128) as usize;
            prop_assert_eq!(out.samples.len(), expect);
        }
    }
}
