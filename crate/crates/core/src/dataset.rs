//! Manifest-driven dataset handling.
//!
//! A dataset is a CSV manifest (`clip_id,path,label`) pointing at WAV files.
//! Splits, batch order, and the synthetic corpus are all pure functions of
//! their seeds, so a pipeline run is reproducible end to end.
//!
//! The synthetic generator stands in for the real (external, copyrighted)
//! corpora at desk scale. Bona-fide clips are three harmonically related
//! sines under a slow amplitude envelope plus a little Gaussian noise;
//! spoofed clips share the construction but carry two crude vocoder-style
//! artifacts: a random phase discontinuity in every harmonic twice per
//! second, and a +-6% pitch offset applied to the overtones so they sit
//! inharmonically against the fundamental.

use crate::audio_io::{write_wav_file, AudioClip, AudioError};
use crate::rng::{mix_seed, Rng};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad manifest header: expected 'clip_id,path,label', got '{0}'")]
    BadHeader(String),
    #[error("row {row}: bad label '{label}' (expected 'bona_fide' or 'spoof')")]
    BadLabel { row: usize, label: String },
    #[error("row {row}: malformed line '{line}' (expected 3 comma-separated fields)")]
    BadRow { row: usize, line: String },
    #[error("row {row}: duplicate clip id '{clip_id}'")]
    DuplicateId { row: usize, clip_id: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("degenerate split: the {part} part is empty under fractions {fractions:?}")]
    DegenerateSplit {
        part: &'static str,
        fractions: (f64, f64, f64),
    },
    #[error("split fractions {0:?} must be positive and sum to 1")]
    BadFractions((f64, f64, f64)),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    BonaFide,
    Spoof,
}

impl Label {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "bona_fide" => Some(Label::BonaFide),
            "spoof" => Some(Label::Spoof),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::BonaFide => "bona_fide",
            Label::Spoof => "spoof",
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Label::BonaFide => 0,
            Label::Spoof => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: PathBuf,
    pub label: Label,
}

pub const MANIFEST_HEADER: &str = "clip_id,path,label";

/// Parses a manifest. Entries keep file order; duplicate ids, unknown
/// labels, and malformed rows are rejected with their 1-based row number.
pub fn load_manifest(text: &str) -> Result<Vec<ManifestEntry>, PipelineError> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().unwrap_or("");
    if header != MANIFEST_HEADER {
        return Err(PipelineError::BadHeader(header.to_string()));
    }
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2; // 1-based, after the header
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(PipelineError::BadRow {
                row,
                line: line.to_string(),
            });
        }
        let label = Label::parse(fields[2]).ok_or_else(|| PipelineError::BadLabel {
            row,
            label: fields[2].to_string(),
        })?;
        let clip_id = fields[0].to_string();
        if !seen.insert(clip_id.clone()) {
            return Err(PipelineError::DuplicateId { row, clip_id });
        }
        entries.push(ManifestEntry {
            clip_id,
            path: PathBuf::from(fields[1]),
            label,
        });
    }
    if entries.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    Ok(entries)
}

pub fn manifest_to_csv(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{},{},{}\n",
            e.clip_id,
            e.path.display(),
            e.label.as_str()
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    pub seed: u64,
    pub fractions: SplitFractions,
}

/// Deterministic stratified split: entries are shuffled per class by the
/// seeded generator (keyed on manifest order), then each class contributes
/// floor(fraction * n) entries to train and val with the remainder going to
/// test, keeping every part's class ratio within one entry of the global
/// ratio. Classes with at least 3 entries top up any part the floor rule
/// left empty (taking from the largest part), so no part is ever empty when
/// every class has 3 or more entries.
pub fn split_dataset(
    entries: &[ManifestEntry],
    seed: u64,
    fractions: SplitFractions,
) -> Result<DatasetSplit, PipelineError> {
    if entries.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let tuple = (fractions.train, fractions.val, fractions.test);
    let sum = fractions.train + fractions.val + fractions.test;
    if fractions.train <= 0.0
        || fractions.val <= 0.0
        || fractions.test <= 0.0
        || (sum - 1.0).abs() > 1e-9
    {
        return Err(PipelineError::BadFractions(tuple));
    }

    let mut rng = Rng::seed_from(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for label in [Label::BonaFide, Label::Spoof] {
        let mut class: Vec<&ManifestEntry> =
            entries.iter().filter(|e| e.label == label).collect();
        if class.is_empty() {
            continue;
        }
        rng.shuffle(&mut class);
        let n = class.len();
        let mut counts = [
            (fractions.train * n as f64).floor() as usize,
            (fractions.val * n as f64).floor() as usize,
            0usize,
        ];
        counts[2] = n - counts[0] - counts[1];
        if n >= 3 {
            while counts.contains(&0) {
                let empty = counts.iter().position(|&c| c == 0).unwrap();
                let largest = (0..3).max_by_key(|&i| counts[i]).unwrap();
                counts[largest] -= 1;
                counts[empty] += 1;
            }
        }
        for (i, e) in class.into_iter().enumerate() {
            if i < counts[0] {
                train.push(e.clone());
            } else if i < counts[0] + counts[1] {
                val.push(e.clone());
            } else {
                test.push(e.clone());
            }
        }
    }
    for (part, list) in [("train", &train), ("val", &val), ("test", &test)] {
        if list.is_empty() {
            return Err(PipelineError::DegenerateSplit {
                part,
                fractions: tuple,
            });
        }
    }
    Ok(DatasetSplit {
        train,
        val,
        test,
        seed,
        fractions,
    })
}

/// Fixed-length windowing: longer clips take the center crop (offset
/// floor((len - target)/2)), shorter clips are zero-padded symmetrically
/// with the extra sample on the right.
pub fn crop_or_pad(clip: &AudioClip, target_len: usize) -> AudioClip {
    let len = clip.samples.len();
    let samples = if len == target_len {
        clip.samples.clone()
    } else if len > target_len {
        let start = (len - target_len) / 2;
        clip.samples[start..start + target_len].to_vec()
    } else {
        let left = (target_len - len) / 2;
        let mut out = vec![0.0; target_len];
        out[left..left + len].copy_from_slice(&clip.samples);
        out
    };
    AudioClip::new(samples, clip.sample_rate)
}

/// Construction parameters of one synthetic clip, drawn from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub spoof: bool,
    pub fundamental_hz: f64,
    pub harmonic_gains: [f64; 3],
    pub envelope_hz: f64,
    pub envelope_phase: f64,
    pub noise_amp: f64,
    /// Overtone detuning factor; 1.0 for bona-fide clips.
    pub pitch_offset: f64,
}

pub const SYNTH_CLIP_SECONDS: f64 = 4.0;
/// Phase discontinuities land twice per second in spoofed clips.
pub const SPOOF_JUMP_PERIOD_SECONDS: f64 = 0.5;

/// Draws one clip's construction parameters from the generator stream.
pub fn draw_synth_params(rng: &mut Rng, spoof: bool) -> SynthParams {
    let pitch_offset = if spoof {
        let magnitude = 0.06;
        if rng.next_f64() < 0.5 {
            1.0 - magnitude
        } else {
            1.0 + magnitude
        }
    } else {
        1.0
    };
    SynthParams {
        spoof,
        fundamental_hz: rng.uniform(140.0, 280.0),
        harmonic_gains: [
            0.5,
            rng.uniform(0.15, 0.3),
            rng.uniform(0.08, 0.15),
        ],
        envelope_hz: rng.uniform(0.5, 2.0),
        envelope_phase: rng.uniform(0.0, std::f64::consts::TAU),
        noise_amp: rng.uniform(0.002, 0.006),
        pitch_offset,
    }
}

/// Renders one clip. Each harmonic is synthesized by phase accumulation so
/// spoofed clips can inject a hard phase jump at every half-second boundary.
pub fn synth_clip(params: &SynthParams, sample_rate: u32, rng: &mut Rng) -> AudioClip {
    let n = (SYNTH_CLIP_SECONDS * sample_rate as f64) as usize;
    let dt = 1.0 / sample_rate as f64;
    let jump_every = (SPOOF_JUMP_PERIOD_SECONDS * sample_rate as f64) as usize;

    // overtones of spoofed clips are detuned off the harmonic grid
    let freqs = [
        params.fundamental_hz,
        2.0 * params.fundamental_hz * params.pitch_offset,
        3.0 * params.fundamental_hz * params.pitch_offset,
    ];
    let mut phases = [0.0f64; 3];
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if params.spoof && i > 0 && i % jump_every == 0 {
            // a hard discontinuity: kick every harmonic's phase close to a
            // half turn, where the waveform break is largest
            for p in &mut phases {
                let jump = rng.uniform(0.75 * std::f64::consts::PI, 1.25 * std::f64::consts::PI);
                *p += if rng.next_f64() < 0.5 { -jump } else { jump };
            }
        }
        let t = i as f64 * dt;
        let envelope =
            0.7 + 0.3 * (std::f64::consts::TAU * params.envelope_hz * t + params.envelope_phase).sin();
        let mut s = 0.0;
        for h in 0..3 {
            s += params.harmonic_gains[h] * phases[h].sin();
            phases[h] += std::f64::consts::TAU * freqs[h] * dt;
        }
        s = s * envelope + params.noise_amp * rng.normal();
        samples.push(s.clamp(-1.0, 1.0));
    }
    AudioClip::new(samples, sample_rate)
}

/// Writes `n_per_class` bona-fide and spoofed WAVs plus `manifest.csv` into
/// `out_dir`; returns the manifest path. Bitwise deterministic in the seed.
pub fn gen_synthetic_dataset(
    n_per_class: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf, PipelineError> {
    assert!(n_per_class >= 1, "n_per_class must be at least 1");
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let spoof = i % 2 == 1;
        let label = if spoof { Label::Spoof } else { Label::BonaFide };
        let mut rng = Rng::seed_from(mix_seed(seed, i as u64));
        let params = draw_synth_params(&mut rng, spoof);
        let clip = synth_clip(&params, crate::CANONICAL_SAMPLE_RATE, &mut rng);
        let clip_id = format!("synth-{:04}-{}", i, label.as_str());
        let file = out_dir.join(format!("{clip_id}.wav"));
        write_wav_file(&clip, &file)?;
        entries.push(ManifestEntry {
            clip_id,
            path: file,
            label,
        });
    }
    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest_to_csv(&entries))?;
    Ok(manifest_path)
}

/// Per-epoch batch order: indices into the split part, shuffled by
/// mix_seed(global_seed, epoch), cut into `batch_size` chunks with the final
/// partial batch kept.
pub fn make_batches(n_entries: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size > 0);
    let mut order: Vec<usize> = (0..n_entries).collect();
    let mut rng = Rng::seed_from(mix_seed(seed, epoch));
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::load_wav_file;

    fn entry(id: &str, label: Label) -> ManifestEntry {
        ManifestEntry {
            clip_id: id.to_string(),
            path: PathBuf::from(format!("/tmp/{id}.wav")),
            label,
        }
    }

    fn entries(bona: usize, spoof: usize) -> Vec<ManifestEntry> {
        let mut v = Vec::new();
        for i in 0..bona {
            v.push(entry(&format!("b{i}"), Label::BonaFide));
        }
        for i in 0..spoof {
            v.push(entry(&format!("s{i}"), Label::Spoof));
        }
        v
    }

    #[test]
    fn manifest_parses_in_order() {
        let text = "clip_id,path,label\na,/x/a.wav,bona_fide\nb,/x/b.wav,spoof\n";
        let entries = load_manifest(text).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].clip_id, "a");
        assert_eq!(entries[0].label, Label::BonaFide);
        assert_eq!(entries[1].label, Label::Spoof);
    }

    #[test]
    fn manifest_rejects_bad_label_with_row_number() {
        let text = "clip_id,path,label\na,/x/a.wav,bona_fide\nb,/x/b.wav,fake\n";
        match load_manifest(text).unwrap_err() {
            PipelineError::BadLabel { row, label } => {
                assert_eq!(row, 3);
                assert_eq!(label, "fake");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_rejects_duplicates_and_bad_header() {
        let dup = "clip_id,path,label\na,/x,bona_fide\na,/y,spoof\n";
        assert!(matches!(
            load_manifest(dup),
            Err(PipelineError::DuplicateId { row: 3, .. })
        ));
        assert!(matches!(
            load_manifest("id,path,label\n"),
            Err(PipelineError::BadHeader(_))
        ));
        assert!(matches!(
            load_manifest("clip_id,path,label\n"),
            Err(PipelineError::EmptyDataset)
        ));
    }

    #[test]
    fn crlf_and_lf_parse_identically() {
        let lf = "clip_id,path,label\na,/x/a.wav,bona_fide\nb,/x/b.wav,spoof\n";
        let crlf = lf.replace('\n', "\r\n");
        assert_eq!(load_manifest(lf).unwrap(), load_manifest(&crlf).unwrap());
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let all = entries(10, 10);
        let a = split_dataset(&all, 42, SplitFractions::default()).unwrap();
        let b = split_dataset(&all, 42, SplitFractions::default()).unwrap();
        assert_eq!(a, b);

        let count = |part: &[ManifestEntry], label: Label| {
            part.iter().filter(|e| e.label == label).count()
        };
        assert_eq!(count(&a.train, Label::BonaFide), 8);
        assert_eq!(count(&a.train, Label::Spoof), 8);
        assert_eq!(count(&a.val, Label::BonaFide), 1);
        assert_eq!(count(&a.val, Label::Spoof), 1);
        assert_eq!(count(&a.test, Label::BonaFide), 1);
        assert_eq!(count(&a.test, Label::Spoof), 1);
    }

    #[test]
    fn split_parts_are_disjoint_and_exhaustive() {
        let all = entries(13, 7);
        let s = split_dataset(&all, 9, SplitFractions::default()).unwrap();
        let mut ids: Vec<&str> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .map(|e| e.clip_id.as_str())
            .collect();
        ids.sort_unstable();
        let mut expect: Vec<&str> = all.iter().map(|e| e.clip_id.as_str()).collect();
        expect.sort_unstable();
        assert_eq!(ids.len(), 20);
        assert_eq!(ids, expect);
    }

    #[test]
    fn changing_seed_changes_some_assignment() {
        let all = entries(6, 6);
        let base = split_dataset(&all, 0, SplitFractions::default()).unwrap();
        let moved = (1..=16).any(|seed| {
            split_dataset(&all, seed, SplitFractions::default()).unwrap() != base
        });
        assert!(moved, "16 different seeds never changed the split");
    }

    #[test]
    fn degenerate_and_invalid_splits_error() {
        assert!(matches!(
            split_dataset(&[], 0, SplitFractions::default()),
            Err(PipelineError::EmptyDataset)
        ));
        // two entries cannot fill three parts
        assert!(matches!(
            split_dataset(&entries(1, 1), 0, SplitFractions::default()),
            Err(PipelineError::DegenerateSplit { .. })
        ));
        let bad = SplitFractions {
            train: 0.9,
            val: 0.2,
            test: 0.1,
        };
        assert!(matches!(
            split_dataset(&entries(5, 5), 0, bad),
            Err(PipelineError::BadFractions(_))
        ));
    }

    #[test]
    fn crop_or_pad_cases() {
        let rate = 16_000;
        let exact = AudioClip::new(vec![0.5; 64_000], rate);
        assert_eq!(crop_or_pad(&exact, 64_000).samples, exact.samples);

        // 5 s clip: center crop starts at 8000
        let long = AudioClip::new((0..80_000).map(|i| i as f64 * 1e-6).collect(), rate);
        let cropped = crop_or_pad(&long, 64_000);
        assert_eq!(cropped.samples.len(), 64_000);
        assert_eq!(cropped.samples[0], long.samples[8_000]);
        assert_eq!(cropped.samples[63_999], long.samples[71_999]);

        // 1-sample clip: 31999 zeros left, 32000 right
        let tiny = AudioClip::new(vec![0.7], rate);
        let padded = crop_or_pad(&tiny, 64_000);
        assert_eq!(padded.samples.len(), 64_000);
        assert_eq!(padded.samples[31_999], 0.7);
        assert!(padded.samples[..31_999].iter().all(|&s| s == 0.0));
        assert!(padded.samples[32_000..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn synth_clip_is_deterministic_and_in_range() {
        let mut rng1 = Rng::seed_from(5);
        let p1 = draw_synth_params(&mut rng1, true);
        let c1 = synth_clip(&p1, 16_000, &mut rng1);
        let mut rng2 = Rng::seed_from(5);
        let p2 = draw_synth_params(&mut rng2, true);
        let c2 = synth_clip(&p2, 16_000, &mut rng2);
        assert_eq!(p1, p2);
        assert_eq!(c1.samples, c2.samples);
        assert!(c1.samples.iter().all(|&s| (-1.0..=1.0).contains(&s)));
        assert_eq!(c1.samples.len(), 64_000);
    }

    #[test]
    fn spoof_params_detune_overtones() {
        let mut rng = Rng::seed_from(1);
        let bona = draw_synth_params(&mut rng, false);
        assert_eq!(bona.pitch_offset, 1.0);
        let mut rng = Rng::seed_from(1);
        let spoof = draw_synth_params(&mut rng, true);
        assert!((spoof.pitch_offset - 1.06).abs() < 1e-12 || (spoof.pitch_offset - 0.94).abs() < 1e-12);
    }

    #[test]
    fn generated_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_synthetic_dataset(3, 7, dir.path()).unwrap();
        let text = std::fs::read_to_string(&manifest).unwrap();
        let entries = load_manifest(&text).unwrap();
        assert_eq!(entries.len(), 6);
        assert_eq!(entries.iter().filter(|e| e.label == Label::Spoof).count(), 3);
        for e in &entries {
            let clip = load_wav_file(&e.path).unwrap();
            assert_eq!(clip.sample_rate, crate::CANONICAL_SAMPLE_RATE);
            assert_eq!(clip.samples.len(), 64_000);
        }
    }

    #[test]
    fn generated_dataset_is_bitwise_reproducible() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        gen_synthetic_dataset(2, 11, dir1.path()).unwrap();
        gen_synthetic_dataset(2, 11, dir2.path()).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 5); // 4 wavs + manifest
        for name in names {
            if name.ends_with(".wav") {
                let a = std::fs::read(dir1.path().join(&name)).unwrap();
                let b = std::fs::read(dir2.path().join(&name)).unwrap();
                assert_eq!(a, b, "file {name} differs between identical seeds");
            }
        }
    }

    #[test]
    fn batches_keep_partial_tail_and_are_seed_stable() {
        let batches = make_batches(33, 32, 42, 0);
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].len(), 32);
        assert_eq!(batches[1].len(), 1);

        assert_eq!(make_batches(33, 32, 42, 0), batches);
        assert_ne!(make_batches(33, 32, 42, 1), batches, "epochs must reshuffle");

        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..33).collect::<Vec<_>>());
    }
}
