//! `mfaan` - the full pipeline as deterministic subcommands.
//!
//! ```text
//! mfaan gen-synth --out DIR --n N --seed S      synthetic corpus + manifest
//! mfaan extract   --manifest M --out CACHE      feature cache
//! mfaan train     --manifest M --out MODEL      split, extract, train, checkpoint
//! mfaan eval      --model M --manifest T --report R
//! mfaan infer     --model M --wav FILE          one-clip verdict
//! ```
//!
//! Standard output carries one machine-readable summary line per command;
//! diagnostics and progress go to standard error. Exit codes: 0 success,
//! 1 usage/data error, 2 numeric divergence during training.

mod pipeline;

use clap::{Parser, Subcommand, ValueEnum};
use mfaan_core::dataset::{gen_synthetic_dataset, load_manifest, manifest_to_csv, split_dataset, SplitFractions};
use mfaan_core::features::{FeatureConfig, FeatureKind};
use mfaan_core::model::{checkpoint_checksum, load_checkpoint, save_checkpoint, ModelKind};
use mfaan_core::training::{train, TrainConfig, TrainError};
use mfaan_core::{AnyModel, CANONICAL_SAMPLE_RATE};
use pipeline::{ensure_cache, extract_cache, prepare_clip, CliError};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mfaan", version, about = "Multi-feature audio authenticity network", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FeatureChoice {
    Mfcc,
    Lfcc,
    Chroma,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchChoice {
    Mfaan,
    Baseline,
}

impl From<ArchChoice> for ModelKind {
    fn from(a: ArchChoice) -> Self {
        match a {
            ArchChoice::Mfaan => ModelKind::Mfaan,
            ArchChoice::Baseline => ModelKind::Baseline,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decode and window every manifest clip and write its feature cache.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        feature: FeatureChoice,
    },
    /// Split the manifest, extract features if needed, train, and write the
    /// best-validation checkpoint plus a training log and split manifests.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON run configuration; explicit flags win over file values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        arch: Option<ArchChoice>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a manifest with a checkpoint and write the evaluation report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Classify one WAV file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
    },
    /// Generate the seeded synthetic bona-fide/spoof corpus.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
    },
}

/// JSON run configuration. Unknown keys anywhere are hard errors.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    arch: Option<String>,
    features: Option<FeatureConfig>,
}

struct RunConfig {
    train: TrainConfig,
    features: FeatureConfig,
}

fn resolve_run_config(
    config_path: Option<&Path>,
    seed: Option<u64>,
    arch: Option<ArchChoice>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
) -> Result<RunConfig, CliError> {
    let mut train = TrainConfig::default();
    let mut features = FeatureConfig::default();
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        let file: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("bad config {}: {e}", path.display())))?;
        if let Some(v) = file.seed {
            train.seed = v;
        }
        if let Some(v) = file.epochs {
            train.epochs = v;
        }
        if let Some(v) = file.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = file.lr {
            train.lr = v;
        }
        if let Some(v) = file.arch {
            train.arch = match v.as_str() {
                "mfaan" => ModelKind::Mfaan,
                "baseline" => ModelKind::Baseline,
                other => {
                    return Err(CliError::data(format!(
                        "bad config arch '{other}' (expected 'mfaan' or 'baseline')"
                    )))
                }
            };
        }
        if let Some(v) = file.features {
            features = v;
        }
    }
    if let Some(v) = seed {
        train.seed = v;
    }
    if let Some(v) = arch {
        train.arch = v.into();
    }
    if let Some(v) = epochs {
        train.epochs = v;
    }
    if let Some(v) = batch_size {
        train.batch_size = v;
    }
    if let Some(v) = lr {
        train.lr = v;
    }

    if train.epochs == 0 || train.batch_size == 0 || !(train.lr > 0.0) {
        return Err(CliError::data(
            "epochs, batch_size, and lr must all be positive".into(),
        ));
    }
    match features.stft.n_frames(features.clip_samples) {
        Some(frames) if frames >= 8 => {}
        _ => {
            return Err(CliError::data(format!(
                "clip_samples {} yields fewer than 8 frames under the configured STFT",
                features.clip_samples
            )))
        }
    }
    Ok(RunConfig { train, features })
}

fn read_manifest(path: &Path) -> Result<Vec<mfaan_core::dataset::ManifestEntry>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read manifest {}: {e}", path.display())))?;
    let entries = load_manifest(&text)
        .map_err(|e| CliError::data(format!("manifest {}: {e}", path.display())))?;
    // paths are relative to the manifest's directory
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(entries
        .into_iter()
        .map(|mut e| {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            e
        })
        .collect())
}

fn cmd_extract(manifest: &Path, out: &Path, choice: FeatureChoice) -> Result<(), CliError> {
    let entries = read_manifest(manifest)?;
    let kinds: &[FeatureKind] = match choice {
        FeatureChoice::Mfcc => &[FeatureKind::Mfcc],
        FeatureChoice::Lfcc => &[FeatureKind::Lfcc],
        FeatureChoice::Chroma => &[FeatureKind::Chroma],
        FeatureChoice::All => &FeatureKind::ALL,
    };
    let features = FeatureConfig::default();
    let fingerprints = features.fingerprints(CANONICAL_SAMPLE_RATE);

    if out.exists() {
        if let Ok(cache) = mfaan_core::features::FeatureCache::read_file(out) {
            let complete = cache.fingerprints == fingerprints
                && entries
                    .iter()
                    .all(|e| kinds.iter().all(|&k| cache.contains(&e.clip_id, k)));
            if complete {
                eprintln!("cache {} is up to date", out.display());
                println!(
                    "entries={} matrices={} out={} cached=true",
                    entries.len(),
                    cache.len(),
                    out.display()
                );
                return Ok(());
            }
        }
    }

    let cache = extract_cache(&entries, &features, kinds)?;
    cache
        .write_file(out)
        .map_err(|e| CliError::data(format!("cannot write cache {}: {e}", out.display())))?;
    println!(
        "entries={} matrices={} out={} cached=false",
        entries.len(),
        cache.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    manifest: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    arch: Option<ArchChoice>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
) -> Result<(), CliError> {
    let run = resolve_run_config(config, seed, arch, epochs, batch_size, lr)?;
    let entries = read_manifest(manifest)?;
    let cache = ensure_cache(manifest, &entries, &run.features, true)?;
    let split = split_dataset(&entries, run.train.seed, SplitFractions::default())
        .map_err(|e| CliError::data(format!("split failed: {e}")))?;

    let outcome = train(
        &split,
        &cache,
        run.features,
        mfaan_core::model::ArchConfig::default(),
        &run.train,
    )
    .map_err(|e| match e {
        TrainError::Diverged { epoch } => CliError::diverged(epoch),
        other => CliError::data(format!("training failed: {other}")),
    })?;

    mfaan_core::model::save_checkpoint_file(&outcome.model, out)
        .map_err(|e| CliError::data(format!("cannot write checkpoint {}: {e}", out.display())))?;

    let mut log = String::new();
    for l in &outcome.log {
        log.push_str(&format!(
            "epoch={} train_loss={:.6} val_accuracy={:.6}\n",
            l.epoch, l.train_loss, l.val_accuracy
        ));
    }
    let log_path = sibling(out, "train.log");
    std::fs::write(&log_path, log)
        .map_err(|e| CliError::data(format!("cannot write log {}: {e}", log_path.display())))?;
    for (name, part) in [
        ("train.csv", &split.train),
        ("val.csv", &split.val),
        ("test.csv", &split.test),
    ] {
        let p = sibling(out, name);
        std::fs::write(&p, manifest_to_csv(part))
            .map_err(|e| CliError::data(format!("cannot write split manifest {}: {e}", p.display())))?;
    }

    let best = &outcome.log[outcome.best_epoch];
    eprintln!(
        "trained {} epochs; best epoch {} (val_accuracy={:.6})",
        outcome.log.len(),
        outcome.best_epoch,
        best.val_accuracy
    );
    println!(
        "out={} best_epoch={} best_val_accuracy={:.6} checksum={:#010x}",
        out.display(),
        outcome.best_epoch,
        best.val_accuracy,
        checkpoint_checksum(&save_checkpoint(&outcome.model)).unwrap_or(0),
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", path.display()))
}

fn cmd_eval(model_path: &Path, manifest: &Path, report_path: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(model_path)
        .map_err(|e| CliError::data(format!("cannot read model {}: {e}", model_path.display())))?;
    let model = load_checkpoint(&bytes)
        .map_err(|e| CliError::data(format!("model {}: {e}", model_path.display())))?;
    let checksum = checkpoint_checksum(&bytes)
        .map_err(|e| CliError::data(format!("model {}: {e}", model_path.display())))?;

    let entries = read_manifest(manifest)?;
    let cache = ensure_cache(manifest, &entries, model.feature_config(), false)?;
    let report = mfaan_core::metrics::evaluate_model(&model, &entries, &cache, checksum, model.seed())
        .map_err(|e| CliError::data(format!("evaluation failed: {e}")))?;
    std::fs::write(report_path, report.to_json())
        .map_err(|e| CliError::data(format!("cannot write report {}: {e}", report_path.display())))?;
    println!("accuracy={:.6} eer={:.6}", report.accuracy, report.eer);
    Ok(())
}

fn cmd_infer(model_path: &Path, wav: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(model_path)
        .map_err(|e| CliError::data(format!("cannot read model {}: {e}", model_path.display())))?;
    let model = load_checkpoint(&bytes)
        .map_err(|e| CliError::data(format!("model {}: {e}", model_path.display())))?;

    let clip_bytes = std::fs::read(wav)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", wav.display())))?;
    let clip = mfaan_core::audio_io::load_wav(&clip_bytes)
        .map_err(|e| CliError::data(format!("{}: {e}", wav.display())))?;
    let probability = score_clip(&model, &clip)?;
    let verdict = if probability >= 0.5 { "spoof" } else { "bona_fide" };
    println!("spoof_probability={probability:.6e} verdict={verdict}");
    Ok(())
}

fn score_clip(model: &AnyModel<f32>, clip: &mfaan_core::AudioClip) -> Result<f64, CliError> {
    let features = model.feature_config();
    let prepared = prepare_clip(clip, features);
    let extractor = mfaan_core::features::FeatureExtractor::new(*features, CANONICAL_SAMPLE_RATE)
        .map_err(|e| CliError::data(format!("bad feature config in checkpoint: {e}")))?;
    let [mfcc, lfcc, chroma] = extractor
        .extract_all(&prepared)
        .map_err(|e| CliError::data(format!("feature extraction failed: {e}")))?;
    let prob = model
        .score(&mfcc, &lfcc, &chroma)
        .map_err(|e| CliError::data(format!("scoring failed: {e}")))?;
    Ok(prob as f64)
}

fn cmd_gen_synth(out: &Path, n: usize, seed: u64) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::data("--n must be at least 1".into()));
    }
    let manifest = gen_synthetic_dataset(n, seed, out)
        .map_err(|e| CliError::data(format!("generation failed: {e}")))?;
    println!("manifest={}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    // MFAAN_THREADS caps extraction parallelism (default: logical cores)
    if let Ok(v) = std::env::var("MFAAN_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2; usage errors are exit 1 here (2 is reserved
            // for numeric divergence)
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let result = match &cli.command {
        Command::Extract { manifest, out, feature } => cmd_extract(manifest, out, *feature),
        Command::Train {
            manifest,
            out,
            config,
            seed,
            arch,
            epochs,
            batch_size,
            lr,
        } => cmd_train(
            manifest,
            out,
            config.as_deref(),
            *seed,
            *arch,
            *epochs,
            *batch_size,
            *lr,
        ),
        Command::Eval { model, manifest, report } => cmd_eval(model, manifest, report),
        Command::Infer { model, wav } => cmd_infer(model, wav),
        Command::GenSynth { out, n, seed } => cmd_gen_synth(out, *n, *seed),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code)
        }
    }
}
