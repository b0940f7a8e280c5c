//! Command-line pipeline: synthesize data, extract features, train,
//! predict, evaluate, and benchmark.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 checkpoint/profile
//! mismatch. `YOHO_THREADS` caps the worker thread count.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use yoho::datagen::{read_manifest, synth_dataset, SynthConfig};
use yoho::error::Error;
use yoho::features::{log_mel, write_cache};
use yoho::net::augment::AugmentConfig;
use yoho::net::checkpoint::save_checkpoint;
use yoho::net::train::{train, TrainConfig};
use yoho::net::{build_frame_cnn, build_yoho, BuildConfig};
use yoho::pipeline::{bench_models, evaluate_dirs, load_audio_for, load_samples, predict_file};
use yoho::profiles::PipelineProfile;

#[derive(Parser)]
#[command(
    name = "yoho",
    version,
    about = "Sound event detection with a regression output head"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset (WAV + TSV + manifest).
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Forbid different-class events from overlapping in time.
        #[arg(long)]
        no_overlap: bool,
    },
    /// Write binary log-mel caches for every WAV in a manifest.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        profile: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a regression-head model on window-length clips.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val_manifest: PathBuf,
        #[arg(long)]
        profile: String,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Channel-width divisor (1 = full published width).
        #[arg(long, default_value_t = 8)]
        width_divisor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.001)]
        learning_rate: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 150)]
        max_epochs: usize,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 0.0)]
        l2_first: f64,
        #[arg(long, default_value_t = 0.0)]
        l2_rest: f64,
        /// Apply batch-level time/frequency masking.
        #[arg(long)]
        augment: bool,
        /// Stop after this many seconds (checked at epoch boundaries).
        #[arg(long)]
        time_limit_secs: Option<u64>,
        /// Also write an untrained frame-classification twin for benchmarks.
        #[arg(long)]
        frame_twin: Option<PathBuf>,
    },
    /// Decode events from a WAV file into a TSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        profile: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment-based metrics between matching reference/estimate TSVs.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Profile supplying the default segment size.
        #[arg(long)]
        profile: Option<String>,
        /// Segment size in seconds (overrides the profile's).
        #[arg(long)]
        segment_size: Option<f64>,
        /// Fixed per-file duration in seconds; defaults to each file pair's
        /// largest offset rounded up to a whole segment.
        #[arg(long)]
        clip_duration: Option<f64>,
        /// Emit the machine-readable JSON report instead of key=value text.
        #[arg(long)]
        json: bool,
    },
    /// Compare prediction + smoothing speed of the two heads.
    Bench {
        #[arg(long)]
        yoho_model: PathBuf,
        #[arg(long)]
        frame_model: PathBuf,
        /// Directory of WAV files.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        profile: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn profile_of(name: &str) -> Result<PipelineProfile, Error> {
    PipelineProfile::by_name(name).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown profile {name:?}; expected one of {:?}",
            PipelineProfile::names()
        ))
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::SynthData {
            out,
            clips,
            seed,
            no_overlap,
        } => {
            let mut config = SynthConfig::desk_default(seed);
            config.overlap_allowed = !no_overlap;
            let entries = synth_dataset(&config, clips, &out)?;
            println!("wrote {} clips to {}", entries.len(), out.display());
            Ok(())
        }
        Command::ExtractFeatures {
            manifest,
            profile,
            out,
        } => {
            let profile = profile_of(&profile)?;
            let entries = read_manifest(&manifest)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
            let results: Vec<Result<PathBuf, Error>> = entries
                .par_iter()
                .map(|entry| {
                    let audio = load_audio_for(&profile, &entry.wav)?;
                    let mel = log_mel(&audio, &profile.features)?;
                    let stem = entry
                        .wav
                        .file_stem()
                        .map(|s| s.to_string_lossy().to_string())
                        .unwrap_or_else(|| "features".to_string());
                    let path = out.join(format!("{stem}.ymel"));
                    write_cache(&path, &mel)?;
                    Ok(path)
                })
                .collect();
            let mut written = 0usize;
            for result in results {
                result?;
                written += 1;
            }
            println!("wrote {written} feature caches to {}", out.display());
            Ok(())
        }
        Command::Train {
            manifest,
            val_manifest,
            profile,
            out,
            width_divisor,
            seed,
            learning_rate,
            batch_size,
            patience,
            max_epochs,
            dropout,
            l2_first,
            l2_rest,
            augment,
            time_limit_secs,
            frame_twin,
        } => {
            let profile = profile_of(&profile)?;
            let mut net = build_yoho(
                profile.input_time(),
                profile.features.n_mels,
                profile.classes.len(),
                BuildConfig {
                    width_divisor,
                    seed,
                },
            )?;
            let (n_steps, _) = net.output_shape();
            eprintln!("loading training data...");
            let train_set = load_samples(&manifest, &profile, n_steps)?;
            let val_set = load_samples(&val_manifest, &profile, n_steps)?;
            eprintln!(
                "{} training / {} validation clips, {} parameters",
                train_set.len(),
                val_set.len(),
                net.param_count()
            );
            let config = TrainConfig {
                learning_rate,
                batch_size,
                l2_first_conv: l2_first,
                l2_rest,
                spatial_dropout_rate: dropout,
                early_stop_patience: patience,
                max_epochs,
                seed,
                augment: augment.then(|| AugmentConfig {
                    time_masks: 2,
                    freq_masks: 2,
                    max_time_width: profile.input_time() / 10,
                    max_freq_width: profile.features.n_mels / 8,
                }),
                time_limit: time_limit_secs.map(Duration::from_secs),
                progress: true,
            };
            let history = train(&mut net, &train_set, &val_set, &config)?;
            println!(
                "best epoch {} (val {:.5}){}{}",
                history.best_epoch,
                history.best_val_loss,
                if history.stopped_early {
                    ", stopped early"
                } else {
                    ""
                },
                if history.hit_time_limit {
                    ", hit time limit"
                } else {
                    ""
                }
            );
            save_checkpoint(&out, &net, &profile.classes)?;
            println!("saved {}", out.display());
            if let Some(twin_path) = frame_twin {
                let twin = build_frame_cnn(
                    profile.input_time(),
                    profile.features.n_mels,
                    profile.classes.len(),
                    BuildConfig {
                        width_divisor,
                        seed,
                    },
                )?;
                save_checkpoint(&twin_path, &twin, &profile.classes)?;
                println!("saved frame twin {}", twin_path.display());
            }
            Ok(())
        }
        Command::Predict {
            model,
            wav,
            profile,
            threshold,
            out,
        } => {
            let profile = profile_of(&profile)?;
            if !(0.0 < threshold && threshold < 1.0) {
                return Err(Error::InvalidConfig(
                    "threshold must lie strictly between 0 and 1".into(),
                ));
            }
            let events = predict_file(&model, &wav, &profile, threshold, &out)?;
            println!("wrote {} events to {}", events.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            reference,
            estimate,
            profile,
            segment_size,
            clip_duration,
            json,
        } => {
            let profile = profile.as_deref().map(profile_of).transpose()?;
            let segment = segment_size
                .or(profile.as_ref().map(|p| p.eval_segment_secs))
                .ok_or_else(|| {
                    Error::InvalidConfig("need --segment-size or --profile".into())
                })?;
            if segment <= 0.0 {
                return Err(Error::InvalidConfig(
                    "segment size must be positive".into(),
                ));
            }
            let report = evaluate_dirs(&reference, &estimate, segment, clip_duration)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_text());
            }
            Ok(())
        }
        Command::Bench {
            yoho_model,
            frame_model,
            corpus,
            profile,
            threshold,
        } => {
            let profile = profile_of(&profile)?;
            let mut wavs: Vec<PathBuf> = std::fs::read_dir(&corpus)
                .map_err(|e| Error::io(format!("listing {}", corpus.display()), e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "wav"))
                .collect();
            wavs.sort();
            let report = bench_models(&yoho_model, &frame_model, &wavs, &profile, threshold)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ProfileMismatch(_) => 3,
        Error::InvalidConfig(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("YOHO_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
