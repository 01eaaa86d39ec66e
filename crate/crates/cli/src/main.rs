//! `waveglow`: feature extraction, training, synthesis, the Griffin-Lim
//! baseline, self-verification and benchmarking.

use std::fs::{self, OpenOptions};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use waveglow::flow::{ModelConfig, WaveGlow};
use waveglow::infer::{benchmark, benchmark_mel, synthesize, SynthesisRequest, DEFAULT_SIGMA};
use waveglow::signal::{griffin_lim, load_wav, mel_spectrogram, read_mel, save_wav, stft, write_mel};
use waveglow::train::{load_dataset, Checkpoint, TrainConfig, Trainer};
use waveglow::verify::{self, Precision, VerifyOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "waveglow", version, about = "Flow-based mel-spectrogram vocoder")]
struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Seed for every random choice; overrides `seed` from --config.
    #[arg(long)]
    seed: Option<u64>,

    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the log-mel spectrogram of a WAV file.
    Mel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a directory of WAV files.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint and metrics directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override `max_iters`.
        #[arg(long)]
        max_iters: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize audio from a mel file with a trained checkpoint.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mel: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct a WAV from its own STFT magnitude with Griffin-Lim.
    Griffinlim {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 60)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the invertibility, log-determinant and gradient checks.
    Verify {
        /// tiny, paper or micro; defaults to `preset` from --config.
        #[arg(long)]
        preset: Option<String>,
        /// f32 or f64.
        #[arg(long, default_value = "f64")]
        mode: String,
        /// Zero one row of the first mixing matrix to exercise the failure path.
        #[arg(long)]
        corrupt_w: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Measure synthesis speed.
    Bench {
        /// Trained checkpoint; without it a freshly initialized model is used.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Preset of the fresh model when no checkpoint is given.
        #[arg(long)]
        preset: Option<String>,
        /// Utterance lengths in seconds.
        #[arg(long, value_delimiter = ',', default_value = "1,10")]
        seconds: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Directory for report files.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(waveglow::Error),
    Verify(String),
}

impl From<waveglow::Error> for Failure {
    fn from(e: waveglow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

impl Common {
    /// Settings from --config (defaults without it) with --seed applied.
    fn settings(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn preset(name: &str) -> Result<ModelConfig, Failure> {
    ModelConfig::preset(name).map_err(|e| Failure::Usage(e.to_string()))
}

fn cmd_mel(input: &Path, out: &Path, common: &Common) -> Outcome {
    common.settings()?;
    let clip = load_wav(input)?;
    let mel = mel_spectrogram(&clip)?;
    write_mel(out, &mel)?;
    println!("{}: {} samples -> {} x {} mel frames", out.display(), clip.len(), mel.n_mels(), mel.frames());
    Ok(())
}

fn cmd_train(data: &Path, out: &Path, resume: Option<&Path>, max_iters: Option<u64>, common: &Common) -> Outcome {
    let mut trainer = match resume {
        Some(path) => {
            if common.config.is_some() || common.seed.is_some() {
                log::warn!("resuming: --config and --seed are ignored in favour of the checkpoint's settings");
            }
            Trainer::from_checkpoint(Checkpoint::load(path)?)?
        }
        None => Trainer::new(common.settings()?)?,
    };
    if let Some(n) = max_iters {
        trainer.set_max_iters(n);
    }
    let dataset = load_dataset(data)?;
    fs::create_dir_all(out).map_err(|e| waveglow::Error::from(e).at_path(out))?;
    let metrics_path = out.join("metrics.tsv");
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| waveglow::Error::from(e).at_path(&metrics_path))?;
    let mut metrics = BufWriter::new(file);
    log::info!(
        "training preset {} from iteration {} to {} on {} clips",
        trainer.config().preset,
        trainer.iteration(),
        trainer.config().max_iters,
        dataset.len()
    );
    let reports = trainer.run(&dataset, Some(out), &mut metrics)?;
    match (reports.first(), reports.last()) {
        (Some(first), Some(last)) => println!(
            "iterations {}..{}: nll {:.6} -> {:.6}, lr {:e}",
            first.iteration, last.iteration, first.nll, last.nll, trainer.lr()
        ),
        _ => println!("no iterations run; checkpoint written to {}", out.display()),
    }
    Ok(())
}

fn cmd_synth(ckpt: &Path, mel: &Path, sigma: f64, out: &Path, common: &Common) -> Outcome {
    let settings = common.settings()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Failure::Usage(format!("--sigma {sigma} must be finite and non-negative")));
    }
    let model: WaveGlow<f32> = Checkpoint::load(ckpt)?.to_model().map_err(|e| e.at_path(ckpt))?;
    let mel = read_mel(mel)?;
    let req = SynthesisRequest { mel, sigma, seed: settings.seed };
    let result = synthesize(&model, &req)?;
    save_wav(out, &result.audio)?;
    println!(
        "{}: {} samples, sigma {sigma}, seed {}, {:.3}% clamped",
        out.display(),
        result.audio.len(),
        req.seed,
        100.0 * result.clipped_fraction
    );
    Ok(())
}

fn cmd_griffinlim(input: &Path, iters: usize, out: &Path, common: &Common) -> Outcome {
    common.settings()?;
    let clip = load_wav(input)?;
    let spec = stft(&clip)?;
    let result = griffin_lim(&spec.magnitude(), spec.frames(), iters)?;
    save_wav(out, &result.audio)?;
    match result.final_distance() {
        Some(d) => println!("{}: {iters} iterations, spectral distance {d:.4}", out.display()),
        None => println!("{}: 0 iterations", out.display()),
    }
    Ok(())
}

fn cmd_verify(preset_name: Option<&str>, mode: &str, corrupt_w: bool, common: &Common) -> Outcome {
    let settings = common.settings()?;
    let config = preset(preset_name.unwrap_or(&settings.preset))?;
    let precision = Precision::parse(mode).map_err(|e| Failure::Usage(e.to_string()))?;
    let opts = VerifyOptions { config, precision, seed: settings.seed, corrupt_w };
    println!("verify preset {} in {}", opts.config.preset, precision.name());
    let checks = verify::run(&opts);
    for check in &checks {
        println!("{check}");
    }
    if verify::all_passed(&checks) {
        Ok(())
    } else {
        let failed = checks.iter().filter(|c| c.status == verify::Status::Fail).count();
        Err(Failure::Verify(format!("{failed} of {} checks failed", checks.len())))
    }
}

fn cmd_bench(
    ckpt: Option<&Path>,
    preset_name: Option<&str>,
    seconds: &[f64],
    reps: usize,
    out: Option<&Path>,
    common: &Common,
) -> Outcome {
    let settings = common.settings()?;
    if reps < 3 {
        return Err(Failure::Usage(format!("--reps {reps}: at least 3 are needed (the first is discarded)")));
    }
    if let Some(bad) = seconds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Failure::Usage(format!("--seconds {bad}: lengths must be positive")));
    }
    let model: WaveGlow<f32> = match ckpt {
        Some(path) => Checkpoint::load(path)?.to_model().map_err(|e| e.at_path(path))?,
        None => WaveGlow::new(preset(preset_name.unwrap_or(&settings.preset))?, settings.seed)?,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| waveglow::Error::from(e).at_path(dir))?;
    }
    for &s in seconds {
        let report = benchmark(&model, &benchmark_mel(s)?, reps)?;
        print!("{}", report.to_text());
        if let Some(dir) = out {
            let stem = format!("bench-{}-{s}s", report.preset);
            for (ext, body) in [("txt", report.to_text()), ("kv", report.to_key_values())] {
                let path = dir.join(format!("{stem}.{ext}"));
                fs::write(&path, body).map_err(|e| waveglow::Error::from(e).at_path(&path))?;
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Mel { input, out, common } => cmd_mel(input, out, common),
        Command::Train { data, out, resume, max_iters, common } => {
            cmd_train(data, out, resume.as_deref(), *max_iters, common)
        }
        Command::Synth { ckpt, mel, sigma, out, common } => cmd_synth(ckpt, mel, *sigma, out, common),
        Command::Griffinlim { input, iters, out, common } => cmd_griffinlim(input, *iters, out, common),
        Command::Verify { preset, mode, corrupt_w, common } => {
            cmd_verify(preset.as_deref(), mode, *corrupt_w, common)
        }
        Command::Bench { ckpt, preset, seconds, reps, out, common } => {
            cmd_bench(ckpt.as_deref(), preset.as_deref(), seconds, *reps, out.as_deref(), common)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
