//! Synthesis by sampling the latent Gaussian and inverting the flow, and
//! a wall-clock benchmark of it.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::WaveGlow;
use crate::signal::{mel_spectrogram, AudioClip, MelSpectrogram, HOP, SAMPLE_RATE};
use crate::tensor::{Real, Tensor};

/// Default latent standard deviation at synthesis time.
pub const DEFAULT_SIGMA: f64 = 0.6;

/// Fraction of clamped samples above which synthesis logs a warning.
pub const CLIP_WARN_FRACTION: f64 = 1e-3;

/// Description of the latent sampler, recorded in benchmark reports.
pub const SAMPLER: &str = "ChaCha8Rng::seed_from_u64(seed), rand_distr::StandardNormal (ziggurat), scaled by sigma";

#[derive(Clone, Debug)]
pub struct SynthesisRequest {
    pub mel: MelSpectrogram,
    pub sigma: f64,
    pub seed: u64,
}

impl SynthesisRequest {
    pub fn new(mel: MelSpectrogram, seed: u64) -> Self {
        SynthesisRequest { mel, sigma: DEFAULT_SIGMA, seed }
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis<T> {
    pub audio: AudioClip,
    /// The latent that was inverted, `[1, group, samples/group]`.
    pub z: Tensor<T>,
    /// Fraction of samples clamped into `[-1, 1]`.
    pub clipped_fraction: f64,
}

/// Samples produced from `frames` mel frames: `frames * 256`, rounded down
/// to a multiple of `group`.
pub fn output_length(frames: usize, group: usize) -> usize {
    let samples = frames * HOP;
    samples - samples % group
}

/// `z ~ N(0, sigma^2 I)` of the given shape from a seeded generator.
pub fn sample_latent<T: Real>(shape: &[usize], sigma: f64, seed: u64) -> Result<Tensor<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma={sigma} must be finite and non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let n: f64 = rng.sample(StandardNormal);
        T::from_f64_lossy(sigma * n)
    })
}

fn check_mel<T: Real>(model: &WaveGlow<T>, mel: &MelSpectrogram) -> Result<()> {
    let channels = model.config().upsample.channels;
    if mel.n_mels() != channels {
        return Err(Error::shape(format!(
            "mel has {} channels, the model expects {channels}",
            mel.n_mels()
        )));
    }
    Ok(())
}

/// Draw a latent and invert the model on it.
pub fn synthesize<T: Real>(model: &WaveGlow<T>, req: &SynthesisRequest) -> Result<Synthesis<T>> {
    check_mel(model, &req.mel)?;
    let group = model.config().group;
    let samples = output_length(req.mel.frames(), group);
    if samples == 0 {
        return Err(Error::shape(format!(
            "{} mel frames yield no complete group of {group} samples",
            req.mel.frames()
        )));
    }
    let z = sample_latent(&[1, group, samples / group], req.sigma, req.seed)?;
    synthesize_from_latent(model, &req.mel, z)
}

/// Invert a given latent; its length must match the mel's frames.
pub fn synthesize_from_latent<T: Real>(
    model: &WaveGlow<T>,
    mel: &MelSpectrogram,
    z: Tensor<T>,
) -> Result<Synthesis<T>> {
    check_mel(model, mel)?;
    let group = model.config().group;
    let expected = output_length(mel.frames(), group);
    if z.rank() != 3 || z.dim(0) != 1 || z.dim(1) != group || z.dim(2) * group != expected {
        let frames_for_z = if z.rank() == 3 { z.dim(2) * group / HOP } else { 0 };
        return Err(Error::shape(format!(
            "latent {:?} covers {frames_for_z} mel frames but the mel has {} (expected z [1, {group}, {}])",
            z.shape(),
            mel.frames(),
            expected / group
        )));
    }
    let raw = model.inverse(&z, &mel.to_tensor())?;
    let mut clipped = 0usize;
    let samples: Vec<f32> = raw
        .data()
        .iter()
        .map(|v| {
            let v = v.to_f64_lossy();
            if v.abs() > 1.0 || v.is_nan() {
                clipped += 1;
            }
            if v.is_nan() {
                0.0
            } else {
                v.clamp(-1.0, 1.0) as f32
            }
        })
        .collect();
    let clipped_fraction = clipped as f64 / samples.len() as f64;
    if clipped_fraction > CLIP_WARN_FRACTION {
        log::warn!(
            "{clipped} of {} samples ({:.2}%) clamped to [-1, 1]",
            samples.len(),
            100.0 * clipped_fraction
        );
    }
    Ok(Synthesis { audio: AudioClip::mono(samples)?, z, clipped_fraction })
}

/// Timing of repeated synthesis of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub preset: String,
    pub samples: usize,
    /// Median of the timed repetitions.
    pub seconds: f64,
    pub rate_khz: f64,
    /// `rate_khz / 22.05`.
    pub realtime_factor: f64,
    /// Discarded first repetition.
    pub warmup_seconds: f64,
    pub timed_seconds: Vec<f64>,
    pub sampler: String,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{}: {} samples ({:.2} s of audio) in {:.4} s median over {} runs: {:.2} kHz, {:.3}x realtime\n",
            self.preset,
            self.samples,
            self.samples as f64 / f64::from(SAMPLE_RATE),
            self.seconds,
            self.timed_seconds.len(),
            self.rate_khz,
            self.realtime_factor
        );
        let _ = writeln!(out, "  warmup {:.4} s (discarded)", self.warmup_seconds);
        for (i, s) in self.timed_seconds.iter().enumerate() {
            let _ = writeln!(out, "  run {} {:.4} s", i + 1, s);
        }
        out
    }

    pub fn to_key_values(&self) -> String {
        let timed: Vec<String> = self.timed_seconds.iter().map(|s| format!("{s:.6}")).collect();
        format!(
            "preset={}\nsamples={}\nseconds={:.6}\nrate_khz={:.6}\nrealtime_factor={:.6}\nwarmup_seconds={:.6}\ntimed_seconds={}\nsampler={}\n",
            self.preset,
            self.samples,
            self.seconds,
            self.rate_khz,
            self.realtime_factor,
            self.warmup_seconds,
            timed.join(","),
            self.sampler
        )
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// Run synthesis `repetitions` times, discard the first run and report the
/// median of the rest.
pub fn benchmark<T: Real>(model: &WaveGlow<T>, mel: &MelSpectrogram, repetitions: usize) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Contract(format!("benchmark needs at least 3 repetitions, got {repetitions}")));
    }
    let mut times = Vec::with_capacity(repetitions);
    let mut samples = 0;
    for rep in 0..repetitions {
        let req = SynthesisRequest::new(mel.clone(), rep as u64);
        let start = Instant::now();
        let out = synthesize(model, &req)?;
        times.push(start.elapsed().as_secs_f64());
        samples = out.audio.len();
    }
    let seconds = median(&times[1..]);
    let rate_khz = samples as f64 / seconds / 1000.0;
    Ok(BenchReport {
        preset: model.config().preset.clone(),
        samples,
        seconds,
        rate_khz,
        realtime_factor: rate_khz / (f64::from(SAMPLE_RATE) / 1000.0),
        warmup_seconds: times[0],
        timed_seconds: times[1..].to_vec(),
        sampler: SAMPLER.into(),
    })
}

/// Mel features of a synthetic two-tone utterance of about `seconds`.
pub fn benchmark_mel(seconds: f64) -> Result<MelSpectrogram> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::Domain(format!("utterance length {seconds} s must be positive")));
    }
    let n = ((seconds * f64::from(SAMPLE_RATE)).round() as usize).max(HOP);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(SAMPLE_RATE);
            (0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 660.0 * t).sin())
                as f32
        })
        .collect();
    let mel = mel_spectrogram(&AudioClip::mono(samples)?)?;
    // Keep whole hops only, so the synthesized length matches `seconds`.
    let frames = n / HOP;
    let values = (0..mel.n_mels()).flat_map(|m| (0..frames).map(move |f| (m, f))).map(|(m, f)| mel.get(m, f)).collect();
    MelSpectrogram::new(values, mel.n_mels(), frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn lengths_follow_frames() {
        assert_eq!(output_length(10, 8), 2560);
        assert_eq!(output_length(3, 6), 768);
        assert_eq!(output_length(1, 5), 255);
    }
}
