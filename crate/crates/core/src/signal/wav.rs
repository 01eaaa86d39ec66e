use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

const PCM_SCALE: f32 = 32768.0;

fn format_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

/// Read a 16-bit PCM mono WAV at 22,050 Hz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    read(path).map_err(|e| e.at_path(path))
}

fn read(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(format_error)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!("channels={}, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format(format!(
            "sample_rate={}, expected {SAMPLE_RATE}",
            spec.sample_rate
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "bits_per_sample={} ({:?}), expected 16-bit integer PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f32::from(v) / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(format_error)?;
    AudioClip::new(samples, spec.sample_rate)
}

/// Write a clip as 16-bit PCM mono. Samples are rounded to the nearest
/// integer level and saturated.
pub fn save_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    write(path, clip).map_err(|e| e.at_path(path))
}

fn write(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(format_error)?;
    for &s in clip.samples() {
        let level = (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(level).map_err(format_error)?;
    }
    writer.finalize().map_err(format_error)
}
