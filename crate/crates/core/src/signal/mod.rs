//! Audio I/O and the spectral front end: STFT, HTK mel filterbank,
//! log-mel features and Griffin-Lim phase reconstruction.

mod container;
mod griffin_lim;
mod mel;
mod stft;
mod wav;

pub use container::{read_mel, write_mel, MEL_MAGIC, MEL_VERSION};
pub use griffin_lim::{griffin_lim, GriffinLimResult};
pub use mel::{
    hz_to_mel, mel_filterbank, mel_spectrogram, mel_spectrogram_with, mel_to_hz, MelFilterbank, MelNorm,
    MelSpectrogram,
};
pub use stft::{frame_count, istft, stft, stft_samples, Spectrogram};
pub use wav::{load_wav, save_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
pub const WIN: usize = 1024;
pub const N_MELS: usize = 80;
/// Magnitude floor applied before log compression.
pub const MEL_FLOOR: f64 = 1e-5;

const RANGE_SLACK: f32 = 1e-6;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Format("sample_rate=0, expected a positive rate".into()));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0 + RANGE_SLACK)
        {
            return Err(Error::Domain(format!("sample {i} = {v} lies outside [-1, 1]")));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    /// Clip at the standard rate.
    pub fn mono(samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}
