use rustfft::num_complex::Complex64;

use super::stft::{istft, stft_samples, Spectrogram};
use super::{AudioClip, N_FFT, SAMPLE_RATE};
use crate::error::{Error, Result};

const PEAK: f64 = 0.99;
const SILENT_PEAK: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GriffinLimResult {
    /// Final time signal, peak-normalized to 0.99 unless silent.
    pub audio: AudioClip,
    /// `|| |STFT(istft(X_i))| - M || / ||M||` after each iteration, measured
    /// on the unnormalized estimate.
    pub distances: Vec<f64>,
}

impl GriffinLimResult {
    pub fn final_distance(&self) -> Option<f64> {
        self.distances.last().copied()
    }
}

/// Recover a signal from a magnitude spectrogram `[513, frames]` (bin-major)
/// by alternating projections, starting from zero phase.
pub fn griffin_lim(magnitude: &[f64], frames: usize, iterations: usize) -> Result<GriffinLimResult> {
    let n_bins = N_FFT / 2 + 1;
    if magnitude.len() != n_bins * frames || frames == 0 {
        return Err(Error::shape(format!(
            "magnitude of {} values is not {n_bins} x {frames}",
            magnitude.len()
        )));
    }
    if let Some(bad) = magnitude.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
        return Err(Error::Domain(format!("magnitude must be finite and non-negative, found {bad}")));
    }
    let target_norm = magnitude.iter().map(|m| m * m).sum::<f64>().sqrt();

    let zero_phase: Vec<Complex64> = magnitude.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let mut estimate = Spectrogram::from_bins(zero_phase, n_bins, frames)?;
    let mut distances = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let signal = istft(&estimate, None)?;
        let rebuilt = stft_samples(&signal)?;
        if target_norm > 0.0 {
            let err = rebuilt
                .bins()
                .iter()
                .zip(magnitude)
                .map(|(c, m)| (c.norm() - m).powi(2))
                .sum::<f64>()
                .sqrt();
            distances.push(err / target_norm);
        } else {
            distances.push(0.0);
        }
        let projected = rebuilt
            .bins()
            .iter()
            .zip(magnitude)
            .map(|(c, &m)| {
                let r = c.norm();
                if r > 0.0 {
                    c * (m / r)
                } else {
                    Complex64::new(m, 0.0)
                }
            })
            .collect();
        estimate = Spectrogram::from_bins(projected, n_bins, frames)?;
    }

    let mut signal = istft(&estimate, None)?;
    if signal.is_empty() {
        signal.push(0.0);
    }
    let peak = signal.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    if peak >= SILENT_PEAK {
        let scale = PEAK / peak;
        signal.iter_mut().for_each(|v| *v *= scale);
    }
    let audio = AudioClip::new(signal.into_iter().map(|v| v as f32).collect(), SAMPLE_RATE)?;
    Ok(GriffinLimResult { audio, distances })
}
