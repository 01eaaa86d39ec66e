use super::stft::{stft, Spectrogram};
use super::{AudioClip, MEL_FLOOR, N_FFT, N_MELS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// How each triangular filter is scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MelNorm {
    /// `2 / (f_upper - f_lower)`: equal area per filter.
    #[default]
    Area,
    /// Weights of each filter sum to one.
    UnitSum,
}

/// Triangular filters `[n_mels, n_fft/2 + 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    n_mels: usize,
    n_bins: usize,
    /// `n_mels + 2` edge frequencies in Hz; filter `m` peaks at `edges[m + 1]`.
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Peak frequency of every filter.
    pub fn center_frequencies(&self) -> Vec<f64> {
        self.edges_hz[1..=self.n_mels].to_vec()
    }

    /// Index of the filter whose center is nearest `hz`.
    pub fn nearest_filter(&self, hz: f64) -> usize {
        self.center_frequencies()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
            .map(|(i, _)| i)
            .expect("at least one filter")
    }

    /// `weights * magnitude` for a bin-major magnitude `[n_bins, frames]`.
    pub fn apply(&self, magnitude: &[f64], frames: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_mels * frames];
        for m in 0..self.n_mels {
            let dst = &mut out[m * frames..(m + 1) * frames];
            for (k, &w) in self.row(m).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &magnitude[k * frames..(k + 1) * frames];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
            }
        }
        out
    }
}

/// HTK-scale triangular filterbank spanning 0 Hz to Nyquist.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, norm: MelNorm) -> Result<MelFilterbank> {
    if n_mels == 0 || n_mels >= n_fft / 2 {
        return Err(Error::Config(format!("n_mels={n_mels} must be in 1..{}", n_fft / 2)));
    }
    let n_bins = n_fft / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins).map(|k| k as f64 * f64::from(sample_rate) / n_fft as f64).collect();

    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (w, &f) in row.iter_mut().zip(&bin_hz) {
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
        let scale = match norm {
            MelNorm::Area => 2.0 / (hi - lo),
            MelNorm::UnitSum => {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    total.recip()
                } else {
                    0.0
                }
            }
        };
        row.iter_mut().for_each(|w| *w *= scale);
    }
    Ok(MelFilterbank { weights, n_mels, n_bins, edges_hz })
}

/// Natural-log mel magnitudes `[n_mels, frames]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>,
    n_mels: usize,
    frames: usize,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f32>, n_mels: usize, frames: usize) -> Result<Self> {
        if n_mels == 0 || frames == 0 || values.len() != n_mels * frames {
            return Err(Error::shape(format!(
                "mel of {} values is not {n_mels} x {frames}",
                values.len()
            )));
        }
        Ok(MelSpectrogram { values, n_mels, frames })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.frames + frame]
    }

    /// Single-item batch `[1, n_mels, frames]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &[1, self.n_mels, self.frames],
            self.values.iter().map(|&v| T::from_f64_lossy(f64::from(v))).collect(),
        )
        .expect("mel dimensions are positive")
    }

    /// Stack equally sized mels into `[B, n_mels, frames]`.
    pub fn batch<T: Real>(mels: &[MelSpectrogram]) -> Result<Tensor<T>> {
        let first = mels.first().ok_or_else(|| Error::shape("empty mel batch"))?;
        if mels.iter().any(|m| m.n_mels != first.n_mels || m.frames != first.frames) {
            return Err(Error::shape("mel batch items differ in size"));
        }
        let data = mels
            .iter()
            .flat_map(|m| m.values.iter().map(|&v| T::from_f64_lossy(f64::from(v))))
            .collect();
        Tensor::new(&[mels.len(), first.n_mels, first.frames], data)
    }
}

fn compress(filtered: Vec<f64>, n_mels: usize, frames: usize) -> MelSpectrogram {
    let values = filtered.into_iter().map(|v| v.max(MEL_FLOOR).ln() as f32).collect();
    MelSpectrogram { values, n_mels, frames }
}

/// `ln(max(filterbank * |stft|, 1e-5))` with the standard filterbank.
pub fn mel_spectrogram(audio: &AudioClip) -> Result<MelSpectrogram> {
    let fb = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, MelNorm::Area)?;
    mel_spectrogram_with(&stft(audio)?, &fb)
}

/// Log-mel features of an existing spectrogram under a given filterbank.
pub fn mel_spectrogram_with(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    if spec.n_bins() != fb.n_bins() {
        return Err(Error::shape(format!(
            "filterbank expects {} bins, spectrogram has {}",
            fb.n_bins(),
            spec.n_bins()
        )));
    }
    let filtered = fb.apply(&spec.magnitude(), spec.frames());
    Ok(compress(filtered, fb.n_mels(), spec.frames()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn htk_scale_values() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn too_many_mels_rejected() {
        assert!(mel_filterbank(512, 1024, SAMPLE_RATE, MelNorm::Area).is_err());
    }

    #[test]
    fn unit_sum_rows() {
        let fb = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, MelNorm::UnitSum).unwrap();
        for m in 0..N_MELS {
            assert!((fb.row(m).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
