use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioClip, HOP, N_FFT, WIN};
use crate::error::{Error, Result};

/// One-sided STFT, `[n_fft/2 + 1, frames]`, stored bin-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    bins: Vec<Complex64>,
    n_bins: usize,
    frames: usize,
}

impl Spectrogram {
    pub fn from_bins(bins: Vec<Complex64>, n_bins: usize, frames: usize) -> Result<Self> {
        if bins.len() != n_bins * frames || frames == 0 {
            return Err(Error::shape(format!(
                "spectrogram of {} values is not {n_bins} x {frames}",
                bins.len()
            )));
        }
        Ok(Spectrogram { bins, n_bins, frames })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.bins[bin * self.frames + frame]
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// `|X|`, bin-major like the spectrogram.
    pub fn magnitude(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window of length `WIN`.
pub(crate) fn hann() -> Vec<f64> {
    (0..WIN).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / WIN as f64).cos()).collect()
}

/// Frames produced for `len` samples with centered, reflect-padded framing.
pub fn frame_count(len: usize) -> usize {
    1 + len / HOP
}

/// Mirror an out-of-range index back into `0..len` (no edge repeat),
/// folding as many times as needed.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn stft(audio: &AudioClip) -> Result<Spectrogram> {
    let samples: Vec<f64> = audio.samples().iter().map(|&s| f64::from(s)).collect();
    stft_samples(&samples)
}

/// STFT with n_fft 1024, hop 256, Hann window 1024, frames centered by
/// reflect-padding 512 samples at each edge.
pub fn stft_samples(samples: &[f64]) -> Result<Spectrogram> {
    if samples.is_empty() {
        return Err(Error::Contract("stft of empty audio".into()));
    }
    let pad = (N_FFT / 2) as isize;
    let frames = frame_count(samples.len());
    let n_bins = N_FFT / 2 + 1;
    let window = hann();
    let fft = FftPlanner::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex64::default(); N_FFT];
    let mut bins = vec![Complex64::default(); n_bins * frames];
    for f in 0..frames {
        let start = (f * HOP) as isize - pad;
        for (n, slot) in buf.iter_mut().enumerate() {
            let idx = reflect(start + n as isize, samples.len());
            *slot = Complex64::new(samples[idx] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            bins[k * frames + f] = buf[k];
        }
    }
    Ok(Spectrogram { bins, n_bins, frames })
}

/// Inverse STFT: the least-squares signal for the centered, reflect-padded
/// framing used by [`stft_samples`]. Overlap-add is normalized by the summed
/// squared window, with padded samples folded back onto their mirror
/// positions. Output has `length` samples, default `(frames - 1) * HOP`;
/// lengths the framing cannot produce fall back to plain trimming.
pub fn istft(spec: &Spectrogram, length: Option<usize>) -> Result<Vec<f64>> {
    if spec.n_bins != N_FFT / 2 + 1 {
        return Err(Error::shape(format!(
            "istft expects {} bins, got {}",
            N_FFT / 2 + 1,
            spec.n_bins
        )));
    }
    let frames = spec.frames;
    let window = hann();
    let ifft = FftPlanner::new().plan_fft_inverse(N_FFT);
    let full_len = N_FFT + HOP * (frames - 1);
    let mut acc = vec![0.0; full_len];
    let mut envelope = vec![0.0; full_len];
    let mut buf = vec![Complex64::default(); N_FFT];
    for f in 0..frames {
        for k in 0..spec.n_bins {
            buf[k] = spec.get(k, f);
        }
        // Hermitian completion; DC and Nyquist are taken as real.
        buf[0].im = 0.0;
        buf[N_FFT / 2].im = 0.0;
        for k in 1..N_FFT / 2 {
            buf[N_FFT - k] = buf[k].conj();
        }
        ifft.process(&mut buf);
        let offset = f * HOP;
        for n in 0..N_FFT {
            acc[offset + n] += window[n] * buf[n].re / N_FFT as f64;
            envelope[offset + n] += window[n] * window[n];
        }
    }
    let length = length.unwrap_or(HOP * (frames - 1));
    let pad = N_FFT / 2;
    let (mut num, den) = if length > 0 && frame_count(length) == frames {
        let mut num = vec![0.0; length];
        let mut den = vec![0.0; length];
        for (p, (a, e)) in acc.iter().zip(&envelope).enumerate() {
            let i = reflect(p as isize - pad as isize, length);
            num[i] += a;
            den[i] += e;
        }
        (num, den)
    } else {
        let take = |v: Vec<f64>| {
            let mut out: Vec<f64> = v.into_iter().skip(pad).take(length).collect();
            out.resize(length, 0.0);
            out
        };
        (take(acc), take(envelope))
    };
    let tiny = f64::MIN_POSITIVE.sqrt();
    for (a, e) in num.iter_mut().zip(&den) {
        if *e > tiny {
            *a /= *e;
        }
    }
    Ok(num)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_reflect() {
        let len = 4;
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, len)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn short_inputs_still_frame() {
        let spec = stft_samples(&[0.25]).unwrap();
        assert_eq!(spec.frames(), 1);
        // constant frame -> DC equals window sum
        assert!((spec.get(0, 0).re - 0.25 * 512.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_is_exact_up_to_the_edges() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let y = istft(&stft_samples(&x).unwrap(), Some(x.len())).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(stft_samples(&[]).is_err());
    }

    #[test]
    fn zero_audio_zero_spectrum() {
        let spec = stft_samples(&vec![0.0; 3000]).unwrap();
        assert_eq!(spec.frames(), frame_count(3000));
        assert!(spec.bins().iter().all(|c| c.norm() == 0.0));
    }
}
