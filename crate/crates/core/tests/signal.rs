use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveglow::signal::{
    frame_count, griffin_lim, istft, mel_filterbank, mel_spectrogram, stft, stft_samples, AudioClip,
    MelNorm, HOP, MEL_FLOOR, N_FFT, N_MELS, SAMPLE_RATE,
};

fn sine(hz: f64, amp: f64, len: usize) -> Vec<f64> {
    (0..len).map(|n| amp * (2.0 * PI * hz * n as f64 / f64::from(SAMPLE_RATE)).sin()).collect()
}

fn clip(samples: &[f64]) -> AudioClip {
    AudioClip::mono(samples.iter().map(|&v| v as f32).collect()).unwrap()
}

/// Direct O(N^2) DFT of one Hann-windowed frame: the independent oracle.
fn brute_dft_frame(samples: &[f64], center: usize) -> Vec<(f64, f64)> {
    let n = N_FFT;
    let start = center - n / 2;
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..n {
                let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / n as f64).cos();
                let phase = -2.0 * PI * (k * j) as f64 / n as f64;
                re += w * samples[start + j] * phase.cos();
                im += w * samples[start + j] * phase.sin();
            }
            (re, im)
        })
        .collect()
}

#[test]
fn stft_matches_brute_force_dft_on_interior_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..4096).map(|_| rng.random_range(-0.5..0.5)).collect();
    let spec = stft_samples(&x).unwrap();
    let frame = 6;
    let oracle = brute_dft_frame(&x, frame * HOP);
    for (k, (re, im)) in oracle.iter().enumerate() {
        let got = spec.get(k, frame);
        assert!((got.re - re).abs() < 1e-9 && (got.im - im).abs() < 1e-9, "bin {k}");
    }
}

#[test]
fn dc_signal_concentrates_in_bin_zero() {
    let x = vec![1.0; 4096];
    let spec = stft_samples(&x).unwrap();
    let oracle = brute_dft_frame(&x, 5 * HOP);
    assert!((oracle[0].0 - 512.0).abs() < 1e-9);
    for f in 2..spec.frames() - 2 {
        assert!((spec.get(0, f).norm() - 512.0).abs() < 1e-9);
        // the periodic Hann leaks only into bin 1
        for k in 2..spec.n_bins() {
            assert!(spec.get(k, f).norm() < 1e-9, "bin {k} frame {f}");
        }
    }
}

#[test]
fn bin_centered_sinusoid_peaks_at_its_bin() {
    for k in [5usize, 46, 200, 400] {
        let hz = f64::from(SAMPLE_RATE) * k as f64 / N_FFT as f64;
        let spec = stft(&clip(&sine(hz, 0.5, 8192))).unwrap();
        for f in 4..spec.frames() - 4 {
            let argmax = (0..spec.n_bins())
                .max_by(|&a, &b| spec.get(a, f).norm().total_cmp(&spec.get(b, f).norm()))
                .unwrap();
            assert_eq!(argmax, k, "frame {f}");
        }
    }
}

#[test]
fn frame_count_follows_padded_length() {
    for len in [1usize, 255, 256, 1000, 16_000] {
        let padded = len + N_FFT;
        let spec = stft_samples(&vec![0.1; len]).unwrap();
        assert_eq!(spec.frames(), 1 + (padded - N_FFT) / HOP);
        assert_eq!(spec.frames(), frame_count(len));
        assert_eq!(spec.n_bins(), 513);
    }
}

#[test]
fn parseval_on_interior_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..22_050).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spec = stft_samples(&x).unwrap();
    // frames whose windows lie fully inside the signal
    let first = 2usize;
    let last = spec.frames() - 3;
    let mut spectral = 0.0;
    for f in first..=last {
        for k in 0..spec.n_bins() {
            let weight = if k == 0 || k == N_FFT / 2 { 1.0 } else { 2.0 };
            spectral += weight * spec.get(k, f).norm_sqr();
        }
    }
    // sum_k |X_k|^2 = N sum_n (w x)^2, and Hann^2 overlap-adds to 384/256
    spectral /= N_FFT as f64 * (384.0 / HOP as f64);
    // the summed window mass of these frames equals HOP samples per frame
    let lo = first * HOP - HOP / 2;
    let hi = last * HOP + HOP / 2;
    let temporal: f64 = x[lo..hi].iter().map(|v| v * v).sum();
    let rel = (spectral - temporal).abs() / temporal;
    assert!(rel < 0.01, "relative energy mismatch {rel}");
}

#[test]
fn inverse_stft_reconstructs_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = istft(&stft_samples(&x).unwrap(), Some(x.len())).unwrap();
    let err = x[N_FFT..x.len() - N_FFT]
        .iter()
        .zip(&y[N_FFT..x.len() - N_FFT])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn filterbank_rows_are_unimodal_and_nested() {
    let fb = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, MelNorm::Area).unwrap();
    assert_eq!((fb.n_mels(), fb.n_bins()), (80, 513));
    let mut prev = (0usize, 0usize);
    for m in 0..N_MELS {
        let row = fb.row(m);
        assert!(row.iter().all(|&w| w >= 0.0));
        let first = row.iter().position(|&w| w > 0.0).expect("filter has support");
        let last = row.iter().rposition(|&w| w > 0.0).unwrap();
        // rises then falls inside its support
        let peak = (first..=last).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert!(row[first..=peak].windows(2).all(|w| w[0] <= w[1]), "row {m} rising");
        assert!(row[peak..=last].windows(2).all(|w| w[0] >= w[1]), "row {m} falling");
        assert!(first >= prev.0 && last >= prev.1, "row {m} support not in order");
        prev = (first, last);
    }
    let centers = fb.center_frequencies();
    assert!(centers.windows(2).all(|c| c[0] < c[1]));
    assert!(centers[0] > 0.0 && *centers.last().unwrap() < 11_025.0);
}

#[test]
fn area_normalization_scales_by_bandwidth() {
    let area = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, MelNorm::Area).unwrap();
    let raw_peak = |m: usize| {
        // triangle height before scaling is at most one
        let c = area.center_frequencies();
        let lo = if m == 0 { 0.0 } else { c[m - 1] };
        let hi = if m + 1 < c.len() { c[m + 1] } else { 11_025.0 };
        2.0 / (hi - lo)
    };
    for m in [0usize, 40, 79] {
        let max = area.row(m).iter().cloned().fold(0.0, f64::max);
        assert!(max <= raw_peak(m) * (1.0 + 1e-12) && max > 0.0, "row {m}");
    }
}

#[test]
fn zero_audio_gives_floor() {
    let mel = mel_spectrogram(&clip(&vec![0.0; 5000])).unwrap();
    assert_eq!(mel.n_mels(), 80);
    assert_eq!(mel.frames(), frame_count(5000));
    let floor = MEL_FLOOR.ln() as f32;
    assert!((floor + 11.5129).abs() < 1e-4);
    assert!(mel.values().iter().all(|&v| v == floor));
}

#[test]
fn one_khz_tone_lands_in_nearest_center_filter() {
    let fb = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, MelNorm::Area).unwrap();
    let expected = fb.nearest_filter(1000.0);
    let mel = mel_spectrogram(&clip(&sine(1000.0, 0.5, 16_384))).unwrap();
    for f in 4..mel.frames() - 4 {
        let argmax = (0..80).max_by(|&a, &b| mel.get(a, f).total_cmp(&mel.get(b, f))).unwrap();
        assert_eq!(argmax, expected, "frame {f}");
    }
}

#[test]
fn doubling_amplitude_adds_log_two() {
    let a = mel_spectrogram(&clip(&sine(440.0, 0.2, 6000))).unwrap();
    let b = mel_spectrogram(&clip(&sine(440.0, 0.4, 6000))).unwrap();
    let floor = MEL_FLOOR.ln() as f32;
    let mut checked = 0;
    for (x, y) in a.values().iter().zip(b.values()) {
        if *x > floor + 1.0 {
            assert!((y - x - 2f32.ln()).abs() < 1e-4, "{x} -> {y}");
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn hop_shift_moves_one_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..8192).map(|_| rng.random_range(-0.5..0.5)).collect();
    let shifted: Vec<f64> = std::iter::repeat(0.0).take(HOP).chain(x.iter().copied()).collect();
    let a = mel_spectrogram(&clip(&x)).unwrap();
    let b = mel_spectrogram(&clip(&shifted)).unwrap();
    for f in 4..a.frames() - 4 {
        for m in 0..80 {
            assert!((a.get(m, f) - b.get(m, f + 1)).abs() < 1e-4, "mel {m} frame {f}");
        }
    }
}

fn sinusoid_magnitude() -> (Vec<f64>, usize) {
    let spec = stft_samples(&sine(440.0, 0.8, 16_384)).unwrap();
    (spec.magnitude(), spec.frames())
}

#[test]
fn griffin_lim_distance_never_increases() {
    let (mag, frames) = sinusoid_magnitude();
    let out = griffin_lim(&mag, frames, 60).unwrap();
    assert_eq!(out.distances.len(), 60);
    assert!(out.final_distance().unwrap() < out.distances[0]);
    for w in out.distances.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    let peak = out.audio.samples().iter().fold(0f32, |p, v| p.max(v.abs()));
    assert!((peak - 0.99).abs() < 1e-6);
}

#[test]
fn griffin_lim_zero_iterations_is_zero_phase_inverse() {
    let (mag, frames) = sinusoid_magnitude();
    let out = griffin_lim(&mag, frames, 0).unwrap();
    assert!(out.distances.is_empty());
    let spec = waveglow::signal::Spectrogram::from_bins(
        mag.iter().map(|&m| rustfft::num_complex::Complex64::new(m, 0.0)).collect(),
        513,
        frames,
    )
    .unwrap();
    let raw = istft(&spec, None).unwrap();
    let peak = raw.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    for (a, b) in out.audio.samples().iter().zip(&raw) {
        assert!((f64::from(*a) - b * 0.99 / peak).abs() < 1e-6);
    }
}
