use proptest::prelude::*;
use waveglow::flow::{ModelConfig, WaveGlow};
use waveglow::infer::{
    benchmark, benchmark_mel, output_length, sample_latent, synthesize, synthesize_from_latent, SynthesisRequest,
    DEFAULT_SIGMA,
};
use waveglow::signal::{MelSpectrogram, HOP, SAMPLE_RATE};
use waveglow::tensor::Tensor;
use waveglow::Error;

fn mel(frames: usize) -> MelSpectrogram {
    let values = (0..80 * frames).map(|i| -4.0 + ((i * 7919) % 97) as f32 / 24.0).collect();
    MelSpectrogram::new(values, 80, frames).unwrap()
}

fn scrambled(config: ModelConfig, seed: u64) -> WaveGlow<f32> {
    let mut model = WaveGlow::new(config, seed).unwrap();
    model.randomize_end_layers(0.05, seed + 1);
    model
}

#[test]
fn default_sigma_is_six_tenths() {
    assert_eq!(DEFAULT_SIGMA, 0.6);
    assert_eq!(SynthesisRequest::new(mel(2), 0).sigma, 0.6);
}

#[test]
fn zero_sigma_output_does_not_depend_on_the_seed() {
    let model = scrambled(ModelConfig::micro(), 4);
    let m = mel(6);
    let run = |seed| {
        let req = SynthesisRequest { mel: m.clone(), sigma: 0.0, seed };
        synthesize(&model, &req).unwrap().audio
    };
    let a = run(1);
    assert_eq!(a, run(2));
    assert_eq!(a, run(12345));
}

#[test]
fn fixed_seed_is_bitwise_reproducible() {
    let model = scrambled(ModelConfig::micro(), 5);
    let req = SynthesisRequest::new(mel(5), 77);
    let a = synthesize(&model, &req).unwrap();
    let b = synthesize(&model, &req).unwrap();
    assert_eq!(a.audio, b.audio);
    assert_eq!(a.z, b.z);
    let other = synthesize(&model, &SynthesisRequest::new(mel(5), 78)).unwrap();
    assert_ne!(a.audio, other.audio);
}

#[test]
fn latent_statistics_follow_sigma() {
    let z = sample_latent::<f64>(&[1, 8, 20_000], 0.6, 3).unwrap();
    let n = z.numel() as f64;
    let mean = z.data().iter().sum::<f64>() / n;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var.sqrt() - 0.6).abs() < 0.01, "std {}", var.sqrt());
    assert!(sample_latent::<f32>(&[1, 2, 2], -0.1, 0).is_err());
    assert!(sample_latent::<f32>(&[1, 2, 2], f64::NAN, 0).is_err());
}

#[test]
fn synthesized_audio_maps_back_to_its_latent() {
    let model = scrambled(ModelConfig::tiny(), 6);
    let m = mel(8);
    let req = SynthesisRequest { mel: m.clone(), sigma: 0.1, seed: 9 };
    let out = synthesize(&model, &req).unwrap();
    assert_eq!(out.clipped_fraction, 0.0, "output must stay inside [-1, 1] for an exact inverse");
    let audio = Tensor::new(&[1, out.audio.len()], out.audio.samples().to_vec()).unwrap();
    let back = model.forward(&audio, &m.to_tensor()).unwrap();
    let err = back.z.max_abs_diff(&out.z).unwrap();
    assert!(err < 1e-4, "z round trip error {err}");
}

#[test]
fn output_length_tracks_frames() {
    let model = scrambled(ModelConfig::micro(), 1);
    for frames in [1, 2, 7] {
        let out = synthesize(&model, &SynthesisRequest::new(mel(frames), 0)).unwrap();
        assert_eq!(out.audio.len(), frames * HOP);
        assert_eq!(out.audio.len(), output_length(frames, 4));
        assert_eq!(out.audio.sample_rate(), SAMPLE_RATE);
    }
}

#[test]
fn mismatched_latent_reports_both_frame_counts() {
    let model = scrambled(ModelConfig::micro(), 1);
    let z = Tensor::<f32>::zeros(&[1, 4, 3 * HOP / 4]).unwrap();
    let err = synthesize_from_latent(&model, &mel(5), z).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Shape(_)), "{err:?}");
    assert!(msg.contains('3') && msg.contains('5'), "{msg}");
}

#[test]
fn wrong_mel_channel_count_is_rejected() {
    let model = scrambled(ModelConfig::micro(), 1);
    let narrow = MelSpectrogram::new(vec![0.0; 40 * 3], 40, 3).unwrap();
    assert!(synthesize(&model, &SynthesisRequest::new(narrow, 0)).is_err());
}

#[test]
fn loud_output_is_clamped_and_counted() {
    let model = scrambled(ModelConfig::micro(), 2);
    let out = synthesize(&model, &SynthesisRequest { mel: mel(4), sigma: 5.0, seed: 1 }).unwrap();
    assert!(out.clipped_fraction > 0.1);
    assert!(out.audio.samples().iter().all(|v| v.abs() <= 1.0));
    let over = out.z.data().iter().filter(|v| v.abs() > 1.0).count();
    assert!(over > 0);
}

#[test]
fn benchmark_discards_the_first_run() {
    let model = scrambled(ModelConfig::micro(), 3);
    let m = benchmark_mel(0.1).unwrap();
    let report = benchmark(&model, &m, 3).unwrap();
    assert_eq!(report.timed_seconds.len(), 2);
    assert_eq!(report.samples, m.frames() * HOP);
    let expected = report.samples as f64 / report.seconds / 1000.0;
    assert!((report.rate_khz - expected).abs() <= 0.01 * expected);
    assert!((report.realtime_factor - report.rate_khz / 22.05).abs() < 1e-9);
    let mut sorted = report.timed_seconds.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(report.seconds, 0.5 * (sorted[0] + sorted[1]));
    assert!(report.to_key_values().contains(&format!("samples={}", report.samples)));
    assert!(matches!(benchmark(&model, &m, 2), Err(Error::Contract(_))));
}

#[test]
fn benchmark_mel_covers_the_requested_length() {
    let m = benchmark_mel(1.0).unwrap();
    assert_eq!(m.frames(), 22050 / HOP);
    assert!(benchmark_mel(0.0).is_err());
}

#[test]
fn longer_utterances_are_not_slower_per_sample() {
    let model = scrambled(ModelConfig::micro(), 3);
    let short = benchmark(&model, &benchmark_mel(0.05).unwrap(), 5).unwrap();
    let long = benchmark(&model, &benchmark_mel(1.0).unwrap(), 5).unwrap();
    // Fixed per-call overhead is amortized over more samples.
    assert!(long.rate_khz >= 0.8 * short.rate_khz, "{} vs {}", long.rate_khz, short.rate_khz);
}

#[test]
fn deeper_models_are_slower() {
    let m = benchmark_mel(0.25).unwrap();
    let micro = benchmark(&scrambled(ModelConfig::micro(), 1), &m, 3).unwrap();
    let tiny = benchmark(&scrambled(ModelConfig::tiny(), 1), &m, 3).unwrap();
    assert!(micro.rate_khz > tiny.rate_khz, "micro {} tiny {}", micro.rate_khz, tiny.rate_khz);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_length_is_a_whole_number_of_groups(frames in 1usize..200, group in 1usize..17) {
        let n = output_length(frames, group);
        prop_assert_eq!(n % group, 0);
        prop_assert!(n <= frames * HOP);
        prop_assert!(frames * HOP - n < group);
    }

    #[test]
    fn zero_sigma_latent_is_all_zero(seed in any::<u64>()) {
        let z = sample_latent::<f32>(&[1, 4, 16], 0.0, seed).unwrap();
        prop_assert!(z.data().iter().all(|&v| v == 0.0));
    }
}
