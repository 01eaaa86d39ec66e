//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; `-- 3 7` runs criteria 3
//! and 7 only. Each oracle below is computed here, independently of the
//! library's own self-checks.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use waveglow::flow::{FlowOutput, ModelConfig, WaveGlow};
use waveglow::infer::{benchmark, benchmark_mel, synthesize, SynthesisRequest};
use waveglow::params::ParamId;
use waveglow::signal::{
    griffin_lim, mel_spectrogram, stft_samples, AudioClip, MelSpectrogram, HOP, MEL_FLOOR, N_FFT, N_MELS,
    SAMPLE_RATE,
};
use waveglow::tensor::{Real, Tensor, Var};
use waveglow::train::{Checkpoint, TrainConfig, Trainer};

type Outcome = Result<(bool, String), String>;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, outcome: Outcome) {
        let (status, detail) = match outcome {
            Ok((true, d)) => ("PASS", d),
            Ok((false, d)) => ("FAIL", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if status == "FAIL" {
            self.failures += 1;
        }
        println!("{status} {id:>2} {name}: {detail}");
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn uniform<T: Real>(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-scale..scale))).unwrap()
}

fn random_mel<T: Real>(config: &ModelConfig, samples: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let frames = config.upsample.frames_needed(samples);
    uniform(&[1, config.upsample.channels, frames], 2.0, rng)
}

/// Model whose couplings are non-trivial affine maps.
fn scrambled<T: Real>(config: ModelConfig, seed: u64) -> Result<WaveGlow<T>, String> {
    let scale = 0.8 / (config.wn.skip_channels as f64).sqrt();
    let mut model = WaveGlow::new(config, seed).map_err(err)?;
    model.randomize_end_layers(scale, seed + 1);
    Ok(model)
}

fn log_abs_det(values: &[f64], n: usize) -> f64 {
    DMatrix::from_row_slice(n, n, values).lu().determinant().abs().ln()
}

/// Per-element NLL from forward values, without the Gaussian constant.
fn nll_of(out: &FlowOutput<f64>, sigma: f64) -> f64 {
    let energy: f64 = out.z.data().iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma * sigma);
    (energy - out.sum_log_s - out.sum_logdet_w) / (out.batch * out.samples) as f64
}

/// Central-difference Jacobian of `x -> z`, row-major `[n, n]`.
fn jacobian(model: &WaveGlow<f64>, audio: &Tensor<f64>, mel: &Tensor<f64>, eps: f64) -> Result<Vec<f64>, String> {
    let n = audio.numel();
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let mut plus = audio.clone();
        plus.data_mut()[j] += eps;
        let mut minus = audio.clone();
        minus.data_mut()[j] -= eps;
        let zp = model.forward(&plus, mel).map_err(err)?.z;
        let zm = model.forward(&minus, mel).map_err(err)?.z;
        for i in 0..n {
            jac[i * n + j] = (zp.data()[i] - zm.data()[i]) / (2.0 * eps);
        }
    }
    Ok(jac)
}

fn round_trip<T: Real>(config: ModelConfig, samples: usize, tol: f64) -> Outcome {
    let start = Instant::now();
    let model = scrambled::<T>(config.clone(), 21)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let audio = uniform::<T>(&[1, samples], 0.5, &mut rng);
    let mel = random_mel::<T>(&config, samples, &mut rng);
    let z = model.forward(&audio, &mel).map_err(err)?.z;
    let back = model.inverse(&z, &mel).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = back.max_abs_diff(&audio).map_err(err)?;
    let ok = worst < tol && secs < 60.0;
    Ok((ok, format!("{} {:?} T={samples}: max err {worst:.2e} (< {tol:e}), {secs:.1} s (< 60 s)", config.preset, T::DTYPE)))
}

fn criterion_1(r: &mut Report) {
    let cases: [(&str, Box<dyn Fn() -> Outcome>); 4] = [
        ("tiny f32", Box::new(|| round_trip::<f32>(ModelConfig::tiny(), 2048, 1e-4))),
        ("tiny f64", Box::new(|| round_trip::<f64>(ModelConfig::tiny(), 2048, 1e-8))),
        ("paper f32", Box::new(|| round_trip::<f32>(ModelConfig::paper(), 16_000, 1e-4))),
        ("paper f64", Box::new(|| round_trip::<f64>(ModelConfig::paper(), 16_000, 1e-8))),
    ];
    for (name, case) in cases {
        r.line(1, &format!("invertibility {name}"), case());
    }
}

/// Micro model, random 16-sample clip and its conditioning.
fn dense_setup() -> Result<(WaveGlow<f64>, Tensor<f64>, Tensor<f64>), String> {
    let config = ModelConfig::micro();
    assert_eq!((config.group, config.n_flows, config.wn.n_layers, config.wn.residual_channels), (4, 2, 2, 16));
    let model = scrambled::<f64>(config.clone(), 31)?;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let audio = uniform::<f64>(&[1, 16], 1.0, &mut rng);
    let mel = random_mel::<f64>(&config, 16, &mut rng);
    Ok((model, audio, mel))
}

fn criterion_2_3(r: &mut Report) {
    let dense = (|| {
        let (model, audio, mel) = dense_setup()?;
        let out = model.forward(&audio, &mel).map_err(err)?;
        let numeric = log_abs_det(&jacobian(&model, &audio, &mel, 1e-6)?, 16);
        Ok::<_, String>((out, numeric))
    })();
    let (out, numeric) = match dense {
        Ok(v) => v,
        Err(e) => {
            r.line(2, "log-det oracle", Err(e.clone()));
            r.line(3, "likelihood identity", Err(e));
            return;
        }
    };
    let analytic = out.sum_log_s + out.sum_logdet_w;
    let rel = (analytic - numeric).abs() / numeric.abs();
    r.line(
        2,
        "log-det oracle",
        Ok((rel < 1e-4, format!("analytic {analytic:.10} numeric {numeric:.10}, rel err {rel:.2e} (< 1e-4)"))),
    );
    for sigma in [0.5f64.sqrt(), 1.0] {
        let outcome = out.log_likelihood(sigma).map_err(err).map(|lp| {
            let n = out.z.numel() as f64;
            let sq: f64 = out.z.data().iter().map(|v| v * v).sum();
            let expected = -sq / (2.0 * sigma * sigma) - 0.5 * n * (2.0 * PI * sigma * sigma).ln() + numeric;
            let rel = (lp - expected).abs() / expected.abs();
            (rel < 1e-4, format!("sigma {sigma:.4}: log p {lp:.8} vs {expected:.8}, rel err {rel:.2e} (< 1e-4)"))
        });
        r.line(3, "likelihood identity", outcome);
    }
}

fn criterion_4(r: &mut Report) {
    let setup = (|| {
        let config = ModelConfig::tiny();
        let model = scrambled::<f64>(config.clone(), 41)?;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = 4 * config.group;
        let audio = uniform::<f64>(&[1, samples], 1.0, &mut rng);
        let mel = random_mel::<f64>(&config, samples, &mut rng);
        Ok::<_, String>((model, audio, mel))
    })();
    let (mut model, audio, mel) = match setup {
        Ok(v) => v,
        Err(e) => return r.line(4, "gradients", Err(e)),
    };
    let sigma = 0.5f64.sqrt();
    let analytic = (|| {
        let bound = model.store().bind();
        let trace = model
            .forward_graph(&bound, &Var::constant(audio.clone()), &Var::constant(mel.clone()))
            .map_err(err)?;
        trace.nll(sigma).map_err(err)?.backward().map_err(err)?;
        Ok::<_, String>(bound.grads())
    })();
    let grads = match analytic {
        Ok(g) => g,
        Err(e) => return r.line(4, "gradients", Err(e)),
    };
    let ids: Vec<ParamId> = model.store().ids().collect();
    let groups: Vec<(&'static str, Vec<ParamId>)> = model.param_groups();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let eps = 1e-6;
    for (group, members) in groups {
        // Largest analytic entries of the group plus random ones.
        let mut coords: Vec<(ParamId, usize, f64)> = Vec::new();
        for &id in &members {
            let g = &grads[ids.iter().position(|&x| x == id).unwrap()];
            coords.extend(g.data().iter().enumerate().map(|(k, &v)| (id, k, v)));
        }
        coords.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
        let mut picked: Vec<(ParamId, usize, f64)> = coords.iter().take(4).copied().collect();
        for _ in 0..4 {
            picked.push(coords[rng.random_range(0..coords.len())]);
        }
        let mut worst = 0.0f64;
        let mut failure = None;
        for (id, k, a) in picked {
            let mut eval = |delta: f64| -> Result<f64, String> {
                model.store_mut().update(id, |w| w[k] += delta);
                let loss = model.forward(&audio, &mel).map(|o| nll_of(&o, sigma)).map_err(err);
                model.store_mut().update(id, |w| w[k] -= delta);
                loss
            };
            let numeric = match (eval(eps), eval(-eps)) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * eps),
                (Err(e), _) | (_, Err(e)) => {
                    failure = Some(e);
                    break;
                }
            };
            // Below ~1e-7 the central difference itself is roundoff.
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
        }
        let outcome = match failure {
            Some(e) => Err(e),
            None => Ok((worst < 1e-3, format!("worst rel err {worst:.2e} over 8 coordinates (< 1e-3)"))),
        };
        r.line(4, &format!("gradients {group}"), outcome);
    }
}

fn criterion_5(r: &mut Report) {
    for config in [ModelConfig::tiny(), ModelConfig::paper()] {
        let preset = config.preset.clone();
        let outcome = (|| {
            let model = WaveGlow::<f64>::new(config, 51).map_err(err)?;
            let (mut gram, mut logdet) = (0.0f64, 0.0f64);
            for flow in model.flows() {
                let n = flow.invconv.channels();
                let w = DMatrix::from_row_slice(n, n, model.store().get(flow.invconv.weight).data());
                let g = &w * w.transpose() - DMatrix::<f64>::identity(n, n);
                gram = gram.max(g.amax());
                logdet = logdet.max(w.lu().determinant().abs().ln().abs());
            }
            Ok::<_, String>((gram < 1e-5 && logdet < 1e-5, format!("{preset}: |WW^T - I| {gram:.2e}, |log|det W|| {logdet:.2e} (< 1e-5)")))
        })();
        r.line(5, "initialization W", outcome);

        let iso = (|| {
            let config = ModelConfig::preset(&preset).map_err(err)?;
            let model = WaveGlow::<f32>::new(config.clone(), 52).map_err(err)?;
            let mut rng = ChaCha8Rng::seed_from_u64(53);
            let audio = uniform::<f32>(&[1, 2048], 0.5, &mut rng);
            let mel = random_mel::<f32>(&config, 2048, &mut rng);
            let z = model.forward(&audio, &mel).map_err(err)?.z;
            let norm = |t: &Tensor<f32>| t.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            let ratio = norm(&z) / norm(&audio);
            Ok::<_, String>(((ratio - 1.0).abs() <= 1e-4, format!("{preset}: ||z||/||x|| = {ratio:.8} (1 +- 1e-4)")))
        })();
        r.line(5, "initialization isometry", iso);
    }
}

/// One second of three sinusoids plus 1% Gaussian noise.
fn training_clip() -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let sr = f64::from(SAMPLE_RATE);
    let samples = (0..SAMPLE_RATE as usize)
        .map(|i| {
            let t = i as f64 / sr;
            let tone = 0.3 * (2.0 * PI * 220.0 * t).sin() + 0.2 * (2.0 * PI * 523.0 * t).sin()
                + 0.1 * (2.0 * PI * 1375.0 * t).sin();
            let noise: f64 = rng.sample(StandardNormal);
            (tone + 0.01 * noise) as f32
        })
        .collect();
    AudioClip::mono(samples).unwrap()
}

fn train_trace(cfg: &TrainConfig, data: &[AudioClip]) -> Result<(Vec<f64>, f64), String> {
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg.clone()).map_err(err)?;
    let reports = trainer.run(data, None, &mut std::io::sink()).map_err(err)?;
    Ok((reports.iter().map(|r| r.nll).collect(), start.elapsed().as_secs_f64()))
}

fn criterion_6(r: &mut Report) {
    let cfg = TrainConfig { max_iters: 501, seed: 6, ..TrainConfig::default() };
    assert_eq!(cfg.preset, "tiny");
    let data = [training_clip()];
    let first = train_trace(&cfg, &data);
    let outcome = first.as_ref().map_err(Clone::clone).map(|(trace, secs)| {
        let (n0, n500) = (trace[0], trace[500]);
        let ok = n500 <= 0.8 * n0 && *secs < 600.0;
        (ok, format!("nll {n0:.5} -> {n500:.5} (ratio {:.3}, <= 0.8), {secs:.0} s (< 600 s)", n500 / n0))
    });
    r.line(6, "training smoke", outcome);
    let repro = first.and_then(|(a, _)| {
        let (b, _) = train_trace(&cfg, &data)?;
        let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
        Ok((same, format!("{} losses compared bitwise", a.len())))
    });
    r.line(6, "training reproducibility", repro);
}

fn sine(hz: f64, amp: f64, len: usize) -> Vec<f64> {
    (0..len).map(|i| amp * (2.0 * PI * hz * i as f64 / f64::from(SAMPLE_RATE)).sin()).collect()
}

fn criterion_7(r: &mut Report) {
    // Filter centers equally spaced on the HTK mel scale between 0 and Nyquist.
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(f64::from(SAMPLE_RATE) / 2.0);
    let expected = (0..N_MELS)
        .min_by(|&a, &b| {
            let ca = hz(top * (a + 1) as f64 / (N_MELS + 1) as f64);
            let cb = hz(top * (b + 1) as f64 / (N_MELS + 1) as f64);
            (ca - 1000.0).abs().total_cmp(&(cb - 1000.0).abs())
        })
        .unwrap();
    let tone = (|| {
        assert_eq!((N_FFT, HOP), (1024, 256));
        let samples: Vec<f32> = sine(1000.0, 0.5, 16_384).iter().map(|&v| v as f32).collect();
        let m = mel_spectrogram(&AudioClip::mono(samples).map_err(err)?).map_err(err)?;
        let mismatched = (0..m.frames())
            .filter(|&f| (0..N_MELS).max_by(|&a, &b| m.get(a, f).total_cmp(&m.get(b, f))).unwrap() != expected)
            .count();
        Ok::<_, String>((mismatched == 0, format!("{mismatched} of {} frames off bin {expected}", m.frames())))
    })();
    r.line(7, "mel argmax of 1 kHz", tone);
    let zero = (|| {
        let m: MelSpectrogram = mel_spectrogram(&AudioClip::mono(vec![0.0; 8000]).map_err(err)?).map_err(err)?;
        let floor = MEL_FLOOR.ln() as f32;
        let off = m.values().iter().filter(|&&v| v != floor).count();
        Ok::<_, String>((off == 0, format!("{off} of {} values differ from ln(1e-5) = {floor}", m.values().len())))
    })();
    r.line(7, "mel of silence", zero);
}

fn criterion_8(r: &mut Report) {
    let outcome = (|| {
        let target = sine(440.0, 0.8, 16_384);
        let spec = stft_samples(&target).map_err(err)?;
        let mag = spec.magnitude();
        let out = griffin_lim(&mag, spec.frames(), 60).map_err(err)?;
        let reported = out.final_distance().ok_or("no iterations")?;
        let rises = out.distances.windows(2).filter(|w| w[1] > w[0] + 1e-6).count();
        // Scale-free distance of the returned clip's spectrum to the target.
        let samples: Vec<f64> = out.audio.samples().iter().map(|&v| f64::from(v)).collect();
        let est = stft_samples(&samples).map_err(err)?.magnitude();
        let alpha = est.iter().zip(&mag).map(|(e, m)| e * m).sum::<f64>() / est.iter().map(|e| e * e).sum::<f64>();
        let num: f64 = est.iter().zip(&mag).map(|(e, m)| (alpha * e - m).powi(2)).sum();
        let den: f64 = mag.iter().map(|m| m * m).sum();
        let oracle = (num / den).sqrt();
        Ok::<_, String>((
            reported < 0.1 && rises == 0,
            format!(
                "distance {reported:.4} (< 0.1), recomputed {oracle:.4}, {rises} rises over 60 iterations (tol 1e-6)"
            ),
        ))
    })();
    r.line(8, "griffin-lim", outcome);
}

fn criterion_9(r: &mut Report) {
    let setup = scrambled::<f32>(ModelConfig::tiny(), 91);
    let model = match setup {
        Ok(m) => m,
        Err(e) => return r.line(9, "inference", Err(e)),
    };
    let m = benchmark_mel(0.25).unwrap();
    let zero = (|| {
        let run = |seed| synthesize(&model, &SynthesisRequest { mel: m.clone(), sigma: 0.0, seed }).map(|s| s.audio);
        let a = run(1).map_err(err)?;
        let same = a == run(1).map_err(err)? && a == run(2).map_err(err)? && a == run(999).map_err(err)?;
        Ok::<_, String>((same, "seeds 1, 1, 2, 999 give identical audio".to_string()))
    })();
    r.line(9, "zero-sigma determinism", zero);

    let recover = (|| {
        let out = synthesize(&model, &SynthesisRequest { mel: m.clone(), sigma: 0.1, seed: 5 }).map_err(err)?;
        let audio = Tensor::new(&[1, out.audio.len()], out.audio.samples().to_vec()).map_err(err)?;
        let z = model.forward(&audio, &m.to_tensor()).map_err(err)?.z;
        let worst = z.max_abs_diff(&out.z).map_err(err)?;
        Ok::<_, String>((
            worst < 1e-4 && out.clipped_fraction == 0.0,
            format!("max |z' - z| {worst:.2e} (< 1e-4), {:.2}% clamped", 100.0 * out.clipped_fraction),
        ))
    })();
    r.line(9, "latent recovery", recover);

    let bench = (|| {
        let short = benchmark(&model, &benchmark_mel(0.1).map_err(err)?, 5).map_err(err)?;
        let long = benchmark(&model, &benchmark_mel(1.0).map_err(err)?, 5).map_err(err)?;
        let mut consistent = true;
        for b in [&short, &long] {
            let rate = b.samples as f64 / b.seconds / 1000.0;
            consistent &= (b.rate_khz - rate).abs() <= 0.01 * rate;
        }
        Ok::<_, String>((
            consistent && long.rate_khz >= short.rate_khz,
            format!(
                "{} samples at {:.1} kHz, {} samples at {:.1} kHz; rate = samples/seconds within 1%: {consistent}",
                short.samples, short.rate_khz, long.samples, long.rate_khz
            ),
        ))
    })();
    r.line(9, "benchmark", bench);
}

fn criterion_10(r: &mut Report) {
    let outcome = (|| {
        let cfg = TrainConfig { clip_len: 2048, max_iters: 6, seed: 10, plateau_window: 2, ..TrainConfig::default() };
        let data = [training_clip()];
        let mut straight = Trainer::new(cfg.clone()).map_err(err)?;
        straight.run(&data, None, &mut std::io::sink()).map_err(err)?;

        let dir = tempfile::tempdir().map_err(err)?;
        let path = dir.path().join("half.ckpt");
        let mut first = Trainer::new(TrainConfig { max_iters: 3, ..cfg.clone() }).map_err(err)?;
        first.run(&data, None, &mut std::io::sink()).map_err(err)?;
        first.checkpoint().save(&path).map_err(err)?;
        drop(first);
        let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&path).map_err(err)?).map_err(err)?;
        resumed.set_max_iters(6);
        resumed.run(&data, None, &mut std::io::sink()).map_err(err)?;

        let (a, b) = (straight.model().store(), resumed.model().store());
        let mut differing = 0;
        let mut total = 0;
        for id in a.ids() {
            let (x, y) = (a.get(id).data(), b.get(id).data());
            total += x.len();
            differing += x.iter().zip(y).filter(|(p, q)| p.to_bits() != q.to_bits()).count();
        }
        let same = differing == 0 && straight.iteration() == resumed.iteration() && straight.lr() == resumed.lr();
        Ok::<_, String>((same, format!("{differing} of {total} parameters differ after 3 + 3 vs 6 iterations")))
    })();
    r.line(10, "checkpoint resume", outcome);
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut report = Report { failures: 0 };
    let start = Instant::now();
    if run(1) {
        criterion_1(&mut report);
    }
    if run(2) || run(3) {
        criterion_2_3(&mut report);
    }
    if run(4) {
        criterion_4(&mut report);
    }
    if run(5) {
        criterion_5(&mut report);
    }
    if run(6) {
        criterion_6(&mut report);
    }
    if run(7) {
        criterion_7(&mut report);
    }
    if run(8) {
        criterion_8(&mut report);
    }
    if run(9) {
        criterion_9(&mut report);
    }
    if run(10) {
        criterion_10(&mut report);
    }
    println!("{} failing line(s), {:.0} s", report.failures, start.elapsed().as_secs_f64());
}
