use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use waveglow::signal::{load_wav, read_mel, save_wav, AudioClip, HOP, MEL_FLOOR};

fn waveglow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waveglow"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_wav(path: &Path, samples: Vec<f32>) {
    save_wav(path, &AudioClip::mono(samples).unwrap()).unwrap();
}

fn tone(n: usize) -> Vec<f32> {
    (0..n).map(|i| (0.4 * (i as f64 * 0.05).sin()) as f32).collect()
}

/// A micro-preset training directory with one clip and its config.
fn micro_setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    write_wav(&data.join("a.wav"), tone(4096));
    let cfg = dir.join("train.cfg");
    fs::write(&cfg, "# desk run\npreset = micro\nclip_len = 2048\nbatch = 1\nseed = 3\n").unwrap();
    (data, cfg)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&waveglow(&["--help"])), 0);
    assert_eq!(code(&waveglow(&["--version"])), 0);
    assert_eq!(code(&waveglow(&["synth", "--help"])), 0);
}

#[test]
fn bad_usage_exits_one() {
    assert_eq!(code(&waveglow(&[])), 1);
    assert_eq!(code(&waveglow(&["bogus"])), 1);
    assert_eq!(code(&waveglow(&["mel", "--in", "x.wav"])), 1);
    assert_eq!(code(&waveglow(&["synth", "--ckpt", "a", "--mel", "b", "--out", "c", "--sigma", "abc"])), 1);
    assert_eq!(code(&waveglow(&["verify", "--preset", "huge"])), 1);
    assert_eq!(code(&waveglow(&["verify", "--mode", "f16"])), 1);
    assert_eq!(code(&waveglow(&["bench", "--preset", "micro", "--reps", "2"])), 1);
}

#[test]
fn mel_of_silence_sits_on_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("zero.wav");
    let mel = dir.path().join("zero.mel");
    write_wav(&wav, vec![0.0; 5000]);
    let out = waveglow(&["mel", "--in", p(&wav), "--out", p(&mel)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = read_mel(&mel).unwrap();
    assert_eq!(m.n_mels(), 80);
    assert_eq!(m.frames(), 1 + 5000 / HOP);
    let floor = MEL_FLOOR.ln() as f32;
    assert!(m.values().iter().all(|&v| v == floor));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = waveglow(&["mel", "--in", p(&dir.path().join("nope.wav")), "--out", p(&dir.path().join("m"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.wav"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "batch = 2\nlearning_rate = 1e-3\n").unwrap();
    let out = waveglow(&["verify", "--preset", "micro", "--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn zero_iterations_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = micro_setup(dir.path());
    let out_dir = dir.path().join("run");
    let out = waveglow(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out_dir), "--max-iters", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<String> =
        fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["ckpt-000000.ckpt", "metrics.tsv"]);
    assert_eq!(fs::read_to_string(out_dir.join("metrics.tsv")).unwrap(), "");
}

#[test]
fn train_then_resume_appends_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = micro_setup(dir.path());
    let run = dir.path().join("run");
    let out = waveglow(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&run), "--max-iters", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = run.join("ckpt-000002.ckpt");
    assert!(ckpt.exists());
    let out = waveglow(&["train", "--data", p(&data), "--resume", p(&ckpt), "--out", p(&run), "--max-iters", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = fs::read_to_string(run.join("metrics.tsv")).unwrap();
    let iters: Vec<&str> = metrics.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(iters, ["0", "1", "2"]);
    assert!(metrics.lines().all(|l| l.split('\t').count() == 4));
}

#[test]
fn synthesis_at_zero_sigma_ignores_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = micro_setup(dir.path());
    let run = dir.path().join("run");
    let out = waveglow(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&run), "--max-iters", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = run.join("ckpt-000000.ckpt");
    let mel = dir.path().join("a.mel");
    assert_eq!(code(&waveglow(&["mel", "--in", p(&data.join("a.wav")), "--out", p(&mel)])), 0);

    let synth = |name: &str, sigma: &str, seed: &str| {
        let wav = dir.path().join(name);
        let out = waveglow(&[
            "synth", "--ckpt", p(&ckpt), "--mel", p(&mel), "--sigma", sigma, "--seed", seed, "--out", p(&wav),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read(&wav).unwrap()
    };
    let a = synth("a.wav", "0", "1");
    let b = synth("b.wav", "0", "99");
    assert_eq!(a, b);
    let c = synth("c.wav", "0.6", "5");
    let d = synth("d.wav", "0.6", "5");
    assert_eq!(c, d);
    assert_ne!(a, c);

    let frames = read_mel(&mel).unwrap().frames();
    let clip = load_wav(dir.path().join("a.wav")).unwrap();
    assert_eq!(clip.len(), frames * HOP);
}

#[test]
fn synthesis_rejects_a_params_free_path() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let mel = dir.path().join("m.mel");
    let wav = dir.path().join("z.wav");
    write_wav(&wav, vec![0.0; 1024]);
    assert_eq!(code(&waveglow(&["mel", "--in", p(&wav), "--out", p(&mel)])), 0);
    let out = waveglow(&["synth", "--ckpt", p(&junk), "--mel", p(&mel), "--out", p(&dir.path().join("o.wav"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn griffin_lim_writes_audio() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("t.wav");
    let rec = dir.path().join("r.wav");
    write_wav(&wav, tone(4096));
    let out = waveglow(&["griffinlim", "--in", p(&wav), "--iters", "5", "--out", p(&rec), "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("spectral distance"));
    assert!(!load_wav(&rec).unwrap().is_empty());
}

#[test]
fn verify_passes_on_micro_and_fails_on_a_singular_mixing_matrix() {
    let ok = waveglow(&["verify", "--preset", "micro", "--mode", "f64"]);
    assert_eq!(code(&ok), 0, "{}{}", String::from_utf8_lossy(&ok.stdout), stderr(&ok));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 5, "{stdout}");

    let bad = waveglow(&["verify", "--preset", "micro", "--corrupt-w"]);
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = waveglow(&[
        "bench", "--preset", "micro", "--seconds", "0.1", "--reps", "3", "--out", p(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let kv = fs::read_to_string(dir.path().join("bench-micro-0.1s.kv")).unwrap();
    assert!(kv.contains("preset=micro"));
    assert!(kv.lines().any(|l| l.starts_with("rate_khz=")));
    assert!(dir.path().join("bench-micro-0.1s.txt").exists());
}
