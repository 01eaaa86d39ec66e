//! Self-checks of a model preset: invertibility, the log-determinant
//! against a dense numerical Jacobian, the likelihood identity, gradients
//! against finite differences and the state at initialization.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{ModelConfig, WaveGlow};
use crate::tensor::linalg::Lu;
use crate::tensor::{gradcheck_sampled, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}, expected f32 or f64"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    /// Round-trip tolerance for this precision.
    pub fn round_trip_tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-4,
            Precision::F64 => 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// Result of one check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub worst: Option<f64>,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn measured(name: impl Into<String>, worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let status = if worst < tolerance { Status::Pass } else { Status::Fail };
        Check { name: name.into(), status, worst: Some(worst), tolerance, detail: detail.into() }
    }

    fn failed(name: impl Into<String>, tolerance: f64, err: &Error) -> Self {
        Check { name: name.into(), status: Status::Fail, worst: None, tolerance, detail: err.to_string() }
    }

    fn skipped(name: impl Into<String>, tolerance: f64, reason: impl Into<String>) -> Self {
        Check { name: name.into(), status: Status::Skipped, worst: None, tolerance, detail: reason.into() }
    }

    fn from_result(name: &str, tolerance: f64, result: Result<(f64, String)>) -> Self {
        match result {
            Ok((worst, detail)) => Check::measured(name, worst, tolerance, detail),
            Err(e) => Check::failed(name, tolerance, &e),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        let worst = self.worst.map_or_else(|| "-".to_string(), |w| format!("{w:.3e}"));
        write!(f, "{status} {:<28} worst {worst:>10} tol {:.0e}", self.name, self.tolerance)?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub config: ModelConfig,
    pub precision: Precision,
    pub seed: u64,
    /// Zero the first row of the first mixing matrix before checking.
    pub corrupt_w: bool,
}

impl VerifyOptions {
    pub fn new(config: ModelConfig, precision: Precision) -> Self {
        VerifyOptions { config, precision, seed: 0, corrupt_w: false }
    }

    /// Audio length of the round-trip check.
    pub fn round_trip_samples(&self) -> usize {
        if self.config.preset == "paper" {
            16_000
        } else {
            2048
        }
    }

    fn dense_checks_feasible(&self) -> bool {
        self.config.preset != "paper"
    }
}

/// Whether every check that ran passed.
pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.status != Status::Fail)
}

/// Scale of the random WN output layers: enough to make every coupling a
/// non-trivial affine map while keeping `log_s` of order 0.1.
pub fn end_layer_scale(config: &ModelConfig) -> f64 {
    0.8 / (config.wn.skip_channels as f64).sqrt()
}

/// Zero the first row of the first mixing matrix.
pub fn corrupt_first_w<T: Real>(model: &mut WaveGlow<T>) {
    let flow = &model.flows()[0];
    let (id, c) = (flow.invconv.weight, flow.invconv.channels());
    model.store_mut().update(id, |w| w[..c].iter_mut().for_each(|v| *v = T::zero()));
}

/// Uniform values in `±scale`.
pub fn random_tensor<T: Real>(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-scale..scale))).expect("positive shape")
}

/// Random log-mel-like conditioning covering `samples`.
pub fn random_mel<T: Real>(config: &ModelConfig, batch: usize, samples: usize, rng: &mut impl Rng) -> Tensor<T> {
    let frames = config.upsample.frames_needed(samples);
    random_tensor(&[batch, config.upsample.channels, frames], 2.0, rng)
}

/// A model with random WN output layers, as used by the invertibility checks.
pub fn random_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<WaveGlow<T>> {
    let mut model = WaveGlow::new(config.clone(), seed)?;
    model.randomize_end_layers(end_layer_scale(config), seed.wrapping_add(1));
    Ok(model)
}

/// `max |inverse(forward(x)) - x|` on random audio.
pub fn round_trip_error<T: Real>(model: &WaveGlow<T>, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let audio = random_tensor::<T>(&[1, samples], 0.5, &mut rng);
    let mel = random_mel::<T>(model.config(), 1, samples, &mut rng);
    let out = model.forward(&audio, &mel)?;
    let back = model.inverse(&out.z, &mel)?;
    back.max_abs_diff(&audio)
}

/// Worst `||W W^T - I||_inf` entry and worst `|log|det W||` over all flows.
pub fn orthonormality<T: Real>(model: &WaveGlow<T>) -> Result<(f64, f64)> {
    let mut gram_err = 0.0f64;
    let mut logdet_err = 0.0f64;
    for flow in model.flows() {
        let n = flow.invconv.channels();
        let w = model.store().get(flow.invconv.weight).to_f64_vec();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| w[i * n + k] * w[j * n + k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                gram_err = gram_err.max((dot - target).abs());
            }
        }
        let lu = Lu::new(&w, n)?;
        logdet_err = logdet_err.max(lu.log_abs_det().abs());
    }
    Ok((gram_err, logdet_err))
}

/// `log|det dz/dx|` from a central-difference Jacobian of the whole model.
pub fn numeric_log_det(model: &WaveGlow<f64>, audio: &Tensor<f64>, mel: &Tensor<f64>, eps: f64) -> Result<f64> {
    let n = audio.numel();
    let mut jac = vec![0.0; n * n];
    for j in 0..n {
        let mut plus = audio.clone();
        plus.data_mut()[j] += eps;
        let mut minus = audio.clone();
        minus.data_mut()[j] -= eps;
        let zp = model.forward(&plus, mel)?.z;
        let zm = model.forward(&minus, mel)?.z;
        for i in 0..n {
            jac[i * n + j] = (zp.data()[i] - zm.data()[i]) / (2.0 * eps);
        }
    }
    Ok(Lu::new(&jac, n)?.log_abs_det())
}

/// Run every check for the configured preset and precision.
pub fn run(opts: &VerifyOptions) -> Vec<Check> {
    match opts.precision {
        Precision::F32 => run_in::<f32>(opts),
        Precision::F64 => run_in::<f64>(opts),
    }
}

fn prepare<T: Real>(opts: &VerifyOptions, model: &mut WaveGlow<T>) {
    if opts.corrupt_w {
        corrupt_first_w(model);
    }
}

fn run_in<T: Real>(opts: &VerifyOptions) -> Vec<Check> {
    let mut checks = Vec::new();
    let seed = opts.seed;
    let tol_rt = opts.precision.round_trip_tolerance();

    let init = WaveGlow::<T>::new(opts.config.clone(), seed).map(|mut m| {
        prepare(opts, &mut m);
        m
    });
    match &init {
        Ok(model) => {
            match orthonormality(model) {
                Ok((gram, logdet)) => {
                    checks.push(Check::measured("init: |W W^T - I|", gram, 1e-5, ""));
                    checks.push(Check::measured("init: |log|det W||", logdet, 1e-5, ""));
                }
                Err(e) => checks.push(Check::failed("init: orthonormal W", 1e-5, &e)),
            }
            let samples = 2048;
            let isometry = (|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
                let audio = random_tensor::<T>(&[1, samples], 0.5, &mut rng);
                let mel = random_mel::<T>(&opts.config, 1, samples, &mut rng);
                let z = model.forward(&audio, &mel)?.z;
                let ratio = z.l2_norm() / audio.l2_norm();
                Ok(((ratio - 1.0).abs(), format!("||z||/||x|| = {ratio:.8}")))
            })();
            checks.push(Check::from_result("init: isometry", 1e-4, isometry));
        }
        Err(e) => checks.push(Check::failed("init: construction", 1e-5, e)),
    }
    drop(init);

    let samples = opts.round_trip_samples();
    let start = Instant::now();
    let round_trip = random_model::<T>(&opts.config, seed).and_then(|mut model| {
        prepare(opts, &mut model);
        let err = round_trip_error(&model, samples, seed.wrapping_add(3))?;
        Ok((err, format!("T = {samples}, {:.1} s", start.elapsed().as_secs_f64())))
    });
    checks.push(Check::from_result(&format!("round trip ({})", opts.precision.name()), tol_rt, round_trip));

    if !opts.dense_checks_feasible() {
        let reason = "skipped: dimensionality too large for dense finite differences";
        checks.push(Check::skipped("jacobian log-det", 1e-4, reason));
        checks.push(Check::skipped("likelihood identity", 1e-4, reason));
        checks.push(Check::skipped("gradcheck", 1e-3, reason));
        return checks;
    }

    // Dense oracles always run in 64-bit on a short clip.
    let dense = (|| -> Result<_> {
        let mut model = random_model::<f64>(&opts.config, seed.wrapping_add(11))?;
        prepare(opts, &mut model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(12));
        let samples = 4 * opts.config.group;
        let audio = random_tensor::<f64>(&[1, samples], 1.0, &mut rng);
        let mel = random_mel::<f64>(&opts.config, 1, samples, &mut rng);
        Ok((model, audio, mel))
    })();
    let (model, audio, mel) = match dense {
        Ok(v) => v,
        Err(e) => {
            checks.push(Check::failed("jacobian log-det", 1e-4, &e));
            return checks;
        }
    };

    let oracle = (|| -> Result<_> {
        let out = model.forward(&audio, &mel)?;
        let numeric = numeric_log_det(&model, &audio, &mel, 1e-6)?;
        Ok((out, numeric))
    })();
    match oracle {
        Ok((out, numeric)) => {
            let analytic = out.sum_log_s + out.sum_logdet_w;
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-3);
            checks.push(Check::measured(
                "jacobian log-det (f64)",
                rel,
                1e-4,
                format!("analytic {analytic:.8} numeric {numeric:.8}, dim {}", audio.numel()),
            ));
            for sigma in [0.5f64.sqrt(), 1.0] {
                let identity = out.log_likelihood(sigma).map(|lp| {
                    let n = out.z.numel() as f64;
                    let log_normal = -out.z.data().iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma * sigma)
                        - 0.5 * n * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
                    let expected = log_normal + numeric;
                    ((lp - expected).abs() / expected.abs().max(1.0), format!("sigma {sigma:.4}: log p {lp:.8}"))
                });
                checks.push(Check::from_result(&format!("likelihood identity s={sigma:.3}"), 1e-4, identity));
            }
        }
        Err(e) => checks.push(Check::failed("jacobian log-det (f64)", 1e-4, &e)),
    }

    for (group, ids) in model.param_groups() {
        let inputs: Vec<Tensor<f64>> = ids.iter().map(|&id| model.store().get(id).clone()).collect();
        let report = gradcheck_sampled(
            |vars| {
                let mut bound = model.store().bind_constants();
                for (&id, v) in ids.iter().zip(vars) {
                    bound.replace(id, v.clone())?;
                }
                model
                    .forward_graph(&bound, &Var::constant(audio.clone()), &Var::constant(mel.clone()))?
                    .nll(0.5f64.sqrt())
            },
            &inputs,
            1e-6,
            4,
            seed.wrapping_add(13),
        )
        .map(|r| (r.max_rel_error, format!("{} coordinates, worst analytic {:.3e} numeric {:.3e}", r.coordinates, r.analytic, r.numeric)));
        checks.push(Check::from_result(&format!("gradcheck {group} (f64)"), 1e-3, report));
    }
    checks
}
