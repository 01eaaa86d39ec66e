use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{no_grad, Tensor, Var};
use crate::error::{Error, Result};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Check every coordinate of every input; returns the worst relative error.
///
/// The error of a coordinate is `|analytic - numeric| / max(|analytic|,
/// |numeric|, floor)`, where `floor` is a thousand times the rounding
/// resolution of the difference quotient at the loss value.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    Ok(check(&f, inputs, eps, &all)?.max_rel_error)
}

/// Like [`gradcheck`] but probes at most `per_input` coordinates of each
/// input, chosen reproducibly from `seed`.
pub fn gradcheck_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.numel();
            if n <= per_input {
                (0..n).collect()
            } else {
                let mut idx = sample(&mut rng, n, per_input).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();
    check(&f, inputs, eps, &picks)
}

fn check<F>(f: &F, inputs: &[Tensor<f64>], eps: f64, picks: &[Vec<usize>]) -> Result<GradCheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let leaves: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    let loss = f(&leaves)?;
    if !loss.value().is_scalar() {
        return Err(Error::Contract(format!("gradcheck needs a scalar function, got {:?}", loss.shape())));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().map_or_else(|| vec![0.0; l.value().numel()], Tensor::into_vec))
        .collect();

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        no_grad(|| {
            let vars: Vec<Var<f64>> = probe.iter().cloned().map(Var::constant).collect();
            Ok(f(&vars)?.value().item())
        })
    };

    // Central differences cannot resolve gradients much below this; smaller
    // ones are compared against it instead of against themselves.
    let floor = (1e3 * f64::EPSILON * loss.value().item().abs().max(1.0) / eps).max(1e-8);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, idx) in picks.iter().enumerate() {
        for &i in idx {
            let original = inputs[which].data()[i];
            probe[which].data_mut()[i] = original + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = original - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[which][i];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.coordinates == 1 {
                report = GradCheckReport { max_rel_error: rel, worst: (which, i), analytic: a, numeric, ..report };
            }
        }
    }
    Ok(report)
}
