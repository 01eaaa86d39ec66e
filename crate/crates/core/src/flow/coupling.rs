use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{concat_channels, Real, Var};
use crate::wn::{wn_apply, WnParams};

/// Affine coupling: the first `split` channels condition a scale and shift
/// of the rest.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub wn: WnParams,
    pub channels: usize,
    pub split: usize,
}

impl Coupling {
    pub fn new(wn: WnParams, channels: usize) -> Self {
        Coupling { wn, channels, split: channels / 2 }
    }

    fn conditioner<T: Real>(&self, bound: &Bound<T>, x_a: &Var<T>, cond: &Var<T>, flow: usize) -> Result<(Var<T>, Var<T>)> {
        let (log_s, t) = wn_apply(bound, &self.wn, x_a, cond)?;
        if !log_s.value().all_finite() {
            return Err(Error::NonFinite { what: "log_s", flow });
        }
        if !t.value().all_finite() {
            return Err(Error::NonFinite { what: "t", flow });
        }
        Ok((log_s, t))
    }

    fn check<T: Real>(&self, x: &Var<T>) -> Result<()> {
        if x.shape().len() != 3 || x.shape()[1] != self.channels || self.channels < 2 {
            return Err(Error::shape(format!(
                "coupling over {} channels got input {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// `(concat(x_a, exp(log_s) * x_b + t), sum(log_s))`.
    pub fn forward<T: Real>(&self, bound: &Bound<T>, x: &Var<T>, cond: &Var<T>, flow: usize) -> Result<(Var<T>, Var<T>)> {
        self.check(x)?;
        let (x_a, x_b) = x.split_channels(self.split)?;
        let (log_s, t) = self.conditioner(bound, &x_a, cond, flow)?;
        let x_b = log_s.exp().mul(&x_b)?.add(&t)?;
        Ok((concat_channels(&[&x_a, &x_b])?, log_s.sum()))
    }

    /// `concat(x_a, (x_b' - t) * exp(-log_s))`.
    pub fn inverse<T: Real>(&self, bound: &Bound<T>, y: &Var<T>, cond: &Var<T>, flow: usize) -> Result<Var<T>> {
        self.check(y)?;
        let (x_a, y_b) = y.split_channels(self.split)?;
        let (log_s, t) = self.conditioner(bound, &x_a, cond, flow)?;
        let x_b = y_b.sub(&t)?.mul(&log_s.neg().exp())?;
        concat_channels(&[&x_a, &x_b])
    }
}
