use std::sync::Mutex;

use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::linalg::{random_rotation, Lu};
use crate::tensor::{conv1d, logabsdet, Real, Tensor, Var};

struct InverseCache<T> {
    version: u64,
    inverse: Tensor<T>,
    log_abs_det: f64,
}

/// Invertible 1x1 convolution: `y[:, :, t] = W x[:, :, t]`.
pub struct InvConv<T> {
    pub weight: ParamId,
    channels: usize,
    cache: Mutex<Option<InverseCache<T>>>,
}

impl<T: Real> Clone for InvConv<T> {
    fn clone(&self) -> Self {
        InvConv { weight: self.weight, channels: self.channels, cache: Mutex::new(None) }
    }
}

impl<T: Real> std::fmt::Debug for InvConv<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InvConv").field("weight", &self.weight).field("channels", &self.channels).finish()
    }
}

impl<T: Real> InvConv<T> {
    /// Register `W` initialized to a random rotation (orthonormal, det +1).
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut R) -> Result<Self> {
        let w = random_rotation::<T, _>(channels, rng)?;
        Ok(Self::from_param(store.add(format!("{name}.weight"), w), channels))
    }

    pub fn from_param(weight: ParamId, channels: usize) -> Self {
        InvConv { weight, channels, cache: Mutex::new(None) }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(W x, B * Tg * log|det W|)`.
    pub fn forward(&self, bound: &Bound<T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let w = bound.var(self.weight);
        let c = self.channels;
        let y = conv1d(x, &w.reshape(&[c, c, 1])?, None, 1, 0)?;
        let positions = x.shape()[0] * x.shape()[2];
        let logdet = logabsdet(w)?.scale(T::from_f64_lossy(positions as f64));
        Ok((y, logdet))
    }

    /// `W^{-1} y`, with the inverse cached until `W` is written.
    pub fn inverse(&self, store: &ParamStore<T>, y: &Var<T>) -> Result<Var<T>> {
        let c = self.channels;
        let inv = self.cached(store)?.0;
        conv1d(y, &Var::constant(inv.reshape(&[c, c, 1])?), None, 1, 0)
    }

    /// `log|det W|` from the cached factorization.
    pub fn log_abs_det(&self, store: &ParamStore<T>) -> Result<f64> {
        Ok(self.cached(store)?.1)
    }

    fn cached(&self, store: &ParamStore<T>) -> Result<(Tensor<T>, f64)> {
        let version = store.version(self.weight);
        let mut slot = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(hit) = slot.as_ref().filter(|c| c.version == version) {
            return Ok((hit.inverse.clone(), hit.log_abs_det));
        }
        let lu = Lu::new(store.get(self.weight).data(), self.channels)?;
        lu.ensure_invertible()?;
        let entry = InverseCache {
            version,
            inverse: Tensor::new(&[self.channels, self.channels], lu.inverse())?,
            log_abs_det: lu.log_abs_det().to_f64_lossy(),
        };
        let out = (entry.inverse.clone(), entry.log_abs_det);
        *slot = Some(entry);
        Ok(out)
    }

    /// Whether a factorization for the current `W` is cached.
    pub fn is_cached(&self, store: &ParamStore<T>) -> bool {
        let version = store.version(self.weight);
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).as_ref().is_some_and(|c| c.version == version)
    }
}
