use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Moment estimates of the Adam optimizer, one pair per parameter in store
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like every parameter of `store`.
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> =
            store.ids().map(|id| Tensor::zeros(store.get(id).shape()).expect("parameter shape")).collect();
        AdamState { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Check that the moments mirror the parameters of `store`.
    pub fn check(&self, store: &ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::Format(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        for (id, (m, v)) in store.ids().zip(self.m.iter().zip(&self.v)) {
            let shape = store.get(id).shape();
            if m.shape() != shape || v.shape() != shape {
                return Err(Error::Format(format!(
                    "moments of {} have shapes {:?}/{:?}, parameter has {shape:?}",
                    store.name(id),
                    m.shape(),
                    v.shape()
                )));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every parameter.
///
/// If any gradient holds a non-finite value, nothing is updated and the
/// offending parameter is named in the error.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    state.check(store)?;
    if grads.len() != store.len() {
        return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), store.len())));
    }
    let ids: Vec<_> = store.ids().collect();
    for (&id, g) in ids.iter().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient { param: store.name(id).to_string() });
        }
    }

    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (&id, g)) in ids.iter().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        store.update(id, |p| {
            for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let g = g.to_f64_lossy();
                let m_new = b1 * m.to_f64_lossy() + (1.0 - b1) * g;
                let v_new = b2 * v.to_f64_lossy() + (1.0 - b2) * g * g;
                *m = T::from_f64_lossy(m_new);
                *v = T::from_f64_lossy(v_new);
                let m_hat = m_new / c1;
                let v_hat = v_new / c2;
                *p = T::from_f64_lossy(p.to_f64_lossy() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        });
    }
    Ok(())
}
