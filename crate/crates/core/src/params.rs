//! Named parameter storage shared by the model, the optimizer and the
//! checkpoint format.

use crate::error::{Error, Result};
use crate::tensor::{row_norms, Real, Tensor, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    value: Tensor<T>,
    version: u64,
}

impl<T: Real> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    /// Incremented on every write; caches keyed on it go stale on update.
    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Ordered collection of named tensors. Order is fixed at construction and
/// defines the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value, version: 0 });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn version(&self, id: ParamId) -> u64 {
        self.params[id.0].version
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replace a parameter's value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {:?}, new value has {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        p.version += 1;
        Ok(())
    }

    /// Mutate a parameter in place.
    pub fn update(&mut self, id: ParamId, f: impl FnOnce(&mut [T])) {
        let p = &mut self.params[id.0];
        f(p.value.data_mut());
        p.version += 1;
    }

    /// One graph leaf per parameter, tracked unless gradients are disabled.
    pub fn bind(&self) -> Bound<T> {
        Bound { vars: self.params.iter().map(|p| Var::param(p.value.clone())).collect() }
    }

    /// One untracked graph leaf per parameter.
    pub fn bind_constants(&self) -> Bound<T> {
        Bound { vars: self.params.iter().map(|p| Var::constant(p.value.clone())).collect() }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), version: 0 })
                .collect(),
        }
    }
}

/// Parameters of a store as graph variables for one evaluation.
#[derive(Clone, Debug)]
pub struct Bound<T: Real> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Bound<T> {
    pub fn var(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    /// Substitute the variable used for one parameter.
    pub fn replace(&mut self, id: ParamId, var: Var<T>) -> Result<()> {
        let old = &self.vars[id.0];
        if old.shape() != var.shape() {
            return Err(Error::shape(format!(
                "replacement {:?} does not match parameter shape {:?}",
                var.shape(),
                old.shape()
            )));
        }
        self.vars[id.0] = var;
        Ok(())
    }

    /// Accumulated gradient of every parameter, zeros where none flowed.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape()).expect("parameter shape")))
            .collect()
    }
}

/// A weight stored as direction `v` and per-output-channel magnitude `g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormedWeight {
    pub v: ParamId,
    pub g: ParamId,
}

/// Split a weight `[out, ...]` into `(v, g)` with `g = ||v||` per output
/// channel, so `g * v / ||v||` reproduces it exactly.
pub fn apply_weight_norm<T: Real>(weight: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let rows = weight.dim(0);
    let width = weight.numel() / rows.max(1);
    let norms = row_norms(weight.data(), rows, width)?;
    Ok((weight.clone(), Tensor::new(&[rows], norms)?))
}

impl<T: Real> ParamStore<T> {
    /// Register a weight-normalized weight as `{name}.v` and `{name}.g`.
    pub fn add_normed(&mut self, name: &str, weight: Tensor<T>) -> Result<NormedWeight> {
        let (v, g) = apply_weight_norm(&weight)?;
        Ok(NormedWeight { v: self.add(format!("{name}.v"), v), g: self.add(format!("{name}.g"), g) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::weight_norm;

    #[test]
    fn weight_norm_init_reproduces_weight() {
        let w = Tensor::<f64>::from_f64(&[2, 3], &[3.0, 0.0, 4.0, -1.0, 2.0, 2.0]).unwrap();
        let mut store = ParamStore::new();
        let nw = store.add_normed("w", w.clone()).unwrap();
        assert_eq!(store.get(nw.g).data(), &[5.0, 3.0]);
        let b = store.bind_constants();
        let eff = weight_norm(b.var(nw.v), b.var(nw.g)).unwrap();
        assert!(eff.value().max_abs_diff(&w).unwrap() < 1e-15);
    }

    #[test]
    fn zero_direction_is_degenerate() {
        let w = Tensor::<f64>::zeros(&[2, 2]).unwrap();
        assert!(matches!(apply_weight_norm(&w), Err(Error::DegenerateDirection { channel: 0, .. })));
    }

    #[test]
    fn writes_bump_version() {
        let mut store = ParamStore::new();
        let id = store.add("a", Tensor::<f32>::zeros(&[2]).unwrap());
        assert_eq!(store.version(id), 0);
        store.update(id, |d| d[0] = 1.0);
        store.set(id, Tensor::ones(&[2]).unwrap()).unwrap();
        assert_eq!(store.version(id), 2);
        assert!(store.set(id, Tensor::ones(&[3]).unwrap()).is_err());
    }
}
