use crate::error::{Error, Result};
use crate::tensor::{fold_time, unfold_time, Real, Var};

/// `[B, T] -> [B, group, T/group]` with element `(b, c, t) = audio(b, t*group + c)`.
pub fn squeeze<T: Real>(audio: &Var<T>, group: usize) -> Result<Var<T>> {
    let shape = audio.shape();
    if shape.len() != 2 {
        return Err(Error::shape(format!("squeeze expects audio [B, T], got {shape:?}")));
    }
    let (batch, len) = (shape[0], shape[1]);
    if group == 0 || len % group != 0 {
        return Err(Error::Contract(format!("audio length {len} is not divisible by group {group}")));
    }
    fold_time(&audio.reshape(&[batch, 1, len])?, group)
}

/// Inverse of [`squeeze`]: `[B, group, Tg] -> [B, group*Tg]`.
pub fn unsqueeze<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("unsqueeze expects [B, group, Tg], got {shape:?}")));
    }
    let (batch, group, steps) = (shape[0], shape[1], shape[2]);
    unfold_time(x, group)?.reshape(&[batch, group * steps])
}
