use super::gemm::{gemm, MatRef};
use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape<T: Real>(op: &str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: operand shapes differ, {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Elementwise op whose derivative is a function of input and output.
fn unary<T: Real>(
    x: &Var<T>,
    name: &'static str,
    f: impl Fn(T) -> T,
    dydx: impl Fn(T, T) -> T + 'static,
) -> Var<T> {
    let value = x.value().map(f);
    Var::from_op(value, name, &[x], move |g, parents, out| {
        let xs = parents[0].data();
        let grad = g
            .iter()
            .zip(xs.iter().zip(out.data()))
            .map(|(&g, (&x, &y))| g * dydx(x, y))
            .collect();
        vec![Some(grad)]
    })
}

impl<T: Real> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("add", self, other)?;
        let value = Tensor::new(self.shape(), zip_map(self.data(), other.data(), |a, b| a + b))?;
        Ok(Var::from_op(value, "add", &[self, other], |g, _, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", self, other)?;
        let value = Tensor::new(self.shape(), zip_map(self.data(), other.data(), |a, b| a - b))?;
        Ok(Var::from_op(value, "sub", &[self, other], |g, _, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
        }))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", self, other)?;
        let value = Tensor::new(self.shape(), zip_map(self.data(), other.data(), |a, b| a * b))?;
        Ok(Var::from_op(value, "mul", &[self, other], |g, p, _| {
            let ga = p[0].requires_grad().then(|| zip_map(g, p[1].data(), |g, b| g * b));
            let gb = p[1].requires_grad().then(|| zip_map(g, p[0].data(), |g, a| g * a));
            vec![ga, gb]
        }))
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-T::one())
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: T) -> Var<T> {
        unary(self, "scale", |v| v * c, move |_, _| c)
    }

    /// Add a constant.
    pub fn offset(&self, c: T) -> Var<T> {
        unary(self, "offset", |v| v + c, |_, _| T::one())
    }

    pub fn square(&self) -> Var<T> {
        let two = T::one() + T::one();
        unary(self, "square", |v| v * v, move |x, _| two * x)
    }

    pub fn exp(&self) -> Var<T> {
        unary(self, "exp", T::exp, |_, y| y)
    }

    /// Natural logarithm; every element must be positive.
    pub fn log(&self) -> Result<Var<T>> {
        if let Some(bad) = self.data().iter().find(|&&v| v <= T::zero() || v.is_nan()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(unary(self, "log", T::ln, |x, _| x.recip()))
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, "tanh", T::tanh, |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(
            self,
            "sigmoid",
            |v| {
                // Stable for large |v|.
                if v >= T::zero() {
                    (T::one() + (-v).exp()).recip()
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Var<T> {
        let total = self.data().iter().copied().sum();
        Var::from_op(Tensor::scalar(total), "sum", &[self], |g, p, _| {
            vec![Some(vec![g[0]; p[0].value().numel()])]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().reshape(shape)?;
        Ok(Var::from_op(value, "reshape", &[self], |g, _, _| vec![Some(g.to_vec())]))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "narrow axis {axis} range {start}..{} out of shape {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, out)?;
        Ok(Var::from_op(value, "narrow", &[self], move |g, p, _| {
            let mut grad = vec![T::zero(); p[0].value().numel()];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                grad[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(grad)]
        }))
    }

    /// Split `[B, C, T]` into channels `0..at` and `at..C`.
    pub fn split_channels(&self, at: usize) -> Result<(Var<T>, Var<T>)> {
        if self.shape().len() != 3 {
            return Err(Error::shape(format!(
                "split_channels expects [B, C, T], got {:?}",
                self.shape()
            )));
        }
        let channels = self.shape()[1];
        Ok((self.narrow(1, 0, at)?, self.narrow(1, at, channels - at)?))
    }
}

/// Concatenate along `axis`; all other dimensions must agree.
pub fn concat<T: Real>(parts: &[&Var<T>], axis: usize) -> Result<Var<T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::shape(format!("concat axis {axis} on rank {rank}")));
    }
    for p in parts {
        let compatible = p.shape().len() == rank
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape(format!(
                "concat along {axis}: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = sizes.iter().sum();

    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &n) in parts.iter().zip(&sizes) {
            out.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let value = Tensor::new(&shape, out)?;
    Ok(Var::from_op(value, "concat", parts, move |g, p, _| {
        let mut offset = 0;
        let mut grads = Vec::with_capacity(p.len());
        for (part, &n) in p.iter().zip(&sizes) {
            if part.requires_grad() {
                let mut grad = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    grad.extend_from_slice(&g[base..base + n * inner]);
                }
                grads.push(Some(grad));
            } else {
                grads.push(None);
            }
            offset += n;
        }
        grads
    }))
}

/// Concatenate `[B, C_i, T]` tensors along channels.
pub fn concat_channels<T: Real>(parts: &[&Var<T>]) -> Result<Var<T>> {
    concat(parts, 1)
}

/// `[B, C, T] -> [B, C*group, T/group]` with
/// `out[b, c*group + j, s] = x[b, c, s*group + j]`.
pub fn fold_time<T: Real>(x: &Var<T>, group: usize) -> Result<Var<T>> {
    let shape = x.shape();
    if shape.len() != 3 || group == 0 || shape[2] % group != 0 {
        return Err(Error::shape(format!(
            "fold_time: length of {shape:?} is not a multiple of group {group}"
        )));
    }
    let (b, c, t) = (shape[0], shape[1], shape[2]);
    let steps = t / group;
    let permute = move |src: &[T], dst: &mut [T], forward: bool| {
        for bi in 0..b {
            for ci in 0..c {
                for s in 0..steps {
                    for j in 0..group {
                        let unfolded = (bi * c + ci) * t + s * group + j;
                        let folded = (bi * c * group + ci * group + j) * steps + s;
                        if forward {
                            dst[folded] = src[unfolded];
                        } else {
                            dst[unfolded] = src[folded];
                        }
                    }
                }
            }
        }
    };
    let mut out = vec![T::zero(); x.value().numel()];
    permute(x.data(), &mut out, true);
    let value = Tensor::new(&[b, c * group, steps], out)?;
    Ok(Var::from_op(value, "fold_time", &[x], move |g, _, _| {
        let mut grad = vec![T::zero(); g.len()];
        permute(g, &mut grad, false);
        vec![Some(grad)]
    }))
}

/// Inverse of [`fold_time`]: `[B, C*group, S] -> [B, C, S*group]`.
pub fn unfold_time<T: Real>(x: &Var<T>, group: usize) -> Result<Var<T>> {
    let shape = x.shape();
    if shape.len() != 3 || group == 0 || shape[1] % group != 0 {
        return Err(Error::shape(format!(
            "unfold_time: channels of {shape:?} are not a multiple of group {group}"
        )));
    }
    let (b, cg, steps) = (shape[0], shape[1], shape[2]);
    let c = cg / group;
    let t = steps * group;
    let permute = move |src: &[T], dst: &mut [T], forward: bool| {
        for bi in 0..b {
            for ci in 0..c {
                for s in 0..steps {
                    for j in 0..group {
                        let unfolded = (bi * c + ci) * t + s * group + j;
                        let folded = (bi * cg + ci * group + j) * steps + s;
                        if forward {
                            dst[unfolded] = src[folded];
                        } else {
                            dst[folded] = src[unfolded];
                        }
                    }
                }
            }
        }
    };
    let mut out = vec![T::zero(); x.value().numel()];
    permute(x.data(), &mut out, true);
    let value = Tensor::new(&[b, c, t], out)?;
    Ok(Var::from_op(value, "unfold_time", &[x], move |g, _, _| {
        let mut grad = vec![T::zero(); g.len()];
        permute(g, &mut grad, false);
        vec![Some(grad)]
    }))
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, n), &mut out, false);
    let value = Tensor::new(&[m, n], out)?;
    Ok(Var::from_op(value, "matmul", &[a, b], move |g, p, _| {
        let g = MatRef::new(g, m, n);
        let ga = p[0].requires_grad().then(|| {
            let mut ga = vec![T::zero(); m * k];
            gemm(g, MatRef::new(p[1].data(), k, n).t(), &mut ga, false);
            ga
        });
        let gb = p[1].requires_grad().then(|| {
            let mut gb = vec![T::zero(); k * n];
            gemm(MatRef::new(p[0].data(), m, k).t(), g, &mut gb, false);
            gb
        });
        vec![ga, gb]
    }))
}

/// Weight-normalized weight `g[o] * v[o, ..] / ||v[o, ..]||`, one norm per
/// output row (first axis).
pub fn weight_norm<T: Real>(v: &Var<T>, g: &Var<T>) -> Result<Var<T>> {
    let rows = v.shape()[0];
    if g.shape() != [rows] {
        return Err(Error::shape(format!(
            "weight_norm: magnitude {:?} does not match {rows} output rows",
            g.shape()
        )));
    }
    let width = v.value().numel() / rows;
    let norms = row_norms(v.data(), rows, width)?;
    let mut out = Vec::with_capacity(v.value().numel());
    for (o, norm) in norms.iter().enumerate() {
        let scale = g.data()[o] / *norm;
        out.extend(v.data()[o * width..(o + 1) * width].iter().map(|&x| x * scale));
    }
    let value = Tensor::new(v.shape(), out)?;
    Ok(Var::from_op(value, "weight_norm", &[v, g], move |grad, p, _| {
        let (vs, gs) = (p[0].data(), p[1].data());
        let mut gv = p[0].requires_grad().then(|| vec![T::zero(); vs.len()]);
        let mut gg = p[1].requires_grad().then(|| vec![T::zero(); rows]);
        for o in 0..rows {
            let row = &vs[o * width..(o + 1) * width];
            let go = &grad[o * width..(o + 1) * width];
            let inv_norm = norms[o].recip();
            // <grad, v/||v||>
            let proj = row.iter().zip(go).map(|(&x, &d)| x * d).sum::<T>() * inv_norm;
            if let Some(gg) = gg.as_mut() {
                gg[o] = proj;
            }
            if let Some(gv) = gv.as_mut() {
                let k = gs[o] * inv_norm;
                for ((dst, &x), &d) in gv[o * width..(o + 1) * width].iter_mut().zip(row).zip(go) {
                    *dst = k * (d - x * inv_norm * proj);
                }
            }
        }
        vec![gv, gg]
    }))
}

pub(crate) fn row_norms<T: Real>(data: &[T], rows: usize, width: usize) -> Result<Vec<T>> {
    let eps = T::from_f64_lossy(1e-12);
    (0..rows)
        .map(|o| {
            let norm = data[o * width..(o + 1) * width].iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm < eps {
                Err(Error::DegenerateDirection { norm: norm.to_f64_lossy(), channel: o })
            } else {
                Ok(norm)
            }
        })
        .collect()
}
