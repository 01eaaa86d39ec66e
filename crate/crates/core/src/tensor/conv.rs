use super::gemm::{gemm, MatRef};
use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    len_in: usize,
    len_out: usize,
    dilation: usize,
    padding: usize,
}

impl ConvGeom {
    /// Columns `[c_in * kernel, len_out]` of one batch item.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        for ci in 0..self.c_in {
            let row_in = &x[ci * self.len_in..(ci + 1) * self.len_in];
            for k in 0..self.kernel {
                let row = &mut cols[(ci * self.kernel + k) * self.len_out..][..self.len_out];
                let shift = (k * self.dilation) as isize - self.padding as isize;
                for (t, dst) in row.iter_mut().enumerate() {
                    let src = t as isize + shift;
                    *dst = if src >= 0 && (src as usize) < self.len_in {
                        row_in[src as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    /// Scatter-add of columns back onto one input item.
    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        for ci in 0..self.c_in {
            let row_in = &mut x[ci * self.len_in..(ci + 1) * self.len_in];
            for k in 0..self.kernel {
                let row = &cols[(ci * self.kernel + k) * self.len_out..][..self.len_out];
                let shift = (k * self.dilation) as isize - self.padding as isize;
                for (t, &v) in row.iter().enumerate() {
                    let src = t as isize + shift;
                    if src >= 0 && (src as usize) < self.len_in {
                        row_in[src as usize] = row_in[src as usize] + v;
                    }
                }
            }
        }
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.padding == 0
    }
}

/// 1-D cross-correlation of `[B, Cin, T]` with `[Cout, Cin, K]`, producing
/// `[B, Cout, T + 2*padding - dilation*(K-1)]`.
pub fn conv1d<T: Real>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    dilation: usize,
    padding: usize,
) -> Result<Var<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 3 || ws.len() != 3 {
        return Err(Error::shape(format!(
            "conv1d expects input [B, Cin, T] and weight [Cout, Cin, K], got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(format!(
            "conv1d: input has {} channels but weight expects {}",
            xs[1], ws[1]
        )));
    }
    if dilation == 0 {
        return Err(Error::shape("conv1d: dilation must be positive"));
    }
    let span = dilation * (ws[2] - 1) + 1;
    if xs[2] + 2 * padding < span {
        return Err(Error::shape(format!(
            "conv1d: padded length {} shorter than dilated kernel span {span}",
            xs[2] + 2 * padding
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "conv1d: bias {:?} does not match {} output channels",
                b.shape(),
                ws[0]
            )));
        }
    }
    let geom = ConvGeom {
        batch: xs[0],
        c_in: xs[1],
        c_out: ws[0],
        kernel: ws[2],
        len_in: xs[2],
        len_out: xs[2] + 2 * padding - (span - 1),
        dilation,
        padding,
    };
    let ck = geom.c_in * geom.kernel;
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![T::zero(); geom.batch * geom.c_out * geom.len_out];
    let mut cols = if geom.pointwise() { Vec::new() } else { vec![T::zero(); ck * geom.len_out] };
    for b in 0..geom.batch {
        let x_b = &x[b * geom.c_in * geom.len_in..][..geom.c_in * geom.len_in];
        let out_b = &mut out[b * geom.c_out * geom.len_out..][..geom.c_out * geom.len_out];
        let cols_ref = if geom.pointwise() {
            x_b
        } else {
            geom.im2col(x_b, &mut cols);
            &cols
        };
        gemm(
            MatRef::new(w, geom.c_out, ck),
            MatRef::new(cols_ref, ck, geom.len_out),
            out_b,
            false,
        );
        if let Some(bias) = bias {
            for (row, &bv) in out_b.chunks_exact_mut(geom.len_out).zip(bias.data()) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    let value = Tensor::new(&[geom.batch, geom.c_out, geom.len_out], out)?;

    let mut parents = vec![input, weight];
    parents.extend(bias);
    Ok(Var::from_op(value, "conv1d", &parents, move |g, p, _| {
        let (x, w) = (p[0].data(), p[1].data());
        let want_x = p[0].requires_grad();
        let want_w = p[1].requires_grad();
        let want_b = p.get(2).is_some_and(|b| b.requires_grad());
        let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
        let mut gw = want_w.then(|| vec![T::zero(); w.len()]);
        let mut gb = want_b.then(|| vec![T::zero(); geom.c_out]);
        let mut cols = if geom.pointwise() { Vec::new() } else { vec![T::zero(); ck * geom.len_out] };
        for b in 0..geom.batch {
            let g_b = MatRef::new(&g[b * geom.c_out * geom.len_out..][..geom.c_out * geom.len_out], geom.c_out, geom.len_out);
            if let Some(gb) = gb.as_mut() {
                for (acc, row) in gb.iter_mut().zip(g_b.data.chunks_exact(geom.len_out)) {
                    *acc = *acc + row.iter().copied().sum::<T>();
                }
            }
            let x_b = &x[b * geom.c_in * geom.len_in..][..geom.c_in * geom.len_in];
            if let Some(gw) = gw.as_mut() {
                let cols_ref = if geom.pointwise() {
                    x_b
                } else {
                    geom.im2col(x_b, &mut cols);
                    &cols
                };
                gemm(g_b, MatRef::new(cols_ref, ck, geom.len_out).t(), gw, true);
            }
            if let Some(gx) = gx.as_mut() {
                let gx_b = &mut gx[b * geom.c_in * geom.len_in..][..geom.c_in * geom.len_in];
                if geom.pointwise() {
                    gemm(MatRef::new(w, geom.c_out, ck).t(), g_b, gx_b, false);
                } else {
                    gemm(MatRef::new(w, geom.c_out, ck).t(), g_b, &mut cols, false);
                    geom.col2im(&cols, gx_b);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if p.len() == 3 {
            grads.push(gb);
        }
        grads
    }))
}

/// Transposed 1-D convolution of `[B, Cin, F]` with `[Cin, Cout, K]` at
/// `stride`, producing `[B, Cout, (F-1)*stride + K]`.
pub fn conv_transpose1d<T: Real>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    stride: usize,
) -> Result<Var<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] {
        return Err(Error::shape(format!(
            "conv_transpose1d expects input [B, Cin, F] and weight [Cin, Cout, K], got {xs:?} and {ws:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::shape("conv_transpose1d: stride must be positive"));
    }
    let (batch, c_in, frames) = (xs[0], xs[1], xs[2]);
    let (c_out, kernel) = (ws[1], ws[2]);
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv_transpose1d: bias {:?} does not match {c_out} output channels",
                b.shape()
            )));
        }
    }
    let len_out = (frames - 1) * stride + kernel;
    let rows = c_out * kernel;
    let (x, w) = (input.data(), weight.data());

    let mut out = vec![T::zero(); batch * c_out * len_out];
    let mut cols = vec![T::zero(); rows * frames];
    for b in 0..batch {
        let x_b = MatRef::new(&x[b * c_in * frames..][..c_in * frames], c_in, frames);
        // cols[(co, k), f] = sum_ci w[ci, co, k] x[ci, f]
        gemm(MatRef::new(w, c_in, rows).t(), x_b, &mut cols, false);
        let out_b = &mut out[b * c_out * len_out..][..c_out * len_out];
        for co in 0..c_out {
            let dst = &mut out_b[co * len_out..(co + 1) * len_out];
            for k in 0..kernel {
                let src = &cols[(co * kernel + k) * frames..][..frames];
                for (f, &v) in src.iter().enumerate() {
                    let t = f * stride + k;
                    dst[t] = dst[t] + v;
                }
            }
            if let Some(bias) = bias {
                let bv = bias.data()[co];
                dst.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    let value = Tensor::new(&[batch, c_out, len_out], out)?;

    let mut parents = vec![input, weight];
    parents.extend(bias);
    Ok(Var::from_op(value, "conv_transpose1d", &parents, move |g, p, _| {
        let (x, w) = (p[0].data(), p[1].data());
        let mut gx = p[0].requires_grad().then(|| vec![T::zero(); x.len()]);
        let mut gw = p[1].requires_grad().then(|| vec![T::zero(); w.len()]);
        let mut gb = p.get(2).is_some_and(|b| b.requires_grad()).then(|| vec![T::zero(); c_out]);
        let mut gcols = vec![T::zero(); rows * frames];
        for b in 0..batch {
            let g_b = &g[b * c_out * len_out..][..c_out * len_out];
            for co in 0..c_out {
                let src = &g_b[co * len_out..(co + 1) * len_out];
                if let Some(gb) = gb.as_mut() {
                    gb[co] = gb[co] + src.iter().copied().sum::<T>();
                }
                for k in 0..kernel {
                    let dst = &mut gcols[(co * kernel + k) * frames..][..frames];
                    for (f, d) in dst.iter_mut().enumerate() {
                        *d = src[f * stride + k];
                    }
                }
            }
            let gcols_m = MatRef::new(&gcols[..], rows, frames);
            if let Some(gx) = gx.as_mut() {
                gemm(MatRef::new(w, c_in, rows), gcols_m, &mut gx[b * c_in * frames..][..c_in * frames], false);
            }
            if let Some(gw) = gw.as_mut() {
                let x_b = MatRef::new(&x[b * c_in * frames..][..c_in * frames], c_in, frames);
                gemm(x_b, gcols_m.t(), gw, true);
            }
        }
        let mut grads = vec![gx, gw];
        if p.len() == 3 {
            grads.push(gb);
        }
        grads
    }))
}
