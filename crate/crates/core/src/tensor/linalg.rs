//! Small dense linear algebra for square channel-mixing matrices.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

/// Matrices with `|det| <= SINGULAR_DET` are treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    // Unit-lower L below the diagonal, U on and above it.
    lu: Vec<T>,
    perm: Vec<usize>,
    sign: T,
}

impl<T: Real> Lu<T> {
    /// Factor a row-major `n x n` matrix. Exactly zero pivots are rejected.
    pub fn new(a: &[T], n: usize) -> Result<Self> {
        if a.len() != n * n || n == 0 {
            return Err(Error::shape(format!("LU of {} values as {n}x{n}", a.len())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("LU of a matrix with non-finite entries".into()));
        }
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&i, &j| {
                    lu[i * n + col].abs().partial_cmp(&lu[j * n + col].abs()).expect("finite matrix")
                })
                .expect("non-empty range");
            if lu[pivot_row * n + col] == T::zero() {
                return Err(Error::Singular { det: 0.0, threshold: SINGULAR_DET });
            }
            if pivot_row != col {
                for k in 0..n {
                    lu.swap(col * n + k, pivot_row * n + k);
                }
                perm.swap(col, pivot_row);
                sign = -sign;
            }
            let pivot = lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] / pivot;
                lu[row * n + col] = factor;
                for k in col + 1..n {
                    lu[row * n + k] = lu[row * n + k] - factor * lu[col * n + k];
                }
            }
        }
        Ok(Lu { n, lu, perm, sign })
    }

    /// `log |det A|` as the sum of log absolute pivots.
    pub fn log_abs_det(&self) -> T {
        (0..self.n).map(|i| self.lu[i * self.n + i].abs().ln()).sum()
    }

    /// Sign of `det A` (+1 or -1).
    pub fn det_sign(&self) -> T {
        (0..self.n).fold(self.sign, |s, i| if self.lu[i * self.n + i] < T::zero() { -s } else { s })
    }

    pub fn det(&self) -> T {
        self.det_sign() * self.log_abs_det().exp()
    }

    /// Error unless `|det A|` exceeds [`SINGULAR_DET`].
    pub fn ensure_invertible(&self) -> Result<()> {
        let log_det = self.log_abs_det().to_f64_lossy();
        if !(log_det > SINGULAR_DET.ln()) {
            return Err(Error::Singular { det: log_det.exp(), threshold: SINGULAR_DET });
        }
        Ok(())
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        let permuted: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&permuted);
        for i in 0..n {
            let s = (0..i).map(|k| self.lu[i * n + k] * b[k]).sum::<T>();
            b[i] = b[i] - s;
        }
        for i in (0..n).rev() {
            let s = (i + 1..n).map(|k| self.lu[i * n + k] * b[k]).sum::<T>();
            b[i] = (b[i] - s) / self.lu[i * n + i];
        }
    }

    /// Row-major inverse.
    pub fn inverse(&self) -> Vec<T> {
        let n = self.n;
        let mut inv = vec![T::zero(); n * n];
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().enumerate().for_each(|(i, v)| *v = if i == j { T::one() } else { T::zero() });
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

fn square_dim<T: Real>(w: &Tensor<T>) -> Result<usize> {
    match w.shape() {
        [n, m] if n == m => Ok(*n),
        s => Err(Error::shape(format!("expected a square matrix, got {s:?}"))),
    }
}

/// `log |det W|` of a square matrix, differentiable (gradient `W^{-T}`).
pub fn logabsdet<T: Real>(w: &Var<T>) -> Result<Var<T>> {
    let n = square_dim(w.value())?;
    let lu = Lu::new(w.data(), n)?;
    lu.ensure_invertible()?;
    let value = Tensor::scalar(lu.log_abs_det());
    let inv = lu.inverse();
    Ok(Var::from_op(value, "logabsdet", &[w], move |g, _, _| {
        let mut grad = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                grad[i * n + j] = g[0] * inv[j * n + i];
            }
        }
        vec![Some(grad)]
    }))
}

/// Householder QR of a row-major `n x n` matrix, normalized so that
/// `R` has a non-negative diagonal (which makes `Q` unique).
pub fn qr<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n);
    let mut r = a.to_vec();
    let mut q: Vec<T> = (0..n * n).map(|i| if i / n == i % n { T::one() } else { T::zero() }).collect();
    for col in 0..n.saturating_sub(1) {
        let norm = (col..n).map(|i| r[i * n + col].powi(2)).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let alpha = if r[col * n + col] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (col..n).map(|i| r[i * n + col]).collect();
        v[0] = v[0] - alpha;
        let vnorm2 = v.iter().map(|&x| x * x).sum::<T>();
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::one() + T::one();
        // R <- H R
        for j in 0..n {
            let dot = (col..n).map(|i| v[i - col] * r[i * n + j]).sum::<T>();
            let f = two * dot / vnorm2;
            for i in col..n {
                r[i * n + j] = r[i * n + j] - f * v[i - col];
            }
        }
        // Q <- Q H
        for i in 0..n {
            let dot = (col..n).map(|k| q[i * n + k] * v[k - col]).sum::<T>();
            let f = two * dot / vnorm2;
            for k in col..n {
                q[i * n + k] = q[i * n + k] - f * v[k - col];
            }
        }
    }
    for j in 0..n {
        if r[j * n + j] < T::zero() {
            for k in 0..n {
                r[j * n + k] = -r[j * n + k];
                q[k * n + j] = -q[k * n + j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            r[i * n + j] = T::zero();
        }
    }
    (q, r)
}

/// Random orthonormal matrix with determinant +1: the Q factor of a
/// standard-normal matrix, first column negated when `det Q = -1`.
pub fn random_rotation<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Tensor<T>> {
    let a: Vec<T> = (0..n * n).map(|_| T::from_f64_lossy(rng.sample(StandardNormal))).collect();
    let (mut q, _) = qr(&a, n);
    if Lu::new(&q, n)?.det_sign() < T::zero() {
        for i in 0..n {
            q[i * n] = -q[i * n];
        }
    }
    Tensor::new(&[n, n], q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_determinant() {
        let lu = Lu::<f64>::new(&[2.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert!((lu.log_abs_det() - 6f64.ln()).abs() < 1e-15);
        assert_eq!(lu.det_sign(), 1.0);
    }

    #[test]
    fn reflection_has_negative_sign() {
        let lu = Lu::<f64>::new(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(lu.det_sign(), -1.0);
        assert!(lu.log_abs_det().abs() < 1e-15);
    }

    #[test]
    fn zero_row_is_singular() {
        let err = Lu::<f64>::new(&[1.0, 2.0, 0.0, 0.0], 2).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn tiny_determinant_fails_invertibility_check() {
        let lu = Lu::<f64>::new(&[1e-7, 0.0, 0.0, 1e-7], 2).unwrap();
        assert!(lu.ensure_invertible().is_err());
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let a: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        let (q, r) = qr(&a, n);
        for i in 0..n {
            assert!(r[i * n + i] >= 0.0);
            for j in 0..n {
                let qr_ij: f64 = (0..n).map(|k| q[i * n + k] * r[k * n + j]).sum();
                assert!((qr_ij - a[i * n + j]).abs() < 1e-12);
                let qqt: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                assert!((qqt - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_is_deterministic_given_seed() {
        let a: Tensor<f64> = random_rotation(8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b: Tensor<f64> = random_rotation(8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(Lu::new(a.data(), 8).unwrap().det_sign(), 1.0);
    }
}
