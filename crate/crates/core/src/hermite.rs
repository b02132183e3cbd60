//! Normalized Hermite polynomials `H_n = He_n / n!`.
//!
//! With this normalization `exp(t x - t^2 / 2) = sum_n t^n H_n(x)`,
//! `H_n' = H_{n-1}` and the products `sqrt(a!) prod_j H_{a_j}` are orthonormal
//! under the standard Gaussian measure. Every chaos formula in this crate
//! assumes this convention.

use crate::error::{Error, Result};

/// Largest degree accepted by the checked entry points.
pub const MAX_DEGREE: usize = 16;

/// A validated polynomial degree, `n <= MAX_DEGREE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HermiteDegree(usize);

impl HermiteDegree {
    pub fn new(n: usize) -> Result<Self> {
        if n > MAX_DEGREE {
            return Err(Error::DegreeTooLarge {
                degree: n,
                cap: MAX_DEGREE,
            });
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for HermiteDegree {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        Self::new(n)
    }
}

/// `H_n(x)` through the recurrence `(n+1) H_{n+1} = x H_n - H_{n-1}`.
pub fn hermite(n: HermiteDegree, x: f64) -> f64 {
    let n = n.get();
    if n == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for k in 1..n {
        let next = (x * cur - prev) / (k + 1) as f64;
        prev = cur;
        cur = next;
    }
    cur
}

/// `[H_0(x), ..., H_{n_max}(x)]` in one recurrence pass.
pub fn hermite_all(n_max: HermiteDegree, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max.get() + 1];
    fill_hermite(x, &mut out);
    out
}

/// Checked convenience wrapper over [`hermite`].
pub fn hermite_eval(n: usize, x: f64) -> Result<f64> {
    Ok(hermite(HermiteDegree::new(n)?, x))
}

/// Checked convenience wrapper over [`hermite_all`].
pub fn hermite_eval_all(n_max: usize, x: f64) -> Result<Vec<f64>> {
    Ok(hermite_all(HermiteDegree::new(n_max)?, x))
}

/// Writes `H_k(x)` into `out[k]` for `k < out.len()`. Unchecked hot-loop variant.
#[inline]
pub fn fill_hermite(x: f64, out: &mut [f64]) {
    let len = out.len();
    if len == 0 {
        return;
    }
    out[0] = 1.0;
    if len == 1 {
        return;
    }
    out[1] = x;
    for k in 1..len - 1 {
        out[k + 1] = (x * out[k] - out[k - 1]) / (k + 1) as f64;
    }
}

/// Writes `rho^{k/2} H_k(x)` into `out[k]`, with `0^0 = 1`.
#[inline]
pub fn fill_scaled_hermite(x: f64, ratio: f64, out: &mut [f64]) {
    fill_hermite(x, out);
    let s = ratio.clamp(0.0, 1.0).sqrt();
    let mut scale = 1.0;
    for v in out.iter_mut().skip(1) {
        scale *= s;
        *v *= scale;
    }
}

/// Gauss–Hermite rule for the standard Gaussian weight, by the Golub–Welsch
/// eigenvalue method. Nodes ascend; weights sum to 1.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix of He_k: x He_k = He_{k+1} + k He_{k-1}.
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
