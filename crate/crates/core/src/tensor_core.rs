//! Dense tensor kernels and the quadratic feature map.
//!
//! Tensors are stored row-major: for a `Tensor3` of shape `(m, n, p)` the
//! entry `(i, j, k)` lives at `(i * n + j) * p + k`. The feature map keeps all
//! `n^2` products, entry `i * n + j` holding `theta_i * theta_j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, QmngError, Result};

/// Three-way tensor of shape `(m, n, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(m: usize, n: usize, p: usize) -> Self {
        Self {
            dims: (m, n, p),
            data: vec![0.0; m * n * p],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        check_dim("Tensor3::from_vec", dims.0 * dims.1 * dims.2, data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(QmngError::InvalidConfig("Tensor3 entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let (m, n, p) = dims;
        let mut data = Vec::with_capacity(m * n * p);
        for i in 0..m {
            for j in 0..n {
                for k in 0..p {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, n, p) = self.dims;
        self.data[(i * n + j) * p + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let (_, n, p) = self.dims;
        self.data[(i * n + j) * p + k] = value;
    }

    /// Contiguous `n x p` slab for leading index `i`.
    pub fn slab(&self, i: usize) -> &[f64] {
        let (_, n, p) = self.dims;
        &self.data[i * n * p..(i + 1) * n * p]
    }
}

/// Four-way tensor of shape `(n, n, n, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Tensor4::from_vec", n * n * n * n, data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(QmngError::InvalidConfig("Tensor4 entries must be finite".into()));
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.data[((i * n + j) * n + k) * n + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        let n = self.n;
        self.data[((i * n + j) * n + k) * n + l] = value;
    }
}

/// Quadratic feature map `theta ⊗ theta`.
pub fn kron_features(theta: &DVector<f64>) -> DVector<f64> {
    let n = theta.len();
    let mut out = DVector::zeros(n * n);
    kron_features_into(theta.as_slice(), out.as_mut_slice());
    out
}

/// Allocation-free form of [`kron_features`]; `out` must have length `n^2`.
#[inline]
pub fn kron_features_into(theta: &[f64], out: &mut [f64]) {
    let n = theta.len();
    debug_assert_eq!(out.len(), n * n);
    for (i, &ti) in theta.iter().enumerate() {
        for (o, &tj) in out[i * n..(i + 1) * n].iter_mut().zip(theta) {
            *o = ti * tj;
        }
    }
}

/// Jacobian of [`kron_features`], an `n^2 x n` matrix equal to `theta ⊗ I + I ⊗ theta`.
pub fn grad_features(theta: &DVector<f64>) -> DMatrix<f64> {
    let n = theta.len();
    let mut out = DMatrix::zeros(n * n, n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            out[(row, i)] += theta[j];
            out[(row, j)] += theta[i];
        }
    }
    out
}

/// `[T · v]_{ij} = sum_k T_{ijk} v_k`.
pub fn mode_last_contract(t: &Tensor3, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (m, n, p) = t.dims();
    check_dim("mode_last_contract", p, v.len())?;
    let v = v.as_slice();
    Ok(DMatrix::from_fn(m, n, |i, j| {
        let row = &t.data[(i * n + j) * p..(i * n + j + 1) * p];
        dot(row, v)
    }))
}

/// `[v · T]_{jk} = sum_i v_i T_{ijk}`.
pub fn mode_first_contract(v: &DVector<f64>, t: &Tensor3) -> Result<DMatrix<f64>> {
    let (m, n, p) = t.dims();
    check_dim("mode_first_contract", m, v.len())?;
    let mut acc = vec![0.0; n * p];
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            axpy(vi, t.slab(i), &mut acc);
        }
    }
    Ok(DMatrix::from_fn(n, p, |j, k| acc[j * p + k]))
}

/// `[θl · T · θr]_{jk} = sum_{i,l} θl_i T_{ijkl} θr_l`, computed as a last-mode
/// contraction (O(n^4)) followed by a first-mode contraction (O(n^3)).
pub fn bilinear_contract(
    theta_left: &DVector<f64>,
    t: &Tensor4,
    theta_right: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = t.dim();
    check_dim("bilinear_contract (left)", n, theta_left.len())?;
    check_dim("bilinear_contract (right)", n, theta_right.len())?;
    let mut scratch = vec![0.0; n * n * n];
    let mut out = vec![0.0; n * n];
    bilinear_contract_into(
        theta_left.as_slice(),
        t,
        theta_right.as_slice(),
        &mut scratch,
        &mut out,
    );
    Ok(DMatrix::from_fn(n, n, |j, k| out[j * n + k]))
}

/// Allocation-free bilinear contraction writing a row-major `n x n` result.
/// `scratch` must hold `n^3` entries.
pub fn bilinear_contract_into(
    theta_left: &[f64],
    t: &Tensor4,
    theta_right: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let n = t.dim();
    debug_assert_eq!(scratch.len(), n * n * n);
    debug_assert_eq!(out.len(), n * n);
    for (s, row) in scratch.iter_mut().zip(t.data.chunks_exact(n)) {
        *s = dot(row, theta_right);
    }
    out.fill(0.0);
    for (i, &ti) in theta_left.iter().enumerate() {
        axpy(ti, &scratch[i * n * n..(i + 1) * n * n], out);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let o = 4 * c;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for o in 4 * chunks..a.len() {
        s += a[o] * b[o];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// In-place Cholesky factorization of a row-major SPD `n x n` matrix; the
/// lower triangle receives `L`. Returns the failing pivot on breakdown.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> std::result::Result<(), usize> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let d = a[j * n + j] - dot(&a[j * n..j * n + j], &a[j * n..j * n + j]);
        if !(d > 0.0 && d.is_finite()) {
            return Err(j);
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        for i in j + 1..n {
            let (lo, hi) = a.split_at_mut(i * n);
            let row_i = &mut hi[..n];
            let v = row_i[j] - dot(&row_i[..j], &lo[j * n..j * n + j]);
            row_i[j] = v / ljj;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` in place with a factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let v = b[i] - dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// `aᵀ b` through blocked transposes so the product runs as a packed gemm
/// (the direct transposed product falls back to strided dot products).
pub(crate) fn at_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    const BLOCK: usize = 1024;
    assert_eq!(a.nrows(), b.nrows(), "at_mul row mismatch");
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    let mut r0 = 0;
    while r0 < a.nrows() {
        let len = BLOCK.min(a.nrows() - r0);
        let at = a.rows(r0, len).transpose();
        out.gemm(1.0, &at, &b.rows(r0, len), 1.0);
        r0 += len;
    }
    out
}
