//! Offline tensors for linear full models `f(q) = A q` and the `O(n⁴)`
//! online right-hand side built from them.
//!
//! With `𝒦[x, j, a] = W[x, (a,j)] + W[x, (j,a)]` (so `K(θ) = 𝒦 · θ`):
//!
//! - `𝒥[a, j, k, b] = Σ_x 𝒦[x, j, a] 𝒦[x, k, b]`, so `θ·𝒥·θ = K(θ)ᵀ K(θ)`,
//! - `ŝ₀ = Vᵀ A s₀`, `Â = Vᵀ A V`, `Ĥ = Vᵀ A W`,
//! - `𝒮[a, j] = Σ_x 𝒦[x, j, a] (A s₀)_x`,
//! - `𝒜[a, j, m] = Σ_x 𝒦[x, j, a] (A V)[x, m]`,
//! - `ℋ[a, j, m] = Σ_x 𝒦[x, j, a] (A W)[x, m]`.
//!
//! File layout (little-endian): magic `QOPS`, version `u32`, `n` and `N` as
//! `u64`, then `𝒥` (row-major), `ŝ₀`, `Â`, `Ĥ`, `𝒮` (column-major) and
//! `𝒜`, `ℋ` (row-major), all `f64`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binio::{read_f64_vec, read_magic, read_u32, read_u64, write_f64_slice, write_u64s};
use crate::error::{check_dim, QmngError, Result};
use crate::full_models::SystemMatrix;
use crate::manifold::QuadraticManifold;
use crate::tensor_core::{
    at_mul, axpy, bilinear_contract_into, cholesky_in_place, cholesky_solve_in_place, dot, kron_features_into,
    Tensor3, Tensor4,
};

const MAGIC: &[u8; 4] = b"QOPS";
const VERSION: u32 = 1;

/// Default cap on the memory used while assembling the tensors (2 GiB).
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedOperators {
    pub j: Tensor4,
    pub s0_hat: DVector<f64>,
    pub a_hat: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub a: Tensor3,
    pub h: Tensor3,
    /// Full dimension the operators were reduced from.
    pub full_dim: usize,
}

/// Bytes needed to assemble the operators for dimensions `(N, n)`.
pub fn precompute_memory_bytes(full_dim: usize, n: usize) -> u64 {
    let (big_n, n) = (full_dim as u64, n as u64);
    let n2 = n * n;
    // 𝒦 and A W are N x n² each; 𝒥 and ℋ are n⁴ each (plus one temporary)
    8 * (2 * big_n * n2 + 3 * n2 * n2 + big_n * (n + 2) + n2 * n)
}

/// Assembles all offline tensors for `f(q) = A q`.
pub fn precompute_linear(
    m: &QuadraticManifold,
    a: &SystemMatrix,
    budget_bytes: u64,
) -> Result<PrecomputedOperators> {
    let (big_n, n) = (m.full_dim(), m.n());
    check_dim("system matrix rows", big_n, a.rows())?;
    check_dim("system matrix columns", big_n, a.cols())?;
    let required = precompute_memory_bytes(big_n, n);
    if required > budget_bytes {
        return Err(QmngError::MemoryBudget {
            required_bytes: required,
            budget_bytes,
        });
    }
    let n2 = n * n;
    let v = m.basis();
    let w = m.correction();

    // column (j, a) -> j * n + a
    let mut kmat = DMatrix::zeros(big_n, n2);
    for j in 0..n {
        for k in 0..n {
            let mut col = kmat.column_mut(j * n + k);
            col.copy_from(&w.column(k * n + j));
            col += w.column(j * n + k);
        }
    }

    let gram = at_mul(&kmat, &kmat);
    let jt = Tensor4::from_vec(
        n,
        (0..n2 * n2)
            .map(|idx| {
                let (aa, j, k, b) = (idx / (n * n2), (idx / n2) % n, (idx / n) % n, idx % n);
                gram[(j * n + aa, k * n + b)]
            })
            .collect(),
    )?;
    drop(gram);

    let a_s0 = a.mul_vec(m.s0())?;
    let av = a.mul_dense(v)?;
    let aw = a.mul_dense(w)?;
    let s0_hat = v.tr_mul(&a_s0);
    let a_hat = at_mul(v, &av);
    let h_hat = at_mul(v, &aw);

    let ks0 = kmat.tr_mul(&a_s0);
    let s = DMatrix::from_fn(n, n, |aa, j| ks0[j * n + aa]);
    let kav = at_mul(&kmat, &av);
    let at = Tensor3::from_fn((n, n, n), |aa, j, mm| kav[(j * n + aa, mm)]);
    let kaw = at_mul(&kmat, &aw);
    let ht = Tensor3::from_fn((n, n, n2), |aa, j, mm| kaw[(j * n + aa, mm)]);

    let ops = PrecomputedOperators {
        j: jt,
        s0_hat,
        a_hat,
        h_hat,
        s,
        a: at,
        h: ht,
        full_dim: big_n,
    };
    ops.validate()?;
    Ok(ops)
}

impl PrecomputedOperators {
    pub fn n(&self) -> usize {
        self.s0_hat.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        check_dim("𝒥 dimension", n, self.j.dim())?;
        check_dim("Â rows", n, self.a_hat.nrows())?;
        check_dim("Â columns", n, self.a_hat.ncols())?;
        check_dim("Ĥ rows", n, self.h_hat.nrows())?;
        check_dim("Ĥ columns", n * n, self.h_hat.ncols())?;
        check_dim("𝒮 rows", n, self.s.nrows())?;
        check_dim("𝒮 columns", n, self.s.ncols())?;
        if self.a.dims() != (n, n, n) {
            return Err(QmngError::InvalidConfig(format!("𝒜 has dims {:?}", self.a.dims())));
        }
        if self.h.dims() != (n, n, n * n) {
            return Err(QmngError::InvalidConfig(format!("ℋ has dims {:?}", self.h.dims())));
        }
        let finite = |x: &f64| x.is_finite();
        if !(self.s0_hat.iter().all(finite)
            && self.a_hat.iter().all(finite)
            && self.h_hat.iter().all(finite)
            && self.s.iter().all(finite))
        {
            return Err(QmngError::InvalidConfig("precomputed operators contain non-finite entries".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_u64s(&mut w, &[self.n() as u64, self.full_dim as u64])?;
        write_f64_slice(&mut w, self.j.as_slice())?;
        write_f64_slice(&mut w, self.s0_hat.as_slice())?;
        write_f64_slice(&mut w, self.a_hat.as_slice())?;
        write_f64_slice(&mut w, self.h_hat.as_slice())?;
        write_f64_slice(&mut w, self.s.as_slice())?;
        write_f64_slice(&mut w, self.a.as_slice())?;
        write_f64_slice(&mut w, self.h.as_slice())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_magic(&mut r, MAGIC)?;
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(QmngError::Format(format!("unsupported operator file version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let full_dim = read_u64(&mut r)? as usize;
        let n2 = n * n;
        let ops = Self {
            j: Tensor4::from_vec(n, read_f64_vec(&mut r, n2 * n2)?)?,
            s0_hat: DVector::from_vec(read_f64_vec(&mut r, n)?),
            a_hat: DMatrix::from_vec(n, n, read_f64_vec(&mut r, n2)?),
            h_hat: DMatrix::from_vec(n, n2, read_f64_vec(&mut r, n * n2)?),
            s: DMatrix::from_vec(n, n, read_f64_vec(&mut r, n2)?),
            a: Tensor3::from_vec((n, n, n), read_f64_vec(&mut r, n * n2)?)?,
            h: Tensor3::from_vec((n, n, n2), read_f64_vec(&mut r, n2 * n2)?)?,
            full_dim,
        };
        ops.validate()?;
        Ok(ops)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut bw = std::io::BufWriter::new(f);
        self.write_to(&mut bw)?;
        bw.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Online right-hand side `(I + θ·𝒥·θ)⁻¹ f̂(θ)` with preallocated buffers;
/// no quantity of size `N` is touched.
pub struct LinearReducedRhs<'a> {
    ops: &'a PrecomputedOperators,
    h: Vec<f64>,
    mat: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> LinearReducedRhs<'a> {
    pub fn new(ops: &'a PrecomputedOperators) -> Self {
        let n = ops.n();
        Self {
            ops,
            h: vec![0.0; n * n],
            mat: vec![0.0; n * n],
            scratch: vec![0.0; n * n * n],
        }
    }

    /// Constant test-space velocity `Vᵀ A g(θ) = ŝ₀ + Âθ + Ĥh`.
    pub fn constant_testspace_into(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        let ops = self.ops;
        check_dim("constant_testspace theta", ops.n(), theta.len())?;
        check_dim("constant_testspace output", ops.n(), out.len())?;
        kron_features_into(theta, &mut self.h);
        out.copy_from_slice(ops.s0_hat.as_slice());
        for (m, &tm) in theta.iter().enumerate() {
            axpy(tm, ops.a_hat.column(m).as_slice(), out);
        }
        for (m, &hm) in self.h.iter().enumerate() {
            axpy(hm, ops.h_hat.column(m).as_slice(), out);
        }
        Ok(())
    }

    pub fn rhs_into(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        let ops = self.ops;
        let n = ops.n();
        check_dim("linear_reduced_rhs theta", n, theta.len())?;
        check_dim("linear_reduced_rhs output", n, out.len())?;
        let n2 = n * n;
        kron_features_into(theta, &mut self.h);

        // f̂(θ) = ŝ₀ + Âθ + Ĥh + θ·𝒮 + (θ·𝒜)θ + (θ·ℋ)h
        out.copy_from_slice(ops.s0_hat.as_slice());
        for (m, &tm) in theta.iter().enumerate() {
            axpy(tm, ops.a_hat.column(m).as_slice(), out);
        }
        for (m, &hm) in self.h.iter().enumerate() {
            axpy(hm, ops.h_hat.column(m).as_slice(), out);
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += dot(ops.s.column(j).as_slice(), theta);
        }
        let a = ops.a.as_slice();
        let hh = ops.h.as_slice();
        for (aa, &ta) in theta.iter().enumerate() {
            if ta == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                let ra = &a[(aa * n + j) * n..(aa * n + j + 1) * n];
                let rh = &hh[(aa * n + j) * n2..(aa * n + j + 1) * n2];
                *o += ta * (dot(ra, theta) + dot(rh, &self.h));
            }
        }

        bilinear_contract_into(theta, &ops.j, theta, &mut self.scratch, &mut self.mat);
        for j in 0..n {
            self.mat[j * n + j] += 1.0;
        }
        if cholesky_in_place(&mut self.mat, n).is_err() {
            return Err(QmngError::Invariant(
                "I + θ·𝒥·θ is not positive definite; the precomputed tensors are corrupted".into(),
            ));
        }
        cholesky_solve_in_place(&self.mat, n, out);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(QmngError::Integration {
                mu: f64::NAN,
                t: f64::NAN,
                reason: "non-finite reduced velocity".into(),
            });
        }
        Ok(())
    }
}

pub fn linear_reduced_rhs(ops: &PrecomputedOperators, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(ops.n());
    LinearReducedRhs::new(ops).rhs_into(theta.as_slice(), out.as_mut_slice())?;
    Ok(out)
}
