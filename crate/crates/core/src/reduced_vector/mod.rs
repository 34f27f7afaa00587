//! Reduced dynamics on the full-model grid.
//!
//! The QMNG step picks `θ̇` minimizing `‖J(θ) θ̇ − f(g(θ); μ)‖₂` with the
//! affine decoder Jacobian `J(θ) = V + K(θ)`. For linear full models the
//! normal equations can be assembled from precomputed tensors in `O(n⁴)`,
//! see [`PrecomputedOperators`]. The constant test-space baseline projects
//! with `Vᵀ` instead.

mod integrate;
mod precompute;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, QmngError, Result};
use crate::full_models::{FullModel, SystemMatrix};
use crate::manifold::QuadraticManifold;
use crate::tensor_core::{cholesky_in_place, cholesky_solve_in_place};

pub use integrate::{integrate_reduced, IntegrateOptions, ReducedTrajectory, Scheme, TrajectoryMeta};
pub use precompute::{
    linear_reduced_rhs, precompute_linear, LinearReducedRhs, PrecomputedOperators, DEFAULT_MEMORY_BUDGET,
};

/// A full-model right-hand side `f(q; μ)`.
pub trait FullRhs {
    fn dim(&self) -> usize;
    fn eval_into(&self, q: &[f64], mu: f64, out: &mut [f64]);
}

impl FullRhs for FullModel {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval_into(&self, q: &[f64], mu: f64, out: &mut [f64]) {
        self.rhs_into(q, mu, out)
    }
}

/// `f(q) = A q`, independent of `μ`.
impl FullRhs for SystemMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn eval_into(&self, q: &[f64], _mu: f64, out: &mut [f64]) {
        self.mul_vec_into(q, out)
    }
}

/// Wraps a closure `(q, μ, out)` as a [`FullRhs`].
pub struct FnRhs<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64, &mut [f64])> FnRhs<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64, &mut [f64])> FullRhs for FnRhs<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, q: &[f64], mu: f64, out: &mut [f64]) {
        (self.f)(q, mu, out)
    }
}

/// Writes `J(θ) = V + K(θ)` into `jac` (`N x n`), where column `j` of `K(θ)`
/// is `Σ_a θ_a (W[:, (a,j)] + W[:, (j,a)])`.
pub(crate) fn jacobian_into(m: &QuadraticManifold, theta: &[f64], jac: &mut DMatrix<f64>) {
    let n = m.n();
    let w = m.correction();
    jac.copy_from(m.basis());
    for j in 0..n {
        let mut col = jac.column_mut(j);
        for (a, &ta) in theta.iter().enumerate() {
            if ta != 0.0 {
                col.axpy(ta, &w.column(a * n + j), 1.0);
                col.axpy(ta, &w.column(j * n + a), 1.0);
            }
        }
    }
}

/// Jacobian of the decoder, `J(θ) = V + W ∇h(θ)`.
pub fn assemble_jacobian(m: &QuadraticManifold, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim("assemble_jacobian", m.n(), theta.len())?;
    let mut jac = DMatrix::zeros(m.full_dim(), m.n());
    jacobian_into(m, theta.as_slice(), &mut jac);
    Ok(jac)
}

/// Smallest admissible eigenvalue of `JᵀJ`; it is at least 1 when `VᵀV = I`
/// and `VᵀW = 0`.
const GRAM_FLOOR: f64 = 0.99;

/// Residual-minimizing reduced right-hand side on the full grid, with
/// reusable work buffers.
pub struct QmngDirect<'a, F: FullRhs + ?Sized> {
    manifold: &'a QuadraticManifold,
    f: &'a F,
    q: Vec<f64>,
    fq: Vec<f64>,
    h: Vec<f64>,
    jac: DMatrix<f64>,
    gram: Vec<f64>,
    shifted: Vec<f64>,
}

impl<'a, F: FullRhs + ?Sized> QmngDirect<'a, F> {
    pub fn new(manifold: &'a QuadraticManifold, f: &'a F) -> Result<Self> {
        check_dim("full rhs dimension", manifold.full_dim(), f.dim())?;
        let (big_n, n) = (manifold.full_dim(), manifold.n());
        Ok(Self {
            manifold,
            f,
            q: vec![0.0; big_n],
            fq: vec![0.0; big_n],
            h: vec![0.0; n * n],
            jac: DMatrix::zeros(big_n, n),
            gram: vec![0.0; n * n],
            shifted: vec![0.0; n * n],
        })
    }

    /// Evaluates `f(g(θ); μ)` and `J(θ)` into the work buffers.
    fn prepare(&mut self, theta: &[f64], mu: f64) {
        self.manifold.decode_into(theta, &mut self.h, &mut self.q);
        self.f.eval_into(&self.q, mu, &mut self.fq);
        jacobian_into(self.manifold, theta, &mut self.jac);
    }

    pub fn rhs_into(&mut self, theta: &[f64], mu: f64, out: &mut [f64]) -> Result<()> {
        let n = self.manifold.n();
        check_dim("qmng_rhs theta", n, theta.len())?;
        check_dim("qmng_rhs output", n, out.len())?;
        self.prepare(theta, mu);
        let jac = &self.jac;
        for j in 0..n {
            for k in 0..=j {
                let v = jac.column(j).dot(&jac.column(k));
                self.gram[j * n + k] = v;
                self.gram[k * n + j] = v;
            }
            out[j] = crate::tensor_core::dot(jac.column(j).as_slice(), &self.fq);
        }
        // JᵀJ − 0.99 I must stay positive definite under the manifold invariants
        self.shifted.copy_from_slice(&self.gram);
        for j in 0..n {
            self.shifted[j * n + j] -= GRAM_FLOOR;
        }
        if cholesky_in_place(&mut self.shifted, n).is_err() {
            return Err(QmngError::Invariant(format!(
                "smallest eigenvalue of J(θ)ᵀJ(θ) below {GRAM_FLOOR}; check VᵀV = I and VᵀW = 0"
            )));
        }
        if cholesky_in_place(&mut self.gram, n).is_err() {
            return Err(QmngError::Invariant("J(θ)ᵀJ(θ) is not positive definite".into()));
        }
        cholesky_solve_in_place(&self.gram, n, out);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(QmngError::Integration {
                mu,
                t: f64::NAN,
                reason: "non-finite reduced velocity".into(),
            });
        }
        Ok(())
    }

    /// `‖J(θ) θ̇ − f(g(θ); μ)‖₂`.
    pub fn residual_norm(&mut self, theta: &[f64], theta_dot: &[f64], mu: f64) -> Result<f64> {
        let n = self.manifold.n();
        check_dim("residual theta", n, theta.len())?;
        check_dim("residual velocity", n, theta_dot.len())?;
        self.prepare(theta, mu);
        let td = nalgebra::DVectorView::from_slice(theta_dot, n);
        let r = &self.jac * td - nalgebra::DVectorView::from_slice(&self.fq, self.fq.len());
        Ok(r.norm())
    }
}

/// Unique least-squares velocity `argmin ‖J(θ) θ̇ − f(g(θ); μ)‖₂`.
pub fn qmng_rhs<F: FullRhs + ?Sized>(
    m: &QuadraticManifold,
    f: &F,
    theta: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(m.n());
    QmngDirect::new(m, f)?.rhs_into(theta.as_slice(), mu, out.as_mut_slice())?;
    Ok(out)
}

/// Constant test-space baseline `θ̇ = Vᵀ f(g(θ); μ)` with reusable buffers.
pub struct ConstantTestspace<'a, F: FullRhs + ?Sized> {
    manifold: &'a QuadraticManifold,
    f: &'a F,
    q: Vec<f64>,
    fq: Vec<f64>,
    h: Vec<f64>,
}

impl<'a, F: FullRhs + ?Sized> ConstantTestspace<'a, F> {
    pub fn new(manifold: &'a QuadraticManifold, f: &'a F) -> Result<Self> {
        check_dim("full rhs dimension", manifold.full_dim(), f.dim())?;
        let (big_n, n) = (manifold.full_dim(), manifold.n());
        Ok(Self {
            manifold,
            f,
            q: vec![0.0; big_n],
            fq: vec![0.0; big_n],
            h: vec![0.0; n * n],
        })
    }

    pub fn rhs_into(&mut self, theta: &[f64], mu: f64, out: &mut [f64]) -> Result<()> {
        let n = self.manifold.n();
        check_dim("constant_testspace_rhs theta", n, theta.len())?;
        check_dim("constant_testspace_rhs output", n, out.len())?;
        self.manifold.decode_into(theta, &mut self.h, &mut self.q);
        self.f.eval_into(&self.q, mu, &mut self.fq);
        let v = self.manifold.basis();
        for (j, o) in out.iter_mut().enumerate() {
            *o = crate::tensor_core::dot(v.column(j).as_slice(), &self.fq);
        }
        Ok(())
    }
}

pub fn constant_testspace_rhs<F: FullRhs + ?Sized>(
    m: &QuadraticManifold,
    f: &F,
    theta: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(m.n());
    ConstantTestspace::new(m, f)?.rhs_into(theta.as_slice(), mu, out.as_mut_slice())?;
    Ok(out)
}
