//! QMNG with a continuous decoder on 1-D periodic domains.
//!
//! The columns of `s₀`, `V` and `W` are interpolated by periodic cubic
//! splines, giving `g(θ, x) = I(x, s₀) + I(x, V) θ + I(x, W) h(θ)`. The
//! reduced velocity solves the least-squares problem on a set of collocation
//! points Ξ that need not coincide with the grid:
//! `min ‖J_Ξ(θ) θ̇ − f_Ξ(θ; μ)‖₂`. Spatial derivatives of the decoded field
//! come from analytic spline derivatives of the columns.

mod spline;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, QmngError, Result};
use crate::full_models::{Axis, FullModel, Grid, Physics};
use crate::manifold::QuadraticManifold;
use crate::reduced_vector::{integrate_reduced, IntegrateOptions, ReducedTrajectory, Scheme};
use crate::tensor_core::{dot, kron_features_into};
use spline::{PeriodicSplines, SplineWeights};

/// Relative singular-value cutoff of the collocation least-squares solve.
pub const RCOND: f64 = 1e-10;

/// Spline interpolants of `s₀`, every column of `V` and every column of `W`.
///
/// Column `0` is `s₀`, columns `1..=n` are `V` and the remaining `n²` are `W`.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    splines: PeriodicSplines,
    n: usize,
}

pub fn build_spline_basis(m: &QuadraticManifold, grid: &Grid) -> Result<SplineBasis> {
    SplineBasis::new(m, grid)
}

impl SplineBasis {
    pub fn new(m: &QuadraticManifold, grid: &Grid) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(QmngError::InvalidConfig(format!(
                "interpolated reduced models support 1-D grids only, got {} dimensions",
                grid.dim()
            )));
        }
        check_dim("spline basis grid size", m.full_dim(), grid.len())?;
        let (np, n) = (grid.len(), m.n());
        let cols = 1 + n + n * n;
        let (s0, v, w) = (m.s0(), m.basis(), m.correction());
        let mut values = vec![0.0; np * cols];
        for (i, row) in values.chunks_exact_mut(cols).enumerate() {
            row[0] = s0[i];
            for j in 0..n {
                row[1 + j] = v[(i, j)];
            }
            for k in 0..n * n {
                row[1 + n + k] = w[(i, k)];
            }
        }
        Ok(Self {
            splines: PeriodicSplines::fit(*grid.axis(0), cols, values)?,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn axis(&self) -> &Axis {
        &self.splines.axis
    }

    fn cols(&self) -> usize {
        self.splines.cols
    }

    /// `(1, θ, h(θ))`, the coefficients of the columns in `g`.
    fn features_into(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.n;
        out[0] = 1.0;
        out[1..=n].copy_from_slice(theta);
        kron_features_into(theta, &mut out[1 + n..]);
    }

    /// `g(θ, x)` and its first two spatial derivatives.
    pub fn decode_at(&self, theta: &DVector<f64>, x: f64) -> Result<[f64; 3]> {
        check_dim("decode_at theta", self.n, theta.len())?;
        let mut phi = vec![0.0; self.cols()];
        self.features_into(theta.as_slice(), &mut phi);
        let wt = self.splines.weights(x);
        let mut row = vec![0.0; self.cols()];
        let mut out = [0.0; 3];
        for (order, o) in out.iter_mut().enumerate() {
            self.splines.eval_into(&wt, order, &mut row);
            *o = dot(&row, &phi);
        }
        Ok(out)
    }
}

/// How collocation points are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Equidistant,
    UniformFixed,
    #[default]
    UniformResampled,
}

impl std::str::FromStr for Strategy {
    type Err = QmngError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equidistant" => Ok(Strategy::Equidistant),
            "uniform-fixed" => Ok(Strategy::UniformFixed),
            "uniform-resampled" => Ok(Strategy::UniformResampled),
            _ => Err(QmngError::InvalidConfig(format!("unknown collocation strategy '{s}'"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Equidistant => "equidistant",
            Strategy::UniformFixed => "uniform-fixed",
            Strategy::UniformResampled => "uniform-resampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub points: Vec<f64>,
    pub strategy: Strategy,
    pub seed: u64,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws the collocation set used at time step `step`. Uniform draws come
/// from ChaCha8 seeded with `seed` on stream `step`; only the resampled
/// strategy depends on `step`.
fn draw_points(axis: &Axis, m: usize, strategy: Strategy, seed: u64, step: u64) -> Vec<f64> {
    match strategy {
        Strategy::Equidistant => {
            let h = axis.length() / m as f64;
            (0..m).map(|i| axis.lower + i as f64 * h).collect()
        }
        Strategy::UniformFixed | Strategy::UniformResampled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if strategy == Strategy::UniformResampled {
                rng.set_stream(step);
            }
            (0..m).map(|_| axis.wrap(rng.gen_range(axis.lower..axis.upper))).collect()
        }
    }
}

/// Collocation points for the first time step.
pub fn sample_collocation(grid: &Grid, m: usize, strategy: Strategy, seed: u64) -> Result<CollocationSet> {
    if grid.dim() != 1 {
        return Err(QmngError::InvalidConfig("collocation sampling needs a 1-D grid".into()));
    }
    if m == 0 {
        return Err(QmngError::InvalidConfig("need at least one collocation point".into()));
    }
    Ok(CollocationSet {
        points: draw_points(grid.axis(0), m, strategy, seed, 0),
        strategy,
        seed,
    })
}

/// A pointwise right-hand side `f(x, u, ∂ₓu, ∂ₓₓu; μ)`.
pub trait PointwisePde {
    /// Highest spatial derivative of `u` that enters `f`.
    fn derivative_order(&self) -> usize;
    /// `u = [u, ∂ₓu, ∂ₓₓu]`.
    fn eval(&self, x: f64, u: [f64; 3], mu: f64) -> f64;
}

/// `f = u ∂ₓu + α ∂ₓₓu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersPde {
    pub alpha: f64,
}

impl BurgersPde {
    pub fn from_model(model: &FullModel) -> Result<Self> {
        match model.spec().physics {
            Physics::Burgers { alpha, .. } => Ok(Self { alpha }),
            _ => Err(QmngError::InvalidConfig(format!(
                "no pointwise form for the {} model",
                model.kind().name()
            ))),
        }
    }
}

impl PointwisePde for BurgersPde {
    fn derivative_order(&self) -> usize {
        2
    }

    fn eval(&self, _x: f64, u: [f64; 3], _mu: f64) -> f64 {
        u[0] * u[1] + self.alpha * u[2]
    }
}

/// All spline columns and their first two derivatives evaluated at a fixed
/// set of points (`W_Ξ`, `W'_Ξ`, `W''_Ξ` and likewise for `s₀`, `V`).
#[derive(Debug, Clone)]
struct CollocationRows {
    points: Vec<f64>,
    /// `[order]` holds an `m x cols` row-major block.
    rows: [Vec<f64>; 3],
}

impl CollocationRows {
    fn new(basis: &SplineBasis, points: Vec<f64>) -> Self {
        let c = basis.cols();
        let mut rows = [vec![0.0; points.len() * c], vec![0.0; points.len() * c], vec![0.0; points.len() * c]];
        for (p, &x) in points.iter().enumerate() {
            let wt: SplineWeights = basis.splines.weights(x);
            for (order, block) in rows.iter_mut().enumerate() {
                basis.splines.eval_into(&wt, order, &mut block[p * c..(p + 1) * c]);
            }
        }
        Self { points, rows }
    }

    fn len(&self) -> usize {
        self.points.len()
    }

    /// `J_Ξ(θ) = V_Ξ + 𝒦_Ξ · θ` into `jac` (`m x n`); `tmp` has length `n`.
    fn jacobian_into(&self, n: usize, theta: &[f64], jac: &mut DMatrix<f64>, tmp: &mut [f64]) {
        let c = 1 + n + n * n;
        for p in 0..self.len() {
            let row = &self.rows[0][p * c..(p + 1) * c];
            let (v, w) = row[1..].split_at(n);
            tmp.copy_from_slice(v);
            for (a, &ta) in theta.iter().enumerate() {
                for (t, wv) in tmp.iter_mut().zip(&w[a * n..(a + 1) * n]) {
                    *t += ta * wv;
                }
            }
            for (j, t) in tmp.iter_mut().enumerate() {
                *t += dot(&w[j * n..(j + 1) * n], theta);
            }
            for (j, &t) in tmp.iter().enumerate() {
                jac[(p, j)] = t;
            }
        }
    }

    /// `f_Ξ(θ; μ)` given the feature vector `phi = (1, θ, h)`.
    fn rhs_into<P: PointwisePde + ?Sized>(&self, phi: &[f64], pde: &P, mu: f64, out: &mut [f64]) -> Result<()> {
        let order = pde.derivative_order();
        if order > 2 {
            return Err(QmngError::InvalidConfig(format!(
                "pointwise right-hand side needs derivative order {order}, at most 2 is supported"
            )));
        }
        let c = phi.len();
        for (p, (o, &x)) in out.iter_mut().zip(&self.points).enumerate() {
            let mut u = [0.0; 3];
            for (k, uk) in u.iter_mut().enumerate().take(order + 1) {
                *uk = dot(&self.rows[k][p * c..(p + 1) * c], phi);
            }
            *o = pde.eval(x, u, mu);
        }
        Ok(())
    }
}

/// Batch Jacobian `J_Ξ(θ)` of the continuous decoder (`m x n`).
pub fn assemble_j_xi(basis: &SplineBasis, theta: &DVector<f64>, xi: &CollocationSet) -> Result<DMatrix<f64>> {
    let n = basis.n();
    check_dim("assemble_j_xi theta", n, theta.len())?;
    let rows = CollocationRows::new(basis, xi.points.clone());
    let mut jac = DMatrix::zeros(xi.len(), n);
    rows.jacobian_into(n, theta.as_slice(), &mut jac, &mut vec![0.0; n]);
    Ok(jac)
}

/// Batch right-hand side `f_Ξ(θ; μ)`.
pub fn assemble_f_xi<P: PointwisePde + ?Sized>(
    basis: &SplineBasis,
    theta: &DVector<f64>,
    xi: &CollocationSet,
    mu: f64,
    pde: &P,
) -> Result<DVector<f64>> {
    check_dim("assemble_f_xi theta", basis.n(), theta.len())?;
    let rows = CollocationRows::new(basis, xi.points.clone());
    let mut phi = vec![0.0; basis.cols()];
    basis.features_into(theta.as_slice(), &mut phi);
    let mut out = DVector::zeros(xi.len());
    rows.rhs_into(&phi, pde, mu, out.as_mut_slice())?;
    Ok(out)
}

/// Minimal-norm least-squares solution of `J θ̇ ≈ f` with singular values
/// below `RCOND · σ_max` discarded. Returns the solution and the effective
/// rank.
pub fn solve_collocation_lstsq(jac: &DMatrix<f64>, f: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    check_dim("collocation right-hand side", jac.nrows(), f.len())?;
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !smax.is_finite() {
        return Err(QmngError::Integration {
            mu: f64::NAN,
            t: f64::NAN,
            reason: "non-finite collocation Jacobian".into(),
        });
    }
    if smax == 0.0 {
        return Ok((DVector::zeros(jac.ncols()), 0));
    }
    let cutoff = RCOND * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let sol = svd.solve(f, cutoff).map_err(|e| QmngError::Integration {
        mu: f64::NAN,
        t: f64::NAN,
        reason: e.to_string(),
    })?;
    Ok((sol, rank))
}

/// Reduced velocity of the interpolated model on the points `xi`, with the
/// effective rank of `J_Ξ(θ)`.
pub fn qmng_interp_rhs<P: PointwisePde + ?Sized>(
    basis: &SplineBasis,
    theta: &DVector<f64>,
    xi: &CollocationSet,
    mu: f64,
    pde: &P,
) -> Result<(DVector<f64>, usize)> {
    let jac = assemble_j_xi(basis, theta, xi)?;
    let f = assemble_f_xi(basis, theta, xi, mu, pde)?;
    solve_collocation_lstsq(&jac, &f)
}

/// Time-stepping state of the interpolated model: the current collocation
/// set, work buffers, and the count of steps with a rank-deficient `J_Ξ`.
///
/// With [`Strategy::UniformResampled`] a new set is drawn at every time
/// step; all stages of one step share the same points.
pub struct InterpQmng<'a, P: PointwisePde + ?Sized> {
    basis: &'a SplineBasis,
    pde: &'a P,
    strategy: Strategy,
    seed: u64,
    m: usize,
    stages_per_step: usize,
    calls: usize,
    rows: CollocationRows,
    row_step: usize,
    jac: DMatrix<f64>,
    f: DVector<f64>,
    phi: Vec<f64>,
    tmp: Vec<f64>,
    rank_deficient_steps: usize,
    last_deficient: Option<usize>,
}

impl<'a, P: PointwisePde + ?Sized> InterpQmng<'a, P> {
    pub fn new(basis: &'a SplineBasis, pde: &'a P, m: usize, strategy: Strategy, seed: u64, scheme: Scheme) -> Result<Self> {
        if m == 0 {
            return Err(QmngError::InvalidConfig("need at least one collocation point".into()));
        }
        if pde.derivative_order() > 2 {
            return Err(QmngError::InvalidConfig(format!(
                "pointwise right-hand side needs derivative order {}, at most 2 is supported",
                pde.derivative_order()
            )));
        }
        if m < basis.n() {
            log::warn!("{m} collocation points for {} unknowns; J_Ξ is rank deficient", basis.n());
        }
        let n = basis.n();
        let rows = CollocationRows::new(basis, draw_points(basis.axis(), m, strategy, seed, 0));
        Ok(Self {
            basis,
            pde,
            strategy,
            seed,
            m,
            stages_per_step: match scheme {
                Scheme::Euler => 1,
                Scheme::Rk4 => 4,
            },
            calls: 0,
            rows,
            row_step: 0,
            jac: DMatrix::zeros(m, n),
            f: DVector::zeros(m),
            phi: vec![0.0; basis.cols()],
            tmp: vec![0.0; n],
            rank_deficient_steps: 0,
            last_deficient: None,
        })
    }

    pub fn rank_deficient_steps(&self) -> usize {
        self.rank_deficient_steps
    }

    pub fn points(&self) -> &[f64] {
        &self.rows.points
    }

    pub fn rhs_into(&mut self, theta: &[f64], mu: f64, out: &mut [f64]) -> Result<()> {
        let n = self.basis.n();
        check_dim("interpolated rhs theta", n, theta.len())?;
        check_dim("interpolated rhs output", n, out.len())?;
        let step = self.calls / self.stages_per_step;
        self.calls += 1;
        if self.strategy == Strategy::UniformResampled && step != self.row_step {
            let pts = draw_points(self.basis.axis(), self.m, self.strategy, self.seed, step as u64);
            self.rows = CollocationRows::new(self.basis, pts);
            self.row_step = step;
        }
        self.basis.features_into(theta, &mut self.phi);
        self.rows.jacobian_into(n, theta, &mut self.jac, &mut self.tmp);
        self.rows.rhs_into(&self.phi, self.pde, mu, self.f.as_mut_slice())?;
        let (sol, rank) = solve_collocation_lstsq(&self.jac, &self.f).map_err(|e| match e {
            QmngError::Integration { reason, .. } => QmngError::Integration { mu, t: f64::NAN, reason },
            other => other,
        })?;
        if rank < n && self.last_deficient != Some(step) {
            self.rank_deficient_steps += 1;
            self.last_deficient = Some(step);
        }
        if sol.iter().any(|x| !x.is_finite()) {
            return Err(QmngError::Integration {
                mu,
                t: f64::NAN,
                reason: "non-finite reduced velocity".into(),
            });
        }
        out.copy_from_slice(sol.as_slice());
        Ok(())
    }
}

/// Integrates the interpolated model from `θ₀` and records the collocation
/// settings in the trajectory metadata.
#[allow(clippy::too_many_arguments)]
pub fn simulate_interp<P: PointwisePde + ?Sized>(
    basis: &SplineBasis,
    pde: &P,
    theta0: &DVector<f64>,
    mu: f64,
    opts: &IntegrateOptions,
    m: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<ReducedTrajectory> {
    let mut model = InterpQmng::new(basis, pde, m, strategy, seed, opts.scheme)?;
    let mut tr = integrate_reduced(|th, _t, out| model.rhs_into(th, mu, out), theta0, mu, opts)?;
    tr.meta.method = "interp".into();
    tr.meta.collocation_points = Some(m);
    tr.meta.strategy = Some(strategy.to_string());
    tr.meta.seed = Some(seed);
    tr.meta.rank_deficient_steps = Some(model.rank_deficient_steps());
    Ok(tr)
}

#[cfg(test)]
mod tests;
