//! Full-order finite-difference models on periodic grids: the acoustic wave
//! equation in 2-D, the Vlasov equation with a fixed potential, and viscous
//! Burgers' equation. All are integrated in time with classical RK4.

mod grid;
mod rk4;
mod sparse;
mod stencil;

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use grid::{Axis, Grid};
pub use rk4::{rk4_step, Rk4Workspace};
pub use sparse::SystemMatrix;

use crate::error::{check_dim, QmngError, Result};
use crate::snapshots::SnapshotMatrix;
use stencil::Stencil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Wave2d,
    Vlasov,
    Burgers,
}

impl ModelKind {
    pub fn tag(self) -> u32 {
        match self {
            ModelKind::Wave2d => 1,
            ModelKind::Vlasov => 2,
            ModelKind::Burgers => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            1 => Ok(ModelKind::Wave2d),
            2 => Ok(ModelKind::Vlasov),
            3 => Ok(ModelKind::Burgers),
            _ => Err(QmngError::Format(format!("unknown model tag {tag}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Wave2d => "wave2d",
            ModelKind::Vlasov => "vlasov",
            ModelKind::Burgers => "burgers",
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, ModelKind::Burgers)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = QmngError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave2d" | "wave" => Ok(ModelKind::Wave2d),
            "vlasov" => Ok(ModelKind::Vlasov),
            "burgers" => Ok(ModelKind::Burgers),
            _ => Err(QmngError::InvalidConfig(format!("unknown model '{s}'"))),
        }
    }
}

/// Full-size grids or the reduced desk-scale grids used by the test suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = QmngError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(QmngError::InvalidConfig(format!("unknown scale '{s}'"))),
        }
    }
}

/// Physical constants of each benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Physics {
    /// State packs `(rho, v1, v2)`, each block grid-row-major.
    Wave2d { center: [f64; 2], order: usize },
    Vlasov {
        sigma: f64,
        x0: f64,
        v0: f64,
        alpha: f64,
        beta: f64,
    },
    Burgers { alpha: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullModelSpec {
    pub grid: Grid,
    pub physics: Physics,
    pub param_domain: (f64, f64),
    pub t_end: f64,
    pub dt: f64,
}

impl FullModelSpec {
    pub fn preset(kind: ModelKind, scale: Scale) -> Self {
        let desk = scale == Scale::Desk;
        match kind {
            ModelKind::Wave2d => {
                let n = if desk { 64 } else { 1024 };
                Self {
                    grid: Grid::periodic_2d((-4.0, 4.0, n), (-4.0, 4.0, n)).expect("valid preset"),
                    physics: Physics::Wave2d {
                        center: [2.0, 2.0],
                        order: 2,
                    },
                    param_domain: (0.0, 1.0),
                    t_end: 8.0,
                    dt: 1e-3,
                }
            }
            ModelKind::Vlasov => {
                let n = if desk { 128 } else { 512 };
                Self {
                    grid: Grid::periodic_2d((-1.0, 1.0, n), (-1.0, 1.0, n)).expect("valid preset"),
                    physics: Physics::Vlasov {
                        sigma: 8e-3,
                        x0: -0.2,
                        v0: 0.0,
                        alpha: 0.2,
                        beta: 0.1,
                    },
                    param_domain: (0.25, 0.45),
                    t_end: 3.2,
                    dt: 1e-3,
                }
            }
            ModelKind::Burgers => {
                let n = if desk { 512 } else { 2048 };
                Self {
                    grid: Grid::periodic_1d(-1.0, 1.0, n).expect("valid preset"),
                    physics: Physics::Burgers {
                        alpha: 0.005,
                        sigma: 0.005,
                    },
                    param_domain: (0.35, 0.65),
                    t_end: 1.0,
                    dt: 1e-4,
                }
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.physics {
            Physics::Wave2d { .. } => ModelKind::Wave2d,
            Physics::Vlasov { .. } => ModelKind::Vlasov,
            Physics::Burgers { .. } => ModelKind::Burgers,
        }
    }

    /// Number of time steps covering `[0, t_end]`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Copy of this spec with every grid axis resampled to `points`.
    pub fn with_points(&self, points: usize) -> Result<Self> {
        let axes = self
            .grid
            .axes()
            .iter()
            .map(|a| Axis::new(a.lower, a.upper, points))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: Grid::new(axes)?,
            ..self.clone()
        })
    }
}

/// A validated full model ready for right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct FullModel {
    spec: FullModelSpec,
    shape: (usize, usize),
    d1: [Stencil; 2],
    d2: Option<Stencil>,
}

impl FullModel {
    pub fn new(spec: FullModelSpec) -> Result<Self> {
        let g = &spec.grid;
        let (shape, d1, d2) = match &spec.physics {
            Physics::Wave2d { order, .. } => {
                if g.dim() != 2 {
                    return Err(QmngError::InvalidConfig("wave model needs a 2-D grid".into()));
                }
                let (a, b) = (g.axis(0), g.axis(1));
                if a.points != b.points || (a.length() - b.length()).abs() > 1e-12 {
                    return Err(QmngError::InvalidConfig("wave model needs a square grid".into()));
                }
                (
                    (a.points, b.points),
                    [
                        Stencil::first_derivative(*order, a.spacing())?,
                        Stencil::first_derivative(*order, b.spacing())?,
                    ],
                    None,
                )
            }
            Physics::Vlasov { .. } => {
                if g.dim() != 2 {
                    return Err(QmngError::InvalidConfig("vlasov model needs a 2-D (x, v) grid".into()));
                }
                let (a, b) = (g.axis(0), g.axis(1));
                (
                    (a.points, b.points),
                    [
                        Stencil::first_derivative(4, a.spacing())?,
                        Stencil::first_derivative(4, b.spacing())?,
                    ],
                    None,
                )
            }
            Physics::Burgers { .. } => {
                if g.dim() != 1 {
                    return Err(QmngError::InvalidConfig("burgers model needs a 1-D grid".into()));
                }
                let h = g.axis(0).spacing();
                let d1 = Stencil::first_derivative(4, h)?;
                ((g.axis(0).points, 1), [d1.clone(), d1], Some(Stencil::second_derivative(h)))
            }
        };
        if !(spec.dt > 0.0) || !(spec.t_end > 0.0) {
            return Err(QmngError::InvalidConfig("time step and horizon must be positive".into()));
        }
        Ok(Self { spec, shape, d1, d2 })
    }

    pub fn preset(kind: ModelKind, scale: Scale) -> Self {
        Self::new(FullModelSpec::preset(kind, scale)).expect("presets are valid")
    }

    pub fn spec(&self) -> &FullModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn grid(&self) -> &Grid {
        &self.spec.grid
    }

    /// Full state dimension `N`.
    pub fn state_dim(&self) -> usize {
        match self.kind() {
            ModelKind::Wave2d => 3 * self.spec.grid.len(),
            _ => self.spec.grid.len(),
        }
    }

    /// Writes `f(q; mu)` into `out`.
    pub fn rhs_into(&self, q: &[f64], mu: f64, out: &mut [f64]) {
        debug_assert_eq!(q.len(), self.state_dim());
        debug_assert_eq!(out.len(), self.state_dim());
        out.fill(0.0);
        let shape = self.shape;
        match &self.spec.physics {
            Physics::Wave2d { .. } => {
                let ng = shape.0 * shape.1;
                let (rho, rest) = q.split_at(ng);
                let (v1, v2) = rest.split_at(ng);
                let (out_rho, out_rest) = out.split_at_mut(ng);
                let (out_v1, out_v2) = out_rest.split_at_mut(ng);
                self.d1[0].apply_add(v1, shape, 0, |_, _| -1.0, out_rho);
                self.d1[1].apply_add(v2, shape, 1, |_, _| -1.0, out_rho);
                self.d1[0].apply_add(rho, shape, 0, |_, _| -1.0, out_v1);
                self.d1[1].apply_add(rho, shape, 1, |_, _| -1.0, out_v2);
            }
            Physics::Vlasov { .. } => {
                let vel = self.spec.grid.axis(1);
                let dphi = self.potential_slope(mu);
                self.d1[0].apply_add(q, shape, 0, |_, j| -vel.coord(j), out);
                self.d1[1].apply_add(q, shape, 1, |i, _| dphi[i], out);
            }
            Physics::Burgers { alpha, .. } => {
                self.d1[0].apply_add(q, shape, 0, |i, _| q[i], out);
                self.d2
                    .as_ref()
                    .expect("burgers has a second-derivative stencil")
                    .apply_add(q, shape, 0, |_, _| *alpha, out);
            }
        }
    }

    pub fn rhs(&self, q: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        check_dim("FullModel::rhs", self.state_dim(), q.len())?;
        let mut out = DVector::zeros(q.len());
        self.rhs_into(q.as_slice(), mu, out.as_mut_slice());
        Ok(out)
    }

    /// `d/dx phi(x; mu)` at the grid's x-coordinates for the Vlasov potential
    /// `phi = -alpha (1 + cos(pi (x + mu))^4) - beta sin(pi x)`.
    pub fn potential_slope(&self, mu: f64) -> Vec<f64> {
        match self.spec.physics {
            Physics::Vlasov { alpha, beta, .. } => {
                let ax = self.spec.grid.axis(0);
                (0..ax.points)
                    .map(|i| {
                        let x = ax.coord(i);
                        let c = (PI * (x + mu)).cos();
                        let s = (PI * (x + mu)).sin();
                        4.0 * alpha * PI * c.powi(3) * s - beta * PI * (PI * x).cos()
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// Initial state `q_0(mu)` on the grid.
    pub fn initial_condition(&self, mu: f64) -> DVector<f64> {
        let (lo, hi) = self.spec.param_domain;
        if mu < lo || mu > hi {
            log::warn!("parameter {mu} lies outside the domain [{lo}, {hi}]");
        }
        let g = &self.spec.grid;
        match self.spec.physics {
            Physics::Wave2d { center, .. } => {
                let ng = g.len();
                let mut q = DVector::zeros(3 * ng);
                let w = (6.0 + mu).powi(2);
                for idx in 0..ng {
                    let p = g.point(idx);
                    let r2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                    q[idx] = (-w * r2).exp();
                }
                q
            }
            Physics::Vlasov { sigma, x0, v0, .. } => DVector::from_fn(g.len(), |idx, _| {
                let p = g.point(idx);
                let sx = (0.5 * PI * (p[0] - x0)).sin();
                let sv = (0.5 * PI * (p[1] - v0)).sin();
                (-(sx * sx + sv * sv) / (PI * sigma)).exp() / (2.0 * PI * sigma)
            }),
            Physics::Burgers { sigma, .. } => DVector::from_fn(g.len(), |idx, _| {
                let x = g.axis(0).coord(idx);
                let s = (0.5 * PI * (x - mu)).sin();
                (-(s * s) / (PI * sigma)).exp() / (2.0 * PI * sigma)
            }),
        }
    }

    /// Sparse `A(mu)` with `A q = f(q; mu)`; only for linear models.
    pub fn assemble_system_matrix(&self, mu: f64) -> Result<SystemMatrix> {
        let shape = self.shape;
        let ng = shape.0 * shape.1;
        let mut t = Vec::new();
        match &self.spec.physics {
            Physics::Wave2d { .. } => {
                self.d1[0].triplets(shape, 0, 0, ng, |_, _| -1.0, &mut t);
                self.d1[1].triplets(shape, 1, 0, 2 * ng, |_, _| -1.0, &mut t);
                self.d1[0].triplets(shape, 0, ng, 0, |_, _| -1.0, &mut t);
                self.d1[1].triplets(shape, 1, 2 * ng, 0, |_, _| -1.0, &mut t);
                Ok(SystemMatrix::from_triplets(3 * ng, 3 * ng, t))
            }
            Physics::Vlasov { .. } => {
                let vel = self.spec.grid.axis(1);
                let dphi = self.potential_slope(mu);
                self.d1[0].triplets(shape, 0, 0, 0, |_, j| -vel.coord(j), &mut t);
                self.d1[1].triplets(shape, 1, 0, 0, |i, _| dphi[i], &mut t);
                Ok(SystemMatrix::from_triplets(ng, ng, t))
            }
            Physics::Burgers { .. } => Err(QmngError::InvalidConfig(
                "burgers is nonlinear and has no system matrix".into(),
            )),
        }
    }

    /// Integrates one trajectory and keeps every `subsample`-th state
    /// (including `t = 0`). Returns the stored states as columns.
    pub fn trajectory(&self, mu: f64, subsample: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
        if subsample == 0 {
            return Err(QmngError::InvalidConfig("subsample must be at least 1".into()));
        }
        let steps = self.spec.steps();
        let dt = self.spec.dt;
        let mut q = self.initial_condition(mu);
        let mut ws = Rk4Workspace::new(q.len());
        let mut f = |x: &[f64], _t: f64, out: &mut [f64]| -> Result<()> {
            self.rhs_into(x, mu, out);
            Ok(())
        };
        let mut times = vec![0.0];
        let mut states = vec![q.clone()];
        for k in 0..steps {
            let t = k as f64 * dt;
            ws.step(&mut f, q.as_mut_slice(), t, dt).map_err(|e| match e {
                QmngError::Integration { t, reason, .. } => QmngError::Integration { mu, t, reason },
                other => other,
            })?;
            if (k + 1) % subsample == 0 {
                times.push((k + 1) as f64 * dt);
                states.push(q.clone());
            }
        }
        Ok((times, states))
    }

    /// Snapshot matrix over `params`, parameter-major column order.
    pub fn generate_snapshots(&self, params: &[f64], subsample: usize) -> Result<SnapshotMatrix> {
        let mut columns = Vec::new();
        let mut times = Vec::new();
        for (p, &mu) in params.iter().enumerate() {
            let (t, states) = self.trajectory(mu, subsample)?;
            if p == 0 {
                times = t;
            }
            columns.extend(states);
        }
        SnapshotMatrix::from_columns(&columns, times, params.to_vec(), self.spec.grid.clone(), Some(self.kind()))
    }
}

/// Equidistant points covering `[lo, hi]` including both ends.
pub fn equidistant_params(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(kind: ModelKind, points: usize) -> FullModel {
        FullModel::new(FullModelSpec::preset(kind, Scale::Desk).with_points(points).unwrap()).unwrap()
    }

    fn random_state(model: &FullModel, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(model.state_dim(), |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_states_have_zero_rhs() {
        for kind in [ModelKind::Wave2d, ModelKind::Vlasov, ModelKind::Burgers] {
            let m = small(kind, 16);
            let q = DVector::from_element(m.state_dim(), 1.7);
            let f = m.rhs(&q, 0.3).unwrap();
            assert!(f.amax() < 1e-10, "{kind:?}: {}", f.amax());
        }
        let b = small(ModelKind::Burgers, 16);
        assert_eq!(b.rhs(&DVector::zeros(16), 0.5).unwrap().amax(), 0.0);
    }

    #[test]
    fn wave_gradient_of_sine() {
        let n = 128;
        let m = small(ModelKind::Wave2d, n);
        let ng = n * n;
        let l = 8.0;
        let k = 2.0 * PI / l;
        let mut q = DVector::zeros(3 * ng);
        for idx in 0..ng {
            let p = m.grid().point(idx);
            q[idx] = (k * p[0]).sin();
        }
        let f = m.rhs(&q, 0.0).unwrap();
        let h = l / n as f64;
        let mut err = 0.0f64;
        for idx in 0..ng {
            let p = m.grid().point(idx);
            err = err.max((f[ng + idx] + k * (k * p[0]).cos()).abs());
            err = err.max(f[2 * ng + idx].abs());
        }
        assert!(err < 0.5 * k.powi(3) * h * h, "err {err}");
    }

    #[test]
    fn linear_models_superpose_and_match_matrix() {
        for kind in [ModelKind::Wave2d, ModelKind::Vlasov] {
            let m = small(kind, 16);
            let a = m.assemble_system_matrix(0.35).unwrap();
            let (q1, q2) = (random_state(&m, 1), random_state(&m, 2));
            let (s, t) = (0.7, -1.3);
            let lhs = m.rhs(&(&q1 * s + &q2 * t), 0.35).unwrap();
            let rhs = m.rhs(&q1, 0.35).unwrap() * s + m.rhs(&q2, 0.35).unwrap() * t;
            assert!((&lhs - &rhs).amax() < 1e-12 * (1.0 + lhs.amax()));
            for seed in 0..20 {
                let q = random_state(&m, 100 + seed);
                let f = m.rhs(&q, 0.35).unwrap();
                let aq = a.mul_vec(&q).unwrap();
                assert!((&f - &aq).norm() <= 1e-12 * f.norm());
            }
            for r in 0..a.rows() {
                assert!(a.row_sum(r).abs() < 1e-10);
            }
        }
        assert!(small(ModelKind::Burgers, 16).assemble_system_matrix(0.5).is_err());
    }

    #[test]
    fn vlasov_matrix_oracle_on_smooth_field() {
        let m = small(ModelKind::Vlasov, 64);
        let q = DVector::from_fn(m.state_dim(), |idx, _| {
            let p = m.grid().point(idx);
            (PI * p[0]).sin() * (PI * p[1]).cos()
        });
        let a = m.assemble_system_matrix(0.35).unwrap();
        let f = m.rhs(&q, 0.35).unwrap();
        let dense = a.to_dense();
        let aq = &dense * &q;
        assert!((&f - &aq).norm() <= 1e-12 * f.norm());
    }

    #[test]
    fn periodic_shift_equivariance() {
        let m = small(ModelKind::Burgers, 32);
        let q = random_state(&m, 7);
        let shifted = DVector::from_fn(32, |i, _| q[(i + 31) % 32]);
        let f = m.rhs(&q, 0.5).unwrap();
        let fs = m.rhs(&shifted, 0.5).unwrap();
        for i in 0..32 {
            assert_eq!(fs[i], f[(i + 31) % 32]);
        }
    }

    #[test]
    fn burgers_fourth_order_convergence() {
        let err = |n: usize| {
            let mut spec = FullModelSpec::preset(ModelKind::Burgers, Scale::Desk).with_points(n).unwrap();
            spec.physics = Physics::Burgers { alpha: 0.0, sigma: 0.005 };
            let m = FullModel::new(spec).unwrap();
            let q = DVector::from_fn(n, |i, _| (2.0 * PI * m.grid().axis(0).coord(i)).sin());
            let f = m.rhs(&q, 0.5).unwrap();
            (0..n)
                .map(|i| {
                    let x = m.grid().axis(0).coord(i);
                    (f[i] - (2.0 * PI * x).sin() * 2.0 * PI * (2.0 * PI * x).cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let slope = (err(32) / err(64)).log2();
        assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn initial_conditions() {
        let w = FullModel::preset(ModelKind::Wave2d, Scale::Desk);
        let q = w.initial_condition(0.0);
        // x0 = (2, 2) is a grid node of the 64x64 grid on [-4, 4)^2
        let idx = 48 * 64 + 48;
        assert_eq!(w.grid().point(idx), vec![2.0, 2.0]);
        assert_eq!(q[idx], 1.0);
        assert!(q.rows(w.grid().len(), 2 * w.grid().len()).amax() == 0.0);

        let b = FullModel::preset(ModelKind::Burgers, Scale::Desk);
        let q = b.initial_condition(0.5);
        let peak = 1.0 / (2.0 * PI * 0.005);
        assert!((q.max() - peak).abs() < 1e-9);
        assert!((peak - 31.830988618379067).abs() < 1e-12);
        let imax = q.imax();
        assert!((b.grid().axis(0).coord(imax) - 0.5).abs() < 1e-12);

        let v = FullModel::preset(ModelKind::Vlasov, Scale::Desk);
        assert!(v.initial_condition(0.3).min() > 0.0);
    }

    #[test]
    fn snapshot_counting() {
        let mut spec = FullModelSpec::preset(ModelKind::Burgers, Scale::Desk).with_points(32).unwrap();
        spec.t_end = 0.01;
        let m = FullModel::new(spec).unwrap();
        let steps = m.spec().steps();
        assert_eq!(steps, 100);
        let s = m.generate_snapshots(&[0.4, 0.5], steps).unwrap();
        assert_eq!(s.ncols(), 4);
        assert_eq!(s.data().column(0), m.initial_condition(0.4));
        assert_eq!(s.data().column(2), m.initial_condition(0.5));
        assert!(m.generate_snapshots(&[0.4], 0).is_err());
        // the desk wave preset stores floor(8000 / 40) + 1 states per trajectory
        let w = FullModelSpec::preset(ModelKind::Wave2d, Scale::Desk);
        assert_eq!(w.steps() / 40 + 1, 201);
    }

    #[test]
    fn rejects_bad_grids() {
        let mut spec = FullModelSpec::preset(ModelKind::Wave2d, Scale::Desk);
        spec.grid = Grid::periodic_2d((-4.0, 4.0, 16), (-4.0, 4.0, 8)).unwrap();
        assert!(FullModel::new(spec).is_err());
        let mut spec = FullModelSpec::preset(ModelKind::Burgers, Scale::Desk);
        spec.grid = Grid::periodic_2d((-1.0, 1.0, 8), (-1.0, 1.0, 8)).unwrap();
        assert!(FullModel::new(spec).is_err());
    }
}
