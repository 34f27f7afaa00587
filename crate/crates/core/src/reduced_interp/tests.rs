use super::*;
use crate::full_models::{ModelKind, Scale};
use crate::reduced_vector::{assemble_jacobian, qmng_rhs};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn burgers() -> FullModel {
    FullModel::preset(ModelKind::Burgers, Scale::Desk)
}

/// Manifold with smooth columns on the grid of `model`: low Fourier modes in
/// `V`, products of modes (projected) in `W`.
fn smooth_manifold(model: &FullModel, n: usize, w_scale: f64) -> QuadraticManifold {
    let ax = *model.grid().axis(0);
    let np = ax.points;
    let x = |i: usize| ax.coord(i);
    let mode = |k: usize, xv: f64| {
        let f = (k / 2 + 1) as f64 * PI;
        if k % 2 == 0 {
            (f * xv).sin()
        } else {
            (f * xv).cos()
        }
    };
    let v = DMatrix::from_fn(np, n, |i, k| mode(k, x(i)));
    let v = v.qr().q();
    let mut w = DMatrix::from_fn(np, n * n, |i, c| {
        let (a, b) = (c / n, c % n);
        w_scale * mode(a, x(i)) * mode(b, x(i)) * (1.0 + 0.1 * c as f64)
    });
    let vtw = v.tr_mul(&w);
    w -= &v * vtw;
    let s0 = DVector::from_fn(np, |i, _| 0.3 + 0.2 * (PI * x(i)).sin());
    QuadraticManifold::new(s0, v, w, 0.0).unwrap()
}

fn grid_set(model: &FullModel) -> CollocationSet {
    let ax = model.grid().axis(0);
    CollocationSet {
        points: (0..ax.points).map(|i| ax.coord(i)).collect(),
        strategy: Strategy::Equidistant,
        seed: 0,
    }
}

fn random_theta(n: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

#[test]
fn decoder_reproduces_nodes() {
    let model = burgers();
    let m = smooth_manifold(&model, 3, 0.2);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let th = DVector::from_vec(vec![0.4, -0.2, 0.9]);
    let q = m.decode(&th).unwrap();
    let ax = model.grid().axis(0);
    for i in (0..ax.points).step_by(7) {
        assert!((basis.decode_at(&th, ax.coord(i)).unwrap()[0] - q[i]).abs() < 1e-12);
    }
}

#[test]
fn rejects_two_dimensional_grids() {
    let wave = FullModel::preset(ModelKind::Wave2d, Scale::Desk);
    let grid = wave.grid();
    let m = QuadraticManifold::new(
        DVector::zeros(grid.len()),
        DMatrix::from_fn(grid.len(), 1, |i, _| if i == 0 { 1.0 } else { 0.0 }),
        DMatrix::zeros(grid.len(), 1),
        0.0,
    )
    .unwrap();
    assert!(matches!(build_spline_basis(&m, grid), Err(QmngError::InvalidConfig(_))));
    assert!(sample_collocation(grid, 4, Strategy::Equidistant, 0).is_err());
}

#[test]
fn collocation_sampling() {
    let grid = Grid::periodic_1d(-1.0, 1.0, 16).unwrap();
    let eq = sample_collocation(&grid, 4, Strategy::Equidistant, 9).unwrap();
    assert_eq!(eq.points, vec![-1.0, -0.5, 0.0, 0.5]);
    let a = sample_collocation(&grid, 50, Strategy::UniformFixed, 3).unwrap();
    let b = sample_collocation(&grid, 50, Strategy::UniformFixed, 3).unwrap();
    assert_eq!(a, b);
    let c = sample_collocation(&grid, 50, Strategy::UniformFixed, 4).unwrap();
    assert_ne!(a.points, c.points);
    let big = sample_collocation(&grid, 10_000, Strategy::UniformResampled, 1).unwrap();
    assert!(big.points.iter().all(|&x| (-1.0..1.0).contains(&x)));
    let mean = big.points.iter().sum::<f64>() / 1e4;
    let sigma = (1.0f64 / 3.0 / 1e4).sqrt();
    assert!(mean.abs() < 3.0 * sigma, "{mean}");
    assert!(sample_collocation(&grid, 0, Strategy::Equidistant, 0).is_err());
}

#[test]
fn on_grid_jacobian_matches_vector_path() {
    let model = burgers();
    let m = smooth_manifold(&model, 4, 0.2);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let xi = grid_set(&model);
    let j0 = assemble_j_xi(&basis, &DVector::zeros(4), &xi).unwrap();
    assert!((&j0 - m.basis()).amax() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let th = random_theta(4, 1.0, &mut rng);
        let jx = assemble_j_xi(&basis, &th, &xi).unwrap();
        assert!((jx - assemble_jacobian(&m, &th).unwrap()).amax() < 1e-12);
    }
}

#[test]
fn jacobian_matches_finite_differences_off_grid() {
    let model = burgers();
    let m = smooth_manifold(&model, 4, 0.3);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let xi = sample_collocation(model.grid(), 64, Strategy::UniformFixed, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let th = random_theta(4, 1.0, &mut rng);
    let jac = assemble_j_xi(&basis, &th, &xi).unwrap();
    let eps = 1e-6;
    for (p, &x) in xi.points.iter().enumerate() {
        for j in 0..4 {
            let mut tp = th.clone();
            let mut tm = th.clone();
            tp[j] += eps;
            tm[j] -= eps;
            let fd = (basis.decode_at(&tp, x).unwrap()[0] - basis.decode_at(&tm, x).unwrap()[0]) / (2.0 * eps);
            assert!((fd - jac[(p, j)]).abs() < 1e-7);
        }
    }
}

#[test]
fn burgers_rhs_on_trivial_fields() {
    let model = burgers();
    let pde = BurgersPde::from_model(&model).unwrap();
    let np = model.state_dim();
    let v = DMatrix::from_fn(np, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 } / (np as f64).sqrt());
    let xi = sample_collocation(model.grid(), 40, Strategy::UniformFixed, 1).unwrap();
    let zero = QuadraticManifold::new(DVector::zeros(np), v.clone(), DMatrix::zeros(np, 1), 0.0).unwrap();
    let basis = build_spline_basis(&zero, model.grid()).unwrap();
    assert!(assemble_f_xi(&basis, &DVector::zeros(1), &xi, 0.5, &pde).unwrap().iter().all(|&f| f == 0.0));
    let flat = QuadraticManifold::new(DVector::from_element(np, 0.7), v, DMatrix::zeros(np, 1), 0.0).unwrap();
    let basis = build_spline_basis(&flat, model.grid()).unwrap();
    let f = assemble_f_xi(&basis, &DVector::zeros(1), &xi, 0.5, &pde).unwrap();
    assert!(f.amax() < 1e-12);
}

#[test]
fn burgers_rhs_matches_full_model_on_grid() {
    let model = burgers();
    let pde = BurgersPde::from_model(&model).unwrap();
    let m = smooth_manifold(&model, 4, 0.2);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let xi = grid_set(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let th = random_theta(4, 1.0, &mut rng);
        let fx = assemble_f_xi(&basis, &th, &xi, 0.5, &pde).unwrap();
        let full = model.rhs(&m.decode(&th).unwrap(), 0.5).unwrap();
        assert!((&fx - &full).norm() < 1e-3 * full.norm(), "{}", (&fx - &full).norm() / full.norm());
    }
}

#[test]
fn least_squares_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let jac = DMatrix::from_fn(30, 5, |_, _| rng.gen_range(-1.0..1.0));
    let eta = random_theta(5, 1.0, &mut rng);
    let (sol, rank) = solve_collocation_lstsq(&jac, &(&jac * &eta)).unwrap();
    assert_eq!(rank, 5);
    assert!((sol - &eta).amax() < 1e-12);

    let sq = DMatrix::from_fn(5, 5, |i, j| if i == j { 3.0 } else { 0.0 } + 0.1 * ((i + 2 * j) as f64).sin());
    let f = random_theta(5, 1.0, &mut rng);
    let (sol, rank) = solve_collocation_lstsq(&sq, &f).unwrap();
    assert_eq!(rank, 5);
    assert!((&sq * sol - f).amax() < 1e-12);

    let mut def = jac.clone();
    let c0 = def.column(0).into_owned();
    def.column_mut(4).copy_from(&c0);
    let (sol, rank) = solve_collocation_lstsq(&def, &(&def * &eta)).unwrap();
    assert_eq!(rank, 4);
    // minimal norm: the two copies share the weight equally
    assert!((sol[0] - sol[4]).abs() < 1e-10);
}

#[test]
fn on_grid_velocity_matches_vector_path() {
    let model = burgers();
    let m = smooth_manifold(&model, 4, 0.2);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let xi = grid_set(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let th = random_theta(4, 1.0, &mut rng);
        let jx = assemble_j_xi(&basis, &th, &xi).unwrap();
        let f = model.rhs(&m.decode(&th).unwrap(), 0.5).unwrap();
        let (sol, _) = solve_collocation_lstsq(&jx, &f).unwrap();
        let direct = qmng_rhs(&m, &model, &th, 0.5).unwrap();
        assert!((&sol - &direct).amax() < 1e-8 * direct.amax().max(1.0));
    }
}

#[test]
fn interp_velocity_consistent_with_exact_forcing() {
    let model = burgers();
    let m = smooth_manifold(&model, 3, 0.2);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let xi = sample_collocation(model.grid(), 48, Strategy::UniformFixed, 2).unwrap();
    let th = DVector::from_vec(vec![0.3, 0.1, -0.5]);
    let eta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    struct Pushforward {
        values: Vec<f64>,
        index: std::cell::Cell<usize>,
    }
    impl PointwisePde for Pushforward {
        fn derivative_order(&self) -> usize {
            0
        }
        fn eval(&self, _x: f64, _u: [f64; 3], _mu: f64) -> f64 {
            let i = self.index.get();
            self.index.set(i + 1);
            self.values[i]
        }
    }
    let jeta = assemble_j_xi(&basis, &th, &xi).unwrap() * &eta;
    let pde = Pushforward {
        values: jeta.as_slice().to_vec(),
        index: std::cell::Cell::new(0),
    };
    let (sol, rank) = qmng_interp_rhs(&basis, &th, &xi, 0.0, &pde).unwrap();
    assert_eq!(rank, 3);
    assert!((sol - eta).amax() < 1e-10);
}

#[test]
fn high_order_pde_rejected() {
    struct Third;
    impl PointwisePde for Third {
        fn derivative_order(&self) -> usize {
            3
        }
        fn eval(&self, _: f64, _: [f64; 3], _: f64) -> f64 {
            0.0
        }
    }
    let model = burgers();
    let m = smooth_manifold(&model, 2, 0.1);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let xi = sample_collocation(model.grid(), 8, Strategy::Equidistant, 0).unwrap();
    let r = assemble_f_xi(&basis, &DVector::zeros(2), &xi, 0.0, &Third);
    assert!(matches!(r, Err(QmngError::InvalidConfig(_))));
    assert!(InterpQmng::new(&basis, &Third, 8, Strategy::Equidistant, 0, Scheme::Rk4).is_err());
    assert!(BurgersPde::from_model(&FullModel::preset(ModelKind::Vlasov, Scale::Desk)).is_err());
}

#[test]
fn resampling_is_per_step_and_deterministic() {
    let model = burgers();
    let pde = BurgersPde::from_model(&model).unwrap();
    let m = smooth_manifold(&model, 3, 0.2);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let mut q = InterpQmng::new(&basis, &pde, 32, Strategy::UniformResampled, 11, Scheme::Rk4).unwrap();
    let th = [0.1, 0.2, 0.3];
    let mut out = [0.0; 3];
    let first = q.points().to_vec();
    for _ in 0..4 {
        q.rhs_into(&th, 0.5, &mut out).unwrap();
        assert_eq!(q.points(), first.as_slice());
    }
    q.rhs_into(&th, 0.5, &mut out).unwrap();
    assert_ne!(q.points(), first.as_slice());

    let th0 = m.encode(&model.initial_condition(0.5)).unwrap();
    let opts = IntegrateOptions::new(Scheme::Rk4, 1e-4, 50);
    let a = simulate_interp(&basis, &pde, &th0, 0.5, &opts, 32, Strategy::UniformResampled, 11).unwrap();
    let b = simulate_interp(&basis, &pde, &th0, 0.5, &opts, 32, Strategy::UniformResampled, 11).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.meta.collocation_points, Some(32));
    assert_eq!(a.meta.strategy.as_deref(), Some("uniform-resampled"));
    assert_eq!(a.meta.seed, Some(11));
    assert_eq!(a.meta.rank_deficient_steps, Some(0));
    let c = simulate_interp(&basis, &pde, &th0, 0.5, &opts, 32, Strategy::UniformResampled, 12).unwrap();
    assert_ne!(a.states, c.states);
}

#[test]
fn too_few_points_flag_rank_deficiency() {
    let model = burgers();
    let pde = BurgersPde::from_model(&model).unwrap();
    let m = smooth_manifold(&model, 4, 0.2);
    let basis = build_spline_basis(&m, model.grid()).unwrap();
    let th0 = DVector::from_vec(vec![0.1, 0.0, -0.1, 0.2]);
    let opts = IntegrateOptions::new(Scheme::Rk4, 1e-4, 5);
    let tr = simulate_interp(&basis, &pde, &th0, 0.5, &opts, 2, Strategy::UniformResampled, 1).unwrap();
    assert_eq!(tr.meta.rank_deficient_steps, Some(5));
}
