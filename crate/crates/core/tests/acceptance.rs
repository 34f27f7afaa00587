//! Acceptance suite. Prints one PASS/FAIL line per criterion. With
//! `ACCEPTANCE_STRICT=1` the process exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use qmng::full_models::{FullModel, ModelKind};
use qmng::harness::bench::{benchmark_online, log_log_slope, BenchmarkOptions};
use qmng::harness::config::CollocationConfig;
use qmng::harness::pipeline::{self, ErrorReport, GeneratedData, OperatorStore};
use qmng::harness::{ExperimentConfig, Method};
use qmng::manifold::{ManifoldTrainer, QuadraticManifold};
use qmng::reduced_interp::{assemble_j_xi, sample_collocation, SplineBasis, Strategy};
use qmng::reduced_vector::{
    assemble_jacobian, integrate_reduced, ConstantTestspace, IntegrateOptions, LinearReducedRhs, QmngDirect, Scheme,
};
use qmng::tensor_core::kron_features;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const NS: [usize; 6] = [5, 10, 15, 20, 25, 30];

type Outcome = Result<String, String>;

fn workdir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

/// One trained and simulated desk experiment.
struct Study {
    cfg: ExperimentConfig,
    manifolds: Vec<QuadraticManifold>,
    store: OperatorStore,
    report: ErrorReport,
}

struct Desk {
    model: FullModel,
    data: GeneratedData,
    low_gamma: Study,
}

fn run_study(cfg: ExperimentConfig, model: &FullModel, data: &GeneratedData) -> Study {
    let t = Instant::now();
    let manifolds = pipeline::train(&cfg, &data.train).expect("training");
    let store = if cfg.model.is_linear() {
        pipeline::precompute(&cfg, model, &manifolds).expect("precompute")
    } else {
        OperatorStore::default()
    };
    let (runs, failures) = pipeline::simulate(&cfg, model, &manifolds, &store);
    let mut report = pipeline::evaluate(&cfg, &manifolds, data, &runs).expect("evaluate");
    report.failures.extend(store.failures.iter().cloned().chain(failures));
    std::fs::create_dir_all(&cfg.output_dir).expect("output dir");
    report.write_csv(cfg.output_dir.join("report.csv")).expect("report");
    for r in &report.rows {
        eprintln!(
            "    n={:>2} {:<30} error {:.3e} std {:.1e} unstable {}",
            r.n, r.method, r.error_mean, r.error_std, r.unstable_count
        );
    }
    for f in &report.failures {
        eprintln!("    failed: {f}");
    }
    eprintln!(
        "  [{} gamma={:e} n={:?}: {:.0} s]",
        cfg.model.name(),
        cfg.gamma,
        cfg.n,
        t.elapsed().as_secs_f64()
    );
    Study {
        cfg,
        manifolds,
        store,
        report,
    }
}

fn desk_config(kind: ModelKind) -> ExperimentConfig {
    let (methods, collocation) = match kind {
        ModelKind::Burgers => (
            vec![Method::Interp],
            vec![
                CollocationConfig {
                    m: 64,
                    strategy: Strategy::UniformResampled,
                },
                CollocationConfig {
                    m: 256,
                    strategy: Strategy::UniformResampled,
                },
            ],
        ),
        _ => (vec![Method::QmngLinear, Method::ConstantTestspace], Vec::new()),
    };
    ExperimentConfig {
        model: kind,
        n: NS.to_vec(),
        gamma: 1e-6,
        methods,
        collocation,
        output_dir: workdir(&format!("{}-low-gamma", kind.name())),
        ..Default::default()
    }
}

fn build_desk(kind: ModelKind) -> Desk {
    let cfg = desk_config(kind);
    let model = cfg.full_model().expect("preset");
    let t = Instant::now();
    let data = pipeline::generate(&cfg, &model).expect("snapshots");
    eprintln!("  [{} snapshots: {:.0} s]", kind.name(), t.elapsed().as_secs_f64());
    let low_gamma = run_study(cfg, &model, &data);
    Desk { model, data, low_gamma }
}

fn desk(kind: ModelKind) -> &'static Desk {
    static WAVE: OnceLock<Desk> = OnceLock::new();
    static VLASOV: OnceLock<Desk> = OnceLock::new();
    static BURGERS: OnceLock<Desk> = OnceLock::new();
    let cell = match kind {
        ModelKind::Wave2d => &WAVE,
        ModelKind::Vlasov => &VLASOV,
        ModelKind::Burgers => &BURGERS,
    };
    cell.get_or_init(|| build_desk(kind))
}

fn high_gamma(kind: ModelKind) -> &'static Study {
    static WAVE: OnceLock<Study> = OnceLock::new();
    static VLASOV: OnceLock<Study> = OnceLock::new();
    let cell = match kind {
        ModelKind::Wave2d => &WAVE,
        ModelKind::Vlasov => &VLASOV,
        ModelKind::Burgers => unreachable!("no high-gamma study for burgers"),
    };
    cell.get_or_init(|| {
        let d = desk(kind);
        let cfg = ExperimentConfig {
            gamma: 1e3,
            n: vec![20],
            output_dir: workdir(&format!("{}-high-gamma", kind.name())),
            ..d.low_gamma.cfg.clone()
        };
        run_study(cfg, &d.model, &d.data)
    })
}

fn all_desks() -> [&'static Desk; 3] {
    [desk(ModelKind::Wave2d), desk(ModelKind::Vlasov), desk(ModelKind::Burgers)]
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Typical size of the reduced coordinates along the test trajectories.
fn theta_scale(d: &Desk, m: &QuadraticManifold) -> f64 {
    let q0 = d.model.initial_condition(d.low_gamma.cfg.test_params()[0]);
    (&q0 - m.s0()).norm().max(1.0)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn full_rank() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = f64::INFINITY;
    for d in all_desks() {
        for m in &d.low_gamma.manifolds {
            let scale = theta_scale(d, m) / (m.n() as f64).sqrt();
            for _ in 0..100 {
                let theta = normal_vec(&mut rng, m.n(), scale);
                let j = assemble_jacobian(m, &theta).map_err(|e| e.to_string())?;
                let sigma = j.singular_values().min();
                worst = worst.min(sigma);
            }
        }
    }
    check(worst >= 1.0 - 1e-8, format!("min singular value {worst:.12}"))
}

fn orthogonality() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    let mut manifolds: Vec<&QuadraticManifold> = all_desks().iter().flat_map(|d| &d.low_gamma.manifolds).collect();
    manifolds.extend(&high_gamma(ModelKind::Wave2d).manifolds);
    manifolds.extend(&high_gamma(ModelKind::Vlasov).manifolds);
    for m in &manifolds {
        let (o, vtw) = m.orthogonality_defects();
        worst = (worst.0.max(o), worst.1.max(vtw));
    }
    check(
        worst.0 < 1e-10 && worst.1 < 1e-8,
        format!("{} manifolds, max |VtV-I| {:.2e}, max |VtW| {:.2e}", manifolds.len(), worst.0, worst.1),
    )
}

fn path_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for kind in [ModelKind::Wave2d, ModelKind::Vlasov] {
        let d = desk(kind);
        let mu = d.low_gamma.cfg.test_params()[0];
        let dt = d.model.spec().dt;
        let opts = IntegrateOptions::new(Scheme::Rk4, dt, 100);
        for m in d.low_gamma.manifolds.iter().filter(|m| [5, 10, 20].contains(&m.n())) {
            let ops = &d
                .low_gamma
                .store
                .get(&d.model, m.n(), 0)
                .ok_or_else(|| format!("no operators for n = {}", m.n()))?
                .0;
            let theta0 = m.encode(&d.model.initial_condition(mu)).map_err(|e| e.to_string())?;
            let mut lin = LinearReducedRhs::new(ops);
            let a = integrate_reduced(|th, _t, out| lin.rhs_into(th, out), &theta0, mu, &opts).map_err(|e| e.to_string())?;
            let mut direct = QmngDirect::new(m, &d.model).map_err(|e| e.to_string())?;
            let b = integrate_reduced(|th, _t, out| direct.rhs_into(th, mu, out), &theta0, mu, &opts)
                .map_err(|e| e.to_string())?;
            if !a.is_complete() || !b.is_complete() {
                return Err(format!("{} n = {}: incomplete trajectory", kind.name(), m.n()));
            }
            for (x, y) in a.states.iter().zip(&b.states) {
                worst = worst.max((x - y).amax());
            }
        }
    }
    check(worst < 1e-8, format!("max |theta_linear - theta_direct| {worst:.2e} over 100 steps"))
}

fn online_independence() -> Outcome {
    let cfg = ExperimentConfig::default();
    let opts = BenchmarkOptions {
        points: vec![64, 128],
        ns: vec![10, 20, 40],
        ..Default::default()
    };
    let rows = benchmark_online(&cfg, &opts).map_err(|e| e.to_string())?;
    let at = |points: usize, n: usize| {
        rows.iter()
            .find(|r| r.points == points && r.n == n)
            .map(|r| r.reduced_step_seconds)
            .unwrap()
    };
    let ratio = at(128, 20) / at(64, 20);
    let ns = [10.0, 20.0, 40.0];
    let slope = log_log_slope(&ns, &[at(64, 10), at(64, 20), at(64, 40)]);
    let slope_big = log_log_slope(&ns, &[at(128, 10), at(128, 20), at(128, 40)]);
    let full_grows = rows.iter().find(|r| r.points == 128).unwrap().full_step_seconds
        > rows.iter().find(|r| r.points == 64).unwrap().full_step_seconds;
    check(
        (0.7..=1.3).contains(&ratio) && (3.0..=4.6).contains(&slope) && full_grows,
        format!("4N/N step-time ratio {ratio:.3}, slope {slope:.2} (N) / {slope_big:.2} (4N), full step grows: {full_grows}"),
    )
}

fn residual_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let desks = all_desks();
    let mut strict = 0;
    let mut worst_ratio = 0.0f64;
    for i in 0..100 {
        let d = desks[i % 3];
        let m = &d.low_gamma.manifolds[rng.gen_range(0..NS.len())];
        let (lo, hi) = d.model.spec().param_domain;
        let mu = rng.gen_range(lo..=hi);
        let theta = normal_vec(&mut rng, m.n(), theta_scale(d, m) / (m.n() as f64).sqrt());
        let mut q = QmngDirect::new(m, &d.model).map_err(|e| e.to_string())?;
        let mut ct = ConstantTestspace::new(m, &d.model).map_err(|e| e.to_string())?;
        let mut v_q = vec![0.0; m.n()];
        let mut v_c = vec![0.0; m.n()];
        q.rhs_into(theta.as_slice(), mu, &mut v_q).map_err(|e| e.to_string())?;
        ct.rhs_into(theta.as_slice(), mu, &mut v_c).map_err(|e| e.to_string())?;
        let r_q = q.residual_norm(theta.as_slice(), &v_q, mu).map_err(|e| e.to_string())?;
        let r_c = q.residual_norm(theta.as_slice(), &v_c, mu).map_err(|e| e.to_string())?;
        if r_q > r_c * (1.0 + 1e-12) {
            return Err(format!("instance {i}: qmng residual {r_q:e} > baseline {r_c:e}"));
        }
        // Kᵀ(f − J θ̇_c) equals Jᵀ(f − J θ̇_c) because VᵀJ = I
        let j = assemble_jacobian(m, &theta).map_err(|e| e.to_string())?;
        let f = d.model.rhs(&m.decode(&theta).map_err(|e| e.to_string())?, mu).map_err(|e| e.to_string())?;
        let resid = &f - &j * DVector::from_vec(v_c.clone());
        let k = &j - m.basis();
        let g = k.tr_mul(&resid).norm();
        if g > 1e-8 * k.norm() * resid.norm() {
            if r_q >= r_c {
                return Err(format!("instance {i}: K^T r = {g:e} but residuals tie"));
            }
            strict += 1;
        }
        worst_ratio = worst_ratio.max(r_q / r_c);
    }
    Ok(format!("100 instances, {strict} strict improvements, max residual ratio {worst_ratio:.4}"))
}

fn stats(study: &Study, method: &str, n: usize) -> Result<(f64, usize, Vec<Option<f64>>), String> {
    let row = study
        .report
        .row(n, method)
        .ok_or_else(|| format!("no {method} row for n = {n}: {:?}", study.report.failures))?;
    // reconstruction rows carry no per-cell record
    let per_param = study
        .report
        .cells
        .iter()
        .find(|c| c.n == n && c.method == method)
        .map(|c| c.per_param.clone())
        .unwrap_or_default();
    Ok((row.error_mean, row.unstable_count, per_param))
}

/// The baseline needs strong regularization to stay stable; its error there
/// is compared with the method on the well-fitted (γ = 1e-6) manifold.
fn stability() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in [ModelKind::Wave2d, ModelKind::Vlasov] {
        let low = &desk(kind).low_gamma;
        let (q_err, q_unstable, _) = stats(low, "qmng-linear", 20)?;
        let (_, c_unstable, c_per) = stats(low, "constant-testspace", 20)?;
        let c_blowup = c_per.iter().filter(|e| e.map_or(false, |e| e > 1.0)).count();
        let low_ok = q_unstable == 0 && c_unstable + c_blowup >= 1;
        let high = high_gamma(kind);
        let (q_err_hi, q_unst_hi, _) = stats(high, "qmng-linear", 20)?;
        let (c_err, c_unst_hi, _) = stats(high, "constant-testspace", 20)?;
        let high_ok = q_unst_hi == 0 && c_unst_hi == 0 && c_err >= 5.0 * q_err;
        ok &= low_ok && high_ok;
        parts.push(format!(
            "{}: gamma 1e-6 qmng unstable {q_unstable}, baseline unstable {c_unstable} + error>1 {c_blowup}; \
             gamma 1e3 baseline unstable {c_unst_hi}, error {c_err:.3e} vs qmng {q_err:.3e} ({:.0}x; qmng at 1e3 {q_err_hi:.3e})",
            kind.name(),
            c_err / q_err
        ));
    }
    check(ok, parts.join("; "))
}

fn non_monotone_steps(xs: &[f64]) -> usize {
    xs.windows(2).filter(|w| w[1] > w[0]).count()
}

fn error_decay() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in [ModelKind::Wave2d, ModelKind::Vlasov] {
        let low = &desk(kind).low_gamma;
        let mut rec = Vec::new();
        let mut qm = Vec::new();
        for n in NS {
            rec.push(stats(low, "reconstruction", n)?.0);
            let (e, unstable, _) = stats(low, "qmng-linear", n)?;
            if unstable > 0 {
                ok = false;
            }
            qm.push(e);
        }
        let ratio = qm.iter().zip(&rec).map(|(q, r)| q / r).fold(0.0f64, f64::max);
        let min_ratio = qm.iter().zip(&rec).map(|(q, r)| q / r).fold(f64::INFINITY, f64::min);
        ok &= ratio <= 3.0 && min_ratio >= 0.5 && non_monotone_steps(&rec) <= 1 && non_monotone_steps(&qm) <= 1;
        parts.push(format!(
            "{}: qmng {:?}, reconstruction {:?}, max ratio {ratio:.2}",
            kind.name(),
            qm.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            rec.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ));
    }
    check(ok, parts.join("; "))
}

fn hyper_reduction() -> Outcome {
    let study = &desk(ModelKind::Burgers).low_gamma;
    let label = |m: usize| format!("interp-m{m}-{}", Strategy::UniformResampled);
    let mut ok = true;
    let mut lines = Vec::new();
    for n in NS {
        let rec = stats(study, "reconstruction", n)?.0;
        let (small, u_small, _) = stats(study, &label(64), n)?;
        let (large, u_large, _) = stats(study, &label(256), n)?;
        ok &= u_small == 0 && u_large == 0 && small <= 3.0 * large && small <= 3.0 * rec;
        lines.push(format!("n={n}: m64 {small:.2e} m256 {large:.2e} rec {rec:.2e}"));
    }
    check(ok, lines.join(", "))
}

fn fd_jacobians() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let d = desk(ModelKind::Burgers);
    for m in &d.low_gamma.manifolds {
        let scale = theta_scale(d, m) / (m.n() as f64).sqrt();
        let basis = SplineBasis::new(m, d.model.grid()).map_err(|e| e.to_string())?;
        let xi = sample_collocation(d.model.grid(), 64, Strategy::UniformFixed, 3).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let theta = normal_vec(&mut rng, m.n(), scale);
            let j = assemble_jacobian(m, &theta).map_err(|e| e.to_string())?;
            let jx = assemble_j_xi(&basis, &theta, &xi).map_err(|e| e.to_string())?;
            let mut fd = DMatrix::zeros(j.nrows(), j.ncols());
            let mut fdx = DMatrix::zeros(jx.nrows(), jx.ncols());
            let values_at = |t: &DVector<f64>| -> Result<DVector<f64>, String> {
                let mut out = DVector::zeros(xi.points.len());
                for (k, &x) in xi.points.iter().enumerate() {
                    out[k] = basis.decode_at(t, x).map_err(|e| e.to_string())?[0];
                }
                Ok(out)
            };
            for c in 0..m.n() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[c] += h;
                tm[c] -= h;
                let dc = (m.decode(&tp).unwrap() - m.decode(&tm).unwrap()) / (2.0 * h);
                fd.column_mut(c).copy_from(&dc);
                fdx.column_mut(c).copy_from(&((values_at(&tp)? - values_at(&tm)?) / (2.0 * h)));
            }
            worst = worst.max((&fd - &j).amax() / j.amax().max(1.0));
            worst = worst.max((&fdx - &jx).amax() / jx.amax().max(1.0));
        }
    }
    check(worst < 1e-7, format!("max scaled deviation {worst:.2e}"))
}

fn planted_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (big_n, n, cols) = (300, 4, 400);
    let v = DMatrix::from_fn(big_n, n, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    // small enough that the leading singular vectors of the data span V
    let w = DMatrix::from_fn(big_n, n * n, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
    let w = &w - &v * v.tr_mul(&w);
    let s0 = normal_vec(&mut rng, big_n, 1.0);
    let mut data = DMatrix::zeros(big_n, cols);
    // antithetic points on an ellipsoid keep the centred data exactly representable
    for c in (0..cols).step_by(2) {
        let g = normal_vec(&mut rng, n, 1.0);
        let th = DVector::from_fn(n, |i, _| 2.0 * g[i] / g.norm() * (1.0 - 0.15 * i as f64));
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let t = &th * sign;
            let s = &s0 + &v * &t + &w * kron_features(&t);
            data.column_mut(c + k).copy_from(&s);
        }
    }
    let m = ManifoldTrainer::from_data(&data)
        .and_then(|t| t.train(n, 1e-10, n))
        .map_err(|e| e.to_string())?;
    let rec = m.reconstruct_columns(&data).map_err(|e| e.to_string())?;
    let err = (rec - &data).norm() / data.norm();
    check(err < 1e-6, format!("relative reconstruction error {err:.2e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("full-rank Jacobian", full_rank),
        ("orthogonality", orthogonality),
        ("path equivalence", path_equivalence),
        ("online N-independence", online_independence),
        ("residual optimality", residual_optimality),
        ("stability trend", stability),
        ("error-decay trend", error_decay),
        ("hyper-reduction trend", hyper_reduction),
        ("finite-difference Jacobians", fd_jacobians),
        ("planted-model recovery", planted_recovery),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({secs:.0} s) {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} {name}: FAIL ({secs:.0} s) {detail}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("all criteria passed");
    } else {
        println!("failed criteria: {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
