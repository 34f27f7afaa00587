use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{QmngError, Result};
use crate::full_models::{FullModel, Rk4Workspace};
use crate::manifold::QuadraticManifold;
use crate::reduced_vector::{precompute_linear, LinearReducedRhs};

/// Smallest number of timing repetitions; the median is reported.
pub const MIN_REPETITIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    /// Grid points per axis of each full-model size.
    pub points: Vec<usize>,
    pub ns: Vec<usize>,
    pub repetitions: usize,
    /// Reduced RK4 steps per timed repetition.
    pub reduced_steps: usize,
    /// Full RK4 steps per timed repetition.
    pub full_steps: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            points: vec![64, 128],
            ns: vec![10, 20, 40],
            repetitions: MIN_REPETITIONS,
            reduced_steps: 50,
            full_steps: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub points: usize,
    pub full_dim: usize,
    pub n: usize,
    /// Median seconds per RK4 step of the precomputed reduced model.
    pub reduced_step_seconds: f64,
    /// Median seconds per RK4 step of the full model.
    pub full_step_seconds: f64,
    pub speedup: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Median of `reps` timings of `steps` calls to `step`, per call.
fn time_per_step(reps: usize, steps: usize, mut step: impl FnMut() -> Result<()>) -> Result<f64> {
    step()?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..steps {
            step()?;
        }
        samples.push(start.elapsed().as_secs_f64() / steps as f64);
    }
    Ok(median(samples))
}

/// Random manifold with orthonormal `V` and `VᵀW = 0`, centred at `s0`.
/// Per-step cost depends only on the sizes, so no training is needed.
fn synthetic_manifold(s0: &DVector<f64>, n: usize, gamma: f64, seed: u64) -> Result<QuadraticManifold> {
    let big_n = s0.len();
    if n > big_n {
        return Err(QmngError::InvalidConfig(format!("n = {n} exceeds the state dimension {big_n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DMatrix::from_fn(big_n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let w = DMatrix::from_fn(big_n, n * n, |_, _| rng.gen_range(-1e-3..1e-3));
    let w = &w - &v * (v.transpose() * &w);
    QuadraticManifold::new(s0.clone(), v, w, gamma)
}

/// Times one RK4 step of the precomputed reduced model and of the full model
/// across grid sizes and reduced dimensions.
pub fn benchmark_online(cfg: &ExperimentConfig, opts: &BenchmarkOptions) -> Result<Vec<BenchmarkRow>> {
    if !cfg.model.is_linear() {
        return Err(QmngError::InvalidConfig(format!(
            "online benchmark needs a linear model, {} is not",
            cfg.model.name()
        )));
    }
    if opts.repetitions < MIN_REPETITIONS {
        return Err(QmngError::InvalidConfig(format!(
            "at least {MIN_REPETITIONS} repetitions are required, got {}",
            opts.repetitions
        )));
    }
    let mu = cfg.test_params().first().cloned().unwrap_or(0.5);
    let mut rows = Vec::new();
    for &points in &opts.points {
        let model = FullModel::new(cfg.model_spec()?.with_points(points)?)?;
        let dt = model.spec().dt;

        let mut q = model.initial_condition(mu);
        let mut ws = Rk4Workspace::new(q.len());
        let mut t = 0.0;
        let full = time_per_step(opts.repetitions, opts.full_steps.max(1), || {
            let mut f = |x: &[f64], _t: f64, out: &mut [f64]| {
                model.rhs_into(x, mu, out);
                Ok(())
            };
            ws.step(&mut f, q.as_mut_slice(), t, dt)?;
            t += dt;
            Ok(())
        })?;

        let a = model.assemble_system_matrix(mu)?;
        let q0 = model.initial_condition(mu);
        for &n in &opts.ns {
            let m = synthetic_manifold(&q0, n, cfg.gamma, cfg.seed)?;
            let ops = precompute_linear(&m, &a, cfg.memory_budget_bytes)?;
            let theta0 = DVector::from_fn(n, |i, _| 0.1 / (1.0 + i as f64));
            let mut rhs = LinearReducedRhs::new(&ops);
            let mut theta = theta0.as_slice().to_vec();
            let mut rws = Rk4Workspace::new(theta.len());
            let reduced = time_per_step(opts.repetitions, opts.reduced_steps.max(1), || {
                if theta.iter().any(|x| !(x.abs() < 1e6)) {
                    theta.copy_from_slice(theta0.as_slice());
                }
                let mut f = |x: &[f64], _t: f64, out: &mut [f64]| rhs.rhs_into(x, out);
                rws.step(&mut f, &mut theta, 0.0, dt)
            })?;
            rows.push(BenchmarkRow {
                model: cfg.model.name().to_string(),
                points,
                full_dim: model.state_dim(),
                n: m.n(),
                reduced_step_seconds: reduced,
                full_step_seconds: full,
                speedup: full / reduced,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn write_benchmark_csv(path: impl AsRef<std::path::Path>, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| QmngError::Format(format!("csv: {e}")))?;
    for r in rows {
        w.serialize(r).map_err(|e| QmngError::Format(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
