//! Explicit time stepping of reduced models and trajectory export.
//!
//! Trajectories are written as CSV with header `t,theta_1,...,theta_n` and a
//! JSON sidecar `<path>.json` holding [`TrajectoryMeta`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{QmngError, Result};
use crate::full_models::Rk4Workspace;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = QmngError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            _ => Err(QmngError::InvalidConfig(format!("unknown integration scheme '{s}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    /// Keep every `stride`-th state (the initial state is always kept).
    pub stride: usize,
    /// Runs whose state norm exceeds this are stopped and flagged unstable.
    pub divergence_threshold: f64,
}

impl IntegrateOptions {
    pub fn new(scheme: Scheme, dt: f64, steps: usize) -> Self {
        Self {
            scheme,
            dt,
            steps,
            stride: 1,
            divergence_threshold: 1e12,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub mu: f64,
    pub method: String,
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub online_seconds: f64,
    pub unstable: bool,
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub collocation_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub strategy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank_deficient_steps: Option<usize>,
}

/// Reduced states at uniformly spaced times, possibly truncated when the
/// run became unstable.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub meta: TrajectoryMeta,
}

impl ReducedTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of states a complete run stores.
    pub fn expected_len(&self) -> usize {
        self.meta.steps / self.meta.stride.max(1) + 1
    }

    pub fn is_complete(&self) -> bool {
        !self.meta.unstable && self.len() == self.expected_len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let n = self.states.first().map_or(0, |s| s.len());
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("theta_{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut rec = vec![format!("{t:e}")];
            rec.extend(s.iter().map(|x| format!("{x:e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| QmngError::Format(format!("bad number in {}: {e}", path.display())))?;
            if vals.is_empty() {
                continue;
            }
            times.push(vals[0]);
            states.push(DVector::from_vec(vals[1..].to_vec()));
        }
        let side = sidecar(path);
        let meta = if side.exists() {
            serde_json::from_str(&std::fs::read_to_string(side)?)?
        } else {
            TrajectoryMeta::default()
        };
        Ok(Self { times, states, meta })
    }
}

fn csv_err(e: csv::Error) -> QmngError {
    QmngError::Format(format!("csv: {e}"))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Integrates `θ' = rhs(θ, t)` from `θ₀`. Non-finite values, failed stage
/// evaluations and `‖θ‖` above the divergence threshold end the run early
/// with `meta.unstable` set; other errors are returned.
pub fn integrate_reduced<F>(mut rhs: F, theta0: &DVector<f64>, mu: f64, opts: &IntegrateOptions) -> Result<ReducedTrajectory>
where
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    if !(opts.dt > 0.0) {
        return Err(QmngError::InvalidConfig(format!("time step must be positive, got {}", opts.dt)));
    }
    let stride = opts.stride.max(1);
    let n = theta0.len();
    let mut theta = theta0.as_slice().to_vec();
    let mut times = vec![0.0];
    let mut states = vec![theta0.clone()];
    let mut rk4 = Rk4Workspace::new(n);
    let mut slope = vec![0.0; n];
    let mut failure = None;

    let start = Instant::now();
    for k in 0..opts.steps {
        let t = k as f64 * opts.dt;
        let res = match opts.scheme {
            Scheme::Rk4 => rk4.step(&mut rhs, &mut theta, t, opts.dt),
            Scheme::Euler => rhs(&theta, t, &mut slope).map(|_| {
                for (th, s) in theta.iter_mut().zip(&slope) {
                    *th += opts.dt * s;
                }
            }),
        };
        match res {
            Ok(()) => {}
            Err(QmngError::Integration { reason, .. }) => {
                failure = Some(format!("step {k}, t = {t}: {reason}"));
                break;
            }
            Err(e) => return Err(e),
        }
        let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > opts.divergence_threshold {
            failure = Some(format!("step {k}, t = {t}: |theta| = {norm:e}"));
            break;
        }
        if (k + 1) % stride == 0 {
            times.push((k + 1) as f64 * opts.dt);
            states.push(DVector::from_column_slice(&theta));
        }
    }
    let online_seconds = start.elapsed().as_secs_f64();
    if let Some(reason) = &failure {
        log::info!("reduced run at mu = {mu} stopped: {reason}");
    }
    Ok(ReducedTrajectory {
        times,
        states,
        meta: TrajectoryMeta {
            mu,
            scheme: opts.scheme,
            dt: opts.dt,
            steps: opts.steps,
            stride,
            online_seconds,
            unstable: failure.is_some(),
            failure,
            ..Default::default()
        },
    })
}
