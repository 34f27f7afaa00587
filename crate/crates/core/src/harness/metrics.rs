use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, QmngError, Result};
use crate::manifold::QuadraticManifold;
use crate::snapshots::SnapshotMatrix;

/// Averaged relative error over test parameters, with the per-parameter
/// values behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    /// Population standard deviation over parameters.
    pub std: f64,
    pub per_param: Vec<f64>,
}

impl ErrorSummary {
    pub fn from_values(per_param: Vec<f64>) -> Self {
        let k = per_param.len() as f64;
        if per_param.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                per_param,
            };
        }
        let mean = per_param.iter().sum::<f64>() / k;
        let var = per_param.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / k;
        Self {
            mean,
            std: var.sqrt(),
            per_param,
        }
    }
}

/// Relative 2-norm error between two trajectories stored as columns,
/// averaged over time steps (summed when `literal`). Steps whose reference
/// state is zero are skipped.
pub fn trajectory_error(reference: &DMatrix<f64>, approx: &DMatrix<f64>, literal: bool) -> Result<f64> {
    check_dim("trajectory error rows", reference.nrows(), approx.nrows())?;
    check_dim("trajectory error steps", reference.ncols(), approx.ncols())?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (r, a) in reference.column_iter().zip(approx.column_iter()) {
        let norm = r.norm();
        if norm == 0.0 {
            continue;
        }
        sum += (r - a).norm() / norm;
        used += 1;
    }
    if used < reference.ncols() {
        log::warn!("{} steps with zero reference state skipped", reference.ncols() - used);
    }
    if used == 0 {
        return Err(QmngError::InvalidConfig("every reference state has zero norm".into()));
    }
    Ok(if literal { sum } else { sum / used as f64 })
}

/// Averaged relative error over several test parameters; `reference[i]`
/// and `approx[i]` hold the trajectory for parameter `i` as columns.
pub fn relative_error(reference: &[DMatrix<f64>], approx: &[DMatrix<f64>], literal: bool) -> Result<ErrorSummary> {
    check_dim("relative error parameters", reference.len(), approx.len())?;
    let per = reference
        .iter()
        .zip(approx)
        .map(|(r, a)| trajectory_error(r, a, literal))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorSummary::from_values(per))
}

/// Error of `decode(encode(q))` against the test snapshots, per parameter.
pub fn reconstruction_error(m: &QuadraticManifold, test: &SnapshotMatrix, literal: bool) -> Result<ErrorSummary> {
    check_dim("reconstruction error state dimension", m.full_dim(), test.state_dim())?;
    let mut refs = Vec::with_capacity(test.params().len());
    let mut approx = Vec::with_capacity(test.params().len());
    for p in 0..test.params().len() {
        let traj = test.trajectory(p).into_owned();
        approx.push(m.reconstruct_columns(&traj)?);
        refs.push(traj);
    }
    relative_error(&refs, &approx, literal)
}
