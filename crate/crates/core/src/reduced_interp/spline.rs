//! Periodic cubic splines on an equidistant 1-D grid, fitted for many
//! columns at once.

use crate::error::{check_dim, QmngError, Result};
use crate::full_models::Axis;

/// Node values and spline second derivatives ("moments") of `cols` columns,
/// both stored node-major (`points x cols`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PeriodicSplines {
    pub axis: Axis,
    pub cols: usize,
    pub values: Vec<f64>,
    pub moments: Vec<f64>,
}

/// Interpolation weights at one point: the two bracketing nodes and, for the
/// value and the first two derivatives, the weights of
/// `(y_i, y_{i+1}, M_i, M_{i+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplineWeights {
    pub left: usize,
    pub right: usize,
    pub w: [[f64; 4]; 3],
}

impl PeriodicSplines {
    /// Fits splines through `values` (`points x cols`, row-major).
    pub fn fit(axis: Axis, cols: usize, values: Vec<f64>) -> Result<Self> {
        let np = axis.points;
        if np < 4 {
            return Err(QmngError::InvalidConfig(format!(
                "periodic splines need at least 4 nodes, got {np}"
            )));
        }
        check_dim("spline values", np * cols, values.len())?;
        let h = axis.spacing();
        let scale = 6.0 / (h * h);
        let mut moments = vec![0.0; np * cols];
        for i in 0..np {
            let prev = &values[((i + np - 1) % np) * cols..][..cols];
            let cur = &values[i * cols..][..cols];
            let next = &values[((i + 1) % np) * cols..][..cols];
            for (c, r) in moments[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                *r = scale * (next[c] - 2.0 * cur[c] + prev[c]);
            }
        }
        solve_cyclic_141(&mut moments, np, cols);
        Ok(Self {
            axis,
            cols,
            values,
            moments,
        })
    }

    pub fn weights(&self, x: f64) -> SplineWeights {
        let np = self.axis.points;
        let h = self.axis.spacing();
        let s = (self.axis.wrap(x) - self.axis.lower) / h;
        let left = (s.floor() as usize).min(np - 1);
        let t = (s - left as f64).clamp(0.0, 1.0);
        let a = 1.0 - t;
        let h6 = h / 6.0;
        SplineWeights {
            left,
            right: (left + 1) % np,
            w: [
                [a, t, h * h6 * (a * a * a - a), h * h6 * (t * t * t - t)],
                [-1.0 / h, 1.0 / h, -h6 * (3.0 * a * a - 1.0), h6 * (3.0 * t * t - 1.0)],
                [0.0, 0.0, a, t],
            ],
        }
    }

    /// Writes derivative `order` (0, 1 or 2) of every column at the point
    /// described by `wt` into `out` (length `cols`).
    pub fn eval_into(&self, wt: &SplineWeights, order: usize, out: &mut [f64]) {
        let c = self.cols;
        let w = wt.w[order];
        let yl = &self.values[wt.left * c..][..c];
        let yr = &self.values[wt.right * c..][..c];
        let ml = &self.moments[wt.left * c..][..c];
        let mr = &self.moments[wt.right * c..][..c];
        for k in 0..c {
            out[k] = w[0] * yl[k] + w[1] * yr[k] + w[2] * ml[k] + w[3] * mr[k];
        }
    }
}

/// Solves the periodic system `M_{i-1} + 4 M_i + M_{i+1} = r_i` in place for
/// every column of the node-major `rhs`, by Sherman-Morrison on top of a
/// Thomas sweep.
fn solve_cyclic_141(rhs: &mut [f64], np: usize, cols: usize) {
    // A = T + u vᵀ with u = (γ, 0, …, 0, 1), v = (1, 0, …, 0, 1/γ)
    let gamma = -4.0;
    let mut diag = vec![4.0; np];
    diag[0] -= gamma;
    diag[np - 1] -= 1.0 / gamma;
    let mut cp = vec![0.0; np];
    let mut denom = vec![0.0; np];
    denom[0] = diag[0];
    cp[0] = 1.0 / denom[0];
    for i in 1..np {
        denom[i] = diag[i] - cp[i - 1];
        cp[i] = 1.0 / denom[i];
    }
    let thomas = |x: &mut [f64], width: usize| {
        for k in 0..width {
            x[k] /= denom[0];
        }
        for i in 1..np {
            let (done, rest) = x.split_at_mut(i * width);
            let prev = &done[(i - 1) * width..];
            for k in 0..width {
                rest[k] = (rest[k] - prev[k]) / denom[i];
            }
        }
        for i in (0..np - 1).rev() {
            let (head, tail) = x.split_at_mut((i + 1) * width);
            let next = &tail[..width];
            for k in 0..width {
                head[i * width + k] -= cp[i] * next[k];
            }
        }
    };
    let mut z = vec![0.0; np];
    z[0] = gamma;
    z[np - 1] = 1.0;
    thomas(&mut z, 1);
    let vz = z[0] + z[np - 1] / gamma;
    thomas(rhs, cols);
    for k in 0..cols {
        let fact = (rhs[k] + rhs[(np - 1) * cols + k] / gamma) / (1.0 + vz);
        for i in 0..np {
            rhs[i * cols + k] -= fact * z[i];
        }
    }
}
