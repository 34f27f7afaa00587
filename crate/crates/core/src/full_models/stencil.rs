//! Periodic central finite-difference stencils on row-major grids.

use crate::error::{QmngError, Result};

/// Finite-difference taps `(offset, weight)`, weights already scaled by the
/// grid spacing.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    taps: Vec<(isize, f64)>,
}

impl Stencil {
    /// Central first derivative of order 2 or 4.
    pub(crate) fn first_derivative(order: usize, h: f64) -> Result<Self> {
        let taps = match order {
            2 => vec![(-1, -0.5 / h), (1, 0.5 / h)],
            4 => vec![
                (-2, 1.0 / (12.0 * h)),
                (-1, -8.0 / (12.0 * h)),
                (1, 8.0 / (12.0 * h)),
                (2, -1.0 / (12.0 * h)),
            ],
            _ => {
                return Err(QmngError::InvalidConfig(format!(
                    "unsupported first-derivative order {order}"
                )))
            }
        };
        Ok(Self { taps })
    }

    /// Second-order central second derivative.
    pub(crate) fn second_derivative(h: f64) -> Self {
        let h2 = h * h;
        Self {
            taps: vec![(-1, 1.0 / h2), (0, -2.0 / h2), (1, 1.0 / h2)],
        }
    }

    /// `out[i,j] += coef(i,j) * (D u)[i,j]` along `axis` of a `(n0, n1)` grid.
    pub(crate) fn apply_add(
        &self,
        u: &[f64],
        shape: (usize, usize),
        axis: usize,
        coef: impl Fn(usize, usize) -> f64,
        out: &mut [f64],
    ) {
        let (n0, n1) = shape;
        debug_assert_eq!(u.len(), n0 * n1);
        debug_assert_eq!(out.len(), n0 * n1);
        let n_axis = if axis == 0 { n0 } else { n1 };
        // neighbor tables along the differentiated axis
        let neighbors: Vec<Vec<usize>> = self
            .taps
            .iter()
            .map(|&(off, _)| {
                (0..n_axis)
                    .map(|i| (i as isize + off).rem_euclid(n_axis as isize) as usize)
                    .collect()
            })
            .collect();
        for i in 0..n0 {
            for j in 0..n1 {
                let c = coef(i, j);
                if c == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for (t, &(_, w)) in self.taps.iter().enumerate() {
                    let idx = if axis == 0 {
                        neighbors[t][i] * n1 + j
                    } else {
                        i * n1 + neighbors[t][j]
                    };
                    s += w * u[idx];
                }
                out[i * n1 + j] += c * s;
            }
        }
    }

    /// Triplets `(row, col, coef(i,j) * w)` of the same operator.
    pub(crate) fn triplets(
        &self,
        shape: (usize, usize),
        axis: usize,
        row_offset: usize,
        col_offset: usize,
        coef: impl Fn(usize, usize) -> f64,
        out: &mut Vec<(usize, usize, f64)>,
    ) {
        let (n0, n1) = shape;
        for i in 0..n0 {
            for j in 0..n1 {
                let c = coef(i, j);
                if c == 0.0 {
                    continue;
                }
                for &(off, w) in &self.taps {
                    let col = if axis == 0 {
                        ((i as isize + off).rem_euclid(n0 as isize) as usize) * n1 + j
                    } else {
                        i * n1 + (j as isize + off).rem_euclid(n1 as isize) as usize
                    };
                    out.push((row_offset + i * n1 + j, col_offset + col, c * w));
                }
            }
        }
    }
}
