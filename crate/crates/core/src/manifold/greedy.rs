//! Greedy selection of basis vectors from a pool of left singular vectors.
//!
//! Candidates are scored by the training error of the quadratic manifold
//! they span after refitting the correction, evaluated in kernel form on a
//! deterministic column subsample: with `B = Theta^T Theta`, `G = B .* B`
//! and `P = S^T S - B`, the ridge residual is
//! `sum_i (gamma / (lambda_i + gamma))^2 q_i^T P q_i` over the eigenpairs of `G`.

use nalgebra::{DMatrix, DVector};

use crate::error::{QmngError, Result};

/// Eigenvalues of the kernel below this fraction of the largest one are
/// treated as exact zeros.
pub(crate) const KERNEL_TOL: f64 = 1e-12;

/// Relative (to the subsample energy) score difference below which two
/// candidates count as tied.
const TIE_TOL: f64 = 1e-10;

/// Outcome of a greedy run: chosen pool indices in selection order and the
/// subsampled training error after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedySelection {
    pub indices: Vec<usize>,
    pub errors: Vec<f64>,
}

/// Evenly spaced column indices, `count` of `total` (all when `count >= total`).
pub(crate) fn subsample_indices(total: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= total {
        return (0..total).collect();
    }
    (0..count).map(|k| k * total / count).collect()
}

/// Ridge residual of regressing the rows behind `p` on the features whose
/// kernel is `kernel`.
pub(crate) fn kernel_ridge_error(kernel: DMatrix<f64>, p: &DMatrix<f64>, gamma: f64) -> f64 {
    let eig = kernel.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let pq = p * &eig.eigenvectors;
    let mut err = 0.0;
    for i in 0..eig.eigenvalues.len() {
        let lambda = eig.eigenvalues[i];
        let weight = if lambda <= KERNEL_TOL * lmax {
            1.0
        } else if gamma > 0.0 {
            let r = gamma / (lambda + gamma);
            r * r
        } else {
            0.0
        };
        if weight == 0.0 {
            continue;
        }
        let qpq = eig.eigenvectors.column(i).dot(&pq.column(i));
        err += weight * qpq;
    }
    err.max(0.0)
}

/// Greedy search over the first `pool` rows of `coords` (candidate
/// coordinates of the subsampled columns, one row per candidate) with the
/// subsampled data Gram matrix `gram`.
pub(crate) fn greedy_select(
    coords: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    n: usize,
    pool: usize,
    gamma: f64,
) -> Result<GreedySelection> {
    if n == 0 || n > pool || pool > coords.nrows() {
        return Err(QmngError::InvalidConfig(format!(
            "greedy selection needs 1 <= n <= l <= {}, got n = {n}, l = {pool}",
            coords.nrows()
        )));
    }
    let s = coords.ncols();
    // scores closer than this are ties; it also keeps index order once the
    // features interpolate the subsample and every score is rounding noise
    let tie = TIE_TOL * gram.trace().max(0.0);
    let mut used = vec![false; pool];
    let mut indices = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    let mut b = DMatrix::zeros(s, s);

    let score = |b: &DMatrix<f64>, c: usize| -> (f64, DMatrix<f64>) {
        let row: DVector<f64> = coords.row(c).transpose();
        let mut bc = b.clone();
        bc.ger(1.0, &row, &row, 1.0);
        let kernel = bc.component_mul(&bc);
        let p = gram - &bc;
        (kernel_ridge_error(kernel, &p, gamma), bc)
    };

    // the leading singular vector always starts the basis
    let (e0, b0) = score(&b, 0);
    used[0] = true;
    indices.push(0);
    errors.push(e0);
    b = b0;
    log::debug!("greedy step 1: candidate 0, error {e0:.6e}");

    for step in 1..n {
        let mut best: Option<(usize, f64, DMatrix<f64>)> = None;
        for c in 0..pool {
            if used[c] {
                continue;
            }
            let (e, bc) = score(&b, c);
            if !e.is_finite() {
                return Err(QmngError::Training(format!("non-finite greedy error for candidate {c}")));
            }
            if best.as_ref().map_or(true, |(_, be, _)| e < *be - tie) {
                best = Some((c, e, bc));
            }
        }
        let (c, e, bc) = best.expect("pool has an unused candidate");
        log::debug!("greedy step {}: candidate {c}, error {e:.6e}", step + 1);
        used[c] = true;
        indices.push(c);
        errors.push(e);
        b = bc;
    }
    Ok(GreedySelection { indices, errors })
}
