use nalgebra::{DMatrix, DVector};

use crate::error::{QmngError, Result};
use crate::tensor_core::at_mul;

/// Relative cutoff on singular values below which directions are treated as
/// numerically zero. The Gram route squares the spectrum, so this is close
/// to the best it can resolve.
const RANK_TOL: f64 = 1e-7;

/// Left singular vectors of centered snapshot data, computed through the
/// eigendecomposition of the column Gram matrix (method of snapshots).
#[derive(Debug, Clone)]
pub(crate) struct CenteredSvd {
    /// Gram matrix `S^T S` of the centered data.
    pub gram: DMatrix<f64>,
    /// Eigenvectors of the Gram matrix, columns sorted by decreasing eigenvalue.
    pub right: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub rank: usize,
}

impl CenteredSvd {
    pub fn new(centered: &DMatrix<f64>) -> Result<Self> {
        let gram = at_mul(centered, centered);
        let eig = gram.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
            return Err(QmngError::Training("non-finite eigenvalue in snapshot Gram matrix".into()));
        }
        let singular_values = DVector::from_iterator(
            order.len(),
            order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()),
        );
        let right = DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| eig.eigenvectors.column(i).into_owned())
                .collect::<Vec<_>>(),
        );
        let smax = singular_values.iter().cloned().fold(0.0, f64::max);
        let rank = singular_values
            .iter()
            .take_while(|&&s| smax > 0.0 && s > RANK_TOL * smax)
            .count();
        Ok(Self {
            gram,
            right,
            singular_values,
            rank,
        })
    }

    /// Coordinates `u_i^T s_k = sigma_i v_i[k]` of every column along the
    /// first `count` left singular vectors (`count x M`).
    pub fn coordinates(&self, count: usize) -> DMatrix<f64> {
        let m = self.right.nrows();
        DMatrix::from_fn(count, m, |i, k| self.singular_values[i] * self.right[(k, i)])
    }

    /// Orthonormal left singular vectors for the requested indices.
    pub fn left_vectors(&self, centered: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
        let mut right = DMatrix::zeros(self.right.nrows(), indices.len());
        for (c, &i) in indices.iter().enumerate() {
            right
                .column_mut(c)
                .copy_from(&(self.right.column(i) / self.singular_values[i]));
        }
        orthonormalize(centered * right)
    }
}

/// Orthonormalizes columns in order with two passes of modified Gram-Schmidt.
pub(crate) fn orthonormalize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let k = a.ncols();
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let (left, mut right) = a.columns_range_pair_mut(i, j);
                let proj = left.dot(&right);
                right.axpy(-proj, &left, 1.0);
            }
        }
        let norm = a.column(j).norm();
        if norm > 0.0 {
            a.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    a
}
