//! Quadratic manifolds `g(theta) = s0 + V theta + W (theta ⊗ theta)` with the
//! linear encoder `theta = V^T (s - s0)`, trained greedily from snapshots.
//!
//! Binary layout (little-endian): magic `QMNF`, version `u32`, `N` and `n` as
//! `u64`, then `s0`, `V` (column-major) and `W` (column-major). [`save`]
//! writes a JSON sidecar with training metadata next to the binary file.
//!
//! [`save`]: QuadraticManifold::save

mod greedy;
mod svd;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::binio::{read_f64_vec, read_magic, read_u32, read_u64, write_f64_slice, write_u64s};
use crate::error::{check_dim, QmngError, Result};
use crate::snapshots::SnapshotMatrix;
use crate::tensor_core::{at_mul, kron_features_into};

pub use greedy::GreedySelection;
use greedy::{greedy_select, subsample_indices, KERNEL_TOL};
use svd::{orthonormalize, CenteredSvd};

const MAGIC: &[u8; 4] = b"QMNF";
const VERSION: u32 = 1;

/// Default number of training columns used to score greedy candidates.
pub const DEFAULT_GREEDY_SUBSAMPLE: usize = 500;

/// Training metadata stored in the sidecar file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMetadata {
    pub gamma: f64,
    /// Candidate pool size `l`.
    pub pool: usize,
    /// Pool indices of the basis vectors, in selection order.
    pub selected: Vec<usize>,
    pub training_columns: usize,
    pub greedy_subsample: usize,
    pub model: Option<String>,
    pub offline_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticManifold {
    s0: DVector<f64>,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    meta: ManifoldMetadata,
}

impl QuadraticManifold {
    /// Assembles a manifold from its parts. Only dimensions are checked; see
    /// [`orthogonality_defects`](Self::orthogonality_defects) for the invariants.
    pub fn new(s0: DVector<f64>, v: DMatrix<f64>, w: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let big_n = s0.len();
        let n = v.ncols();
        check_dim("basis rows", big_n, v.nrows())?;
        check_dim("correction rows", big_n, w.nrows())?;
        check_dim("correction columns (n^2)", n * n, w.ncols())?;
        if n == 0 || n >= big_n {
            return Err(QmngError::InvalidConfig(format!(
                "reduced dimension must satisfy 0 < n < N, got n = {n}, N = {big_n}"
            )));
        }
        if s0.iter().chain(v.iter()).chain(w.iter()).any(|x| !x.is_finite()) {
            return Err(QmngError::InvalidConfig("manifold contains non-finite entries".into()));
        }
        Ok(Self {
            s0,
            v,
            w,
            meta: ManifoldMetadata {
                gamma,
                pool: n,
                selected: (0..n).collect(),
                ..Default::default()
            },
        })
    }

    pub fn n(&self) -> usize {
        self.v.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.s0.len()
    }

    pub fn s0(&self) -> &DVector<f64> {
        &self.s0
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn correction(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn gamma(&self) -> f64 {
        self.meta.gamma
    }

    pub fn metadata(&self) -> &ManifoldMetadata {
        &self.meta
    }

    pub fn metadata_mut(&mut self) -> &mut ManifoldMetadata {
        &mut self.meta
    }

    /// `(‖VᵀV − I‖_F, ‖VᵀW‖_F)`.
    pub fn orthogonality_defects(&self) -> (f64, f64) {
        let n = self.n();
        let vtv = self.v.tr_mul(&self.v) - DMatrix::<f64>::identity(n, n);
        (vtv.norm(), at_mul(&self.v, &self.w).norm())
    }

    pub fn encode(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("encode input", self.full_dim(), s.len())?;
        Ok(self.v.tr_mul(&(s - &self.s0)))
    }

    pub fn decode(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("decode input", self.n(), theta.len())?;
        let mut h = vec![0.0; self.n() * self.n()];
        let mut out = DVector::zeros(self.full_dim());
        self.decode_into(theta.as_slice(), &mut h, out.as_mut_slice());
        Ok(out)
    }

    /// Allocation-free decode; `h` must hold `n²` entries and `out` `N`.
    pub fn decode_into(&self, theta: &[f64], h: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.n());
        kron_features_into(theta, h);
        let mut o = nalgebra::DVectorViewMut::from_slice(out, self.full_dim());
        o.copy_from(&self.s0);
        let th = nalgebra::DVectorView::from_slice(theta, theta.len());
        let hv = nalgebra::DVectorView::from_slice(h, h.len());
        o.gemv(1.0, &self.v, &th, 1.0);
        o.gemv(1.0, &self.w, &hv, 1.0);
    }

    /// `decode(encode(s))`.
    pub fn reconstruct(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        self.decode(&self.encode(s)?)
    }

    /// Columnwise reconstruction of a matrix of states.
    pub fn reconstruct_columns(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("reconstruct rows", self.full_dim(), states.nrows())?;
        let mut theta = at_mul(&self.v, states);
        let shift = self.v.tr_mul(&self.s0);
        for mut c in theta.column_iter_mut() {
            c -= &shift;
        }
        let h = feature_matrix(&theta);
        let mut out = &self.v * &theta + &self.w * h;
        for mut c in out.column_iter_mut() {
            c += &self.s0;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_u64s(&mut w, &[self.full_dim() as u64, self.n() as u64])?;
        write_f64_slice(&mut w, self.s0.as_slice())?;
        write_f64_slice(&mut w, self.v.as_slice())?;
        write_f64_slice(&mut w, self.w.as_slice())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_magic(&mut r, MAGIC)?;
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(QmngError::Format(format!("unsupported manifold version {version}")));
        }
        let big_n = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let s0 = DVector::from_vec(read_f64_vec(&mut r, big_n)?);
        let v = DMatrix::from_vec(big_n, n, read_f64_vec(&mut r, big_n * n)?);
        let w = DMatrix::from_vec(big_n, n * n, read_f64_vec(&mut r, big_n * n * n)?);
        Self::new(s0, v, w, f64::NAN)
    }

    /// Writes the binary file and `<path>.json` with the metadata.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path)?;
        let mut bw = std::io::BufWriter::new(f);
        self.write_to(&mut bw)?;
        bw.flush()?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Reads the binary file and, when present, its sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)?;
        let mut m = Self::read_from(std::io::BufReader::new(f))?;
        let side = sidecar_path(path);
        if side.exists() {
            m.meta = serde_json::from_str(&std::fs::read_to_string(side)?)?;
        }
        Ok(m)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `h` applied to every column of `theta` (`n x M` to `n² x M`).
pub(crate) fn feature_matrix(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = theta.nrows();
    let mut h = DMatrix::zeros(n * n, theta.ncols());
    for (c, mut hc) in h.column_iter_mut().enumerate() {
        let th: Vec<f64> = theta.column(c).iter().cloned().collect();
        kron_features_into(&th, hc.as_mut_slice());
    }
    h
}

/// Ridge fit of the quadratic correction for snapshots `s`, basis `v` and
/// reference point `s0`. The result satisfies `VᵀW = 0`.
pub fn fit_correction(
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    s0: &DVector<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    check_dim("snapshot rows", v.nrows(), s.nrows())?;
    check_dim("reference point", v.nrows(), s0.len())?;
    let mut centered = s.clone();
    for mut c in centered.column_iter_mut() {
        c -= s0;
    }
    fit_correction_centered(&centered, v, gamma)
}

/// [`fit_correction`] on already centered data.
pub(crate) fn fit_correction_centered(
    centered: &DMatrix<f64>,
    v: &DMatrix<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(QmngError::InvalidConfig(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    check_dim("snapshot rows", v.nrows(), centered.nrows())?;
    let n = v.ncols();
    let p = n * n;
    let theta = at_mul(v, centered);
    let h = feature_matrix(&theta);
    // right-hand sides T Hᵀ with T = S - V Θ, without forming T
    let rhs = centered * h.transpose() - v * (&theta * h.transpose());
    let hht = &h * h.transpose();
    let max_diag = (0..p).map(|i| hht[(i, i)]).fold(0.0, f64::max);

    let mut w = None;
    if gamma > 0.0 && gamma >= 1e-10 * max_diag {
        let a = &hht + DMatrix::<f64>::identity(p, p) * gamma;
        if let Some(chol) = a.cholesky() {
            // Wᵀ = A⁻¹ (T Hᵀ)ᵀ, one factorization for all rows
            w = Some(chol.solve(&rhs.transpose()).transpose());
        }
    }
    let mut w = match w {
        Some(w) => w,
        None => {
            log::debug!("ridge fit uses eigen fallback (gamma {gamma:e}, max diag {max_diag:e})");
            let eig = hht.symmetric_eigen();
            let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let d = DVector::from_iterator(
                p,
                eig.eigenvalues.iter().map(|&l| {
                    if l <= KERNEL_TOL * lmax {
                        0.0
                    } else {
                        1.0 / (l + gamma)
                    }
                }),
            );
            let q = &eig.eigenvectors;
            let mut qd = q.clone();
            for (j, mut c) in qd.column_iter_mut().enumerate() {
                c *= d[j];
            }
            &rhs * (qd * q.transpose())
        }
    };
    // the exact minimizer is orthogonal to range(V); remove rounding residue
    let vtw = at_mul(v, &w);
    w -= v * vtw;
    if w.iter().any(|x| !x.is_finite()) {
        return Err(QmngError::Training("ridge fit produced non-finite entries".into()));
    }
    Ok(w)
}

/// Offline state shared by training runs on one snapshot matrix: reference
/// point, centered data and its singular vectors.
#[derive(Debug, Clone)]
pub struct ManifoldTrainer {
    s0: DVector<f64>,
    centered: DMatrix<f64>,
    svd: CenteredSvd,
    subsample: usize,
    model: Option<String>,
}

impl ManifoldTrainer {
    pub fn new(q: &SnapshotMatrix) -> Result<Self> {
        let mut t = Self::from_data(q.data())?;
        t.model = q.kind().map(|k| k.name().to_string());
        Ok(t)
    }

    pub fn from_data(data: &DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(QmngError::Training("empty snapshot matrix".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(QmngError::Training("snapshot matrix contains non-finite entries".into()));
        }
        let s0 = data.column_mean();
        let mut centered = data.clone();
        for mut c in centered.column_iter_mut() {
            c -= &s0;
        }
        let svd = CenteredSvd::new(&centered)?;
        Ok(Self {
            s0,
            centered,
            svd,
            subsample: DEFAULT_GREEDY_SUBSAMPLE,
            model: None,
        })
    }

    /// Number of training columns used to score greedy candidates.
    pub fn with_subsample(mut self, subsample: usize) -> Self {
        self.subsample = subsample.max(1);
        self
    }

    pub fn rank(&self) -> usize {
        self.svd.rank
    }

    pub fn s0(&self) -> &DVector<f64> {
        &self.s0
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.svd.singular_values
    }

    fn check_pool(&self, n: usize, pool: usize) -> Result<()> {
        let (rows, cols) = self.centered.shape();
        if n == 0 {
            return Err(QmngError::InvalidConfig("reduced dimension n must be >= 1".into()));
        }
        if n > pool {
            return Err(QmngError::InvalidConfig(format!("n = {n} exceeds pool size l = {pool}")));
        }
        if pool > rows.min(cols) {
            return Err(QmngError::InvalidConfig(format!(
                "pool size l = {pool} exceeds min(N, columns) = {}",
                rows.min(cols)
            )));
        }
        if pool > self.svd.rank {
            return Err(QmngError::InvalidConfig(format!(
                "pool size l = {pool} exceeds numerical rank {} of the centered snapshots",
                self.svd.rank
            )));
        }
        Ok(())
    }

    /// Greedy choice of `n` pool indices among the first `pool` singular vectors.
    pub fn select(&self, n: usize, pool: usize, gamma: f64) -> Result<GreedySelection> {
        self.check_pool(n, pool)?;
        if pool == n {
            return Ok(GreedySelection {
                indices: (0..n).collect(),
                errors: Vec::new(),
            });
        }
        let cols = subsample_indices(self.centered.ncols(), self.subsample);
        let all = self.svd.coordinates(pool);
        let coords = DMatrix::from_fn(pool, cols.len(), |i, k| all[(i, cols[k])]);
        let gram = DMatrix::from_fn(cols.len(), cols.len(), |a, b| self.svd.gram[(cols[a], cols[b])]);
        greedy_select(&coords, &gram, n, pool, gamma)
    }

    /// Fits the manifold spanned by the given pool indices.
    pub fn fit(&self, indices: &[usize], pool: usize, gamma: f64) -> Result<QuadraticManifold> {
        self.check_pool(indices.len(), pool)?;
        let start = std::time::Instant::now();
        let v = self.svd.left_vectors(&self.centered, indices);
        let v = orthonormalize(v);
        let w = fit_correction_centered(&self.centered, &v, gamma)?;
        let mut m = QuadraticManifold::new(self.s0.clone(), v, w, gamma)?;
        m.meta = ManifoldMetadata {
            gamma,
            pool,
            selected: indices.to_vec(),
            training_columns: self.centered.ncols(),
            greedy_subsample: self.subsample.min(self.centered.ncols()),
            model: self.model.clone(),
            offline_seconds: start.elapsed().as_secs_f64(),
        };
        Ok(m)
    }

    pub fn train(&self, n: usize, gamma: f64, pool: usize) -> Result<QuadraticManifold> {
        let start = std::time::Instant::now();
        let sel = self.select(n, pool, gamma)?;
        let mut m = self.fit(&sel.indices, pool, gamma)?;
        m.meta.offline_seconds = start.elapsed().as_secs_f64();
        Ok(m)
    }

    /// Manifolds for several `n` from one greedy run: each basis is a prefix
    /// of the selection for the largest `n`.
    pub fn train_nested(&self, ns: &[usize], gamma: f64, pool: usize) -> Result<Vec<QuadraticManifold>> {
        let n_max = ns.iter().cloned().max().unwrap_or(0);
        let start = std::time::Instant::now();
        let sel = self.select(n_max, pool, gamma)?;
        let greedy_secs = start.elapsed().as_secs_f64();
        ns.iter()
            .map(|&n| {
                let mut m = self.fit(&sel.indices[..n], pool, gamma)?;
                m.meta.offline_seconds += greedy_secs;
                Ok(m)
            })
            .collect()
    }
}

/// Trains a quadratic manifold of dimension `n` from snapshots: mean
/// centering, greedy basis from the first `l` left singular vectors, ridge
/// fit of the correction.
pub fn train_manifold(q: &SnapshotMatrix, n: usize, gamma: f64, l: usize) -> Result<QuadraticManifold> {
    ManifoldTrainer::new(q)?.train(n, gamma, l)
}

/// Greedy basis of `n` orthonormal columns from the first `l` left singular
/// vectors of centered data.
pub fn greedy_basis(centered: &DMatrix<f64>, n: usize, l: usize, gamma: f64) -> Result<DMatrix<f64>> {
    let svd = CenteredSvd::new(centered)?;
    let trainer = ManifoldTrainer {
        s0: DVector::zeros(centered.nrows()),
        centered: centered.clone(),
        svd,
        subsample: DEFAULT_GREEDY_SUBSAMPLE,
        model: None,
    };
    let sel = trainer.select(n, l, gamma)?;
    Ok(orthonormalize(trainer.svd.left_vectors(centered, &sel.indices)))
}
