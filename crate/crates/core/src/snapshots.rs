//! Snapshot matrices and their binary file format.
//!
//! Layout (all little-endian): magic `QSNP`, version `u32`, model tag `u32`
//! (0 when unknown), then `N`, column count, `K`, `M'` as `u64`, the grid
//! descriptor (axis count `u64`, then per axis `lower f64`, `upper f64`,
//! `points u64`), the `K` times, the `M'` parameters, and the data
//! column-major.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binio::{read_f64, read_f64_vec, read_magic, read_u32, read_u64, write_f64_slice};
use crate::error::{QmngError, Result};
use crate::full_models::{Axis, Grid, ModelKind};

const MAGIC: &[u8; 4] = b"QSNP";
const VERSION: u32 = 1;

/// `N x (K M')` matrix of full-model states. Column `p * K + k` holds the
/// state at `times[k]` for parameter `params[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    times: Vec<f64>,
    params: Vec<f64>,
    grid: Grid,
    kind: Option<ModelKind>,
}

impl SnapshotMatrix {
    pub fn new(
        data: DMatrix<f64>,
        times: Vec<f64>,
        params: Vec<f64>,
        grid: Grid,
        kind: Option<ModelKind>,
    ) -> Result<Self> {
        if data.ncols() != times.len() * params.len() {
            return Err(QmngError::DimensionMismatch {
                context: "SnapshotMatrix columns (K * M')",
                expected: times.len() * params.len(),
                actual: data.ncols(),
            });
        }
        Ok(Self {
            data,
            times,
            params,
            grid,
            kind,
        })
    }

    pub fn from_columns(
        columns: &[DVector<f64>],
        times: Vec<f64>,
        params: Vec<f64>,
        grid: Grid,
        kind: Option<ModelKind>,
    ) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        let data = if columns.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            DMatrix::from_columns(columns)
        };
        debug_assert!(columns.iter().all(|c| c.len() == rows));
        Self::new(data, times, params, grid, kind)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> Option<ModelKind> {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Columns belonging to parameter index `p`.
    pub fn trajectory(&self, p: usize) -> nalgebra::DMatrixView<'_, f64> {
        let k = self.times.len();
        self.data.columns(p * k, k)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.kind.map_or(0, ModelKind::tag).to_le_bytes())?;
        for v in [
            self.data.nrows(),
            self.data.ncols(),
            self.times.len(),
            self.params.len(),
            self.grid.dim(),
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for a in self.grid.axes() {
            w.write_all(&a.lower.to_le_bytes())?;
            w.write_all(&a.upper.to_le_bytes())?;
            w.write_all(&(a.points as u64).to_le_bytes())?;
        }
        write_f64_slice(&mut w, &self.times)?;
        write_f64_slice(&mut w, &self.params)?;
        write_f64_slice(&mut w, self.data.as_slice())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_magic(&mut r, MAGIC)?;
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(QmngError::Format(format!("unsupported snapshot version {version}")));
        }
        let tag = read_u32(&mut r)?;
        let kind = if tag == 0 { None } else { Some(ModelKind::from_tag(tag)?) };
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let mut axes = Vec::with_capacity(dim);
        for _ in 0..dim {
            let lower = read_f64(&mut r)?;
            let upper = read_f64(&mut r)?;
            let points = read_u64(&mut r)? as usize;
            axes.push(Axis::new(lower, upper, points)?);
        }
        let grid = Grid::new(axes)?;
        let times = read_f64_vec(&mut r, k)?;
        let params = read_f64_vec(&mut r, m)?;
        let data = read_f64_vec(&mut r, rows * cols)?;
        Self::new(DMatrix::from_vec(rows, cols, data), times, params, grid, kind)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
