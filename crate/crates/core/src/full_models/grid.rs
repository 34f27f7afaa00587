use serde::{Deserialize, Serialize};

use crate::error::{QmngError, Result};

/// One periodic axis `[lower, upper)` sampled at `points` equidistant nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(upper > lower) || points < 2 {
            return Err(QmngError::InvalidConfig(format!(
                "axis [{lower}, {upper}) with {points} points is degenerate"
            )));
        }
        Ok(Self {
            lower,
            upper,
            points,
        })
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn spacing(&self) -> f64 {
        self.length() / self.points as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    /// Maps any real coordinate into `[lower, upper)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let l = self.length();
        let y = (x - self.lower).rem_euclid(l);
        // rem_euclid can round up to exactly l
        if y >= l {
            self.lower
        } else {
            self.lower + y
        }
    }
}

/// Equidistant periodic grid in one or two dimensions. Points are ordered
/// row-major with the first axis slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(QmngError::InvalidConfig(format!(
                "grids must be 1-D or 2-D, got {} axes",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    pub fn periodic_1d(lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, points)?])
    }

    pub fn periodic_2d(first: (f64, f64, usize), second: (f64, f64, usize)) -> Result<Self> {
        Self::new(vec![
            Axis::new(first.0, first.1, first.2)?,
            Axis::new(second.0, second.1, second.2)?,
        ])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of flat point `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [a] => vec![a.coord(idx)],
            [a, b] => vec![a.coord(idx / b.points), b.coord(idx % b.points)],
            _ => unreachable!("grid dimension is validated on construction"),
        }
    }
}
