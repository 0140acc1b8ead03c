//! Uniform node/cell grids over the hold-all box.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A uniform grid of `nx × ny` nodes over an axis-aligned box with equal
/// spacing `h` in both directions.
///
/// Nodes are indexed row-major, `k = j * nx + i`, with `x = xmin + i h` and
/// `y = ymin + j h`. Cell `(i, j)` has lower-left corner node `(i, j)` and is
/// indexed `j * (nx - 1) + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// `[xmin, xmax, ymin, ymax]`
    pub bbox: [f64; 4],
    pub h: f64,
}

impl GridSpec {
    /// `n × n` nodes over the unit square.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, [0.0, 1.0, 0.0, 1.0])
    }

    pub fn new(nx: usize, ny: usize, bbox: [f64; 4]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(LabError::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        let [x0, x1, y0, y1] = bbox;
        if !(x1 > x0 && y1 > y0) || bbox.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidGrid(format!("degenerate box {bbox:?}")));
        }
        let h = (x1 - x0) / (nx - 1) as f64;
        let hy = (y1 - y0) / (ny - 1) as f64;
        if (h - hy).abs() > 1e-12 * h.max(hy) {
            return Err(LabError::InvalidGrid(format!(
                "spacing differs between axes ({h} vs {hy})"
            )));
        }
        Ok(GridSpec { nx, ny, bbox, h })
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    #[inline]
    pub fn cx(&self) -> usize {
        self.nx - 1
    }

    #[inline]
    pub fn cy(&self) -> usize {
        self.ny - 1
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * (self.nx - 1) + i
    }

    #[inline]
    pub fn node_ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.bbox[0] + i as f64 * self.h
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.bbox[2] + j as f64 * self.h
    }

    #[inline]
    pub fn node_xy(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(k);
        (self.x(i), self.y(j))
    }

    /// Center of cell `(i, j)`.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x(i) + 0.5 * self.h, self.y(j) + 0.5 * self.h)
    }

    #[inline]
    pub fn on_box_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Samples `f(x, y)` at every node.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|k| {
                let (x, y) = self.node_xy(k);
                f(x, y)
            })
            .collect()
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(LabError::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )))
        }
    }

    pub fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len == self.n_nodes() {
            Ok(())
        } else {
            Err(LabError::GridMismatch(format!(
                "{what} has {len} values, grid has {} nodes",
                self.n_nodes()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_grid_spacing() {
        let g = GridSpec::unit(33).unwrap();
        assert_eq!(g.h, 1.0 / 32.0);
        assert_eq!(g.n_cells(), 32 * 32);
        assert_eq!(g.node_ij(g.node(5, 7)), (5, 7));
    }

    #[test]
    fn rejects_tiny_and_anisotropic_grids() {
        assert!(GridSpec::unit(2).is_err());
        assert!(GridSpec::new(5, 9, [0.0, 1.0, 0.0, 1.0]).is_err());
        assert!(GridSpec::new(5, 9, [0.0, 1.0, 0.0, 2.0]).is_ok());
    }
}
