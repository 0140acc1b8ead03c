use std::io::Write;

use crate::error::{LabError, Result};
use crate::grid::GridSpec;

/// A rasterized open subset of the hold-all box.
///
/// A cell is inside iff all four of its corner nodes are inside, and the
/// measure is `h²` times the number of inside cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain {
    grid: GridSpec,
    mask: Vec<bool>,
    cell_mask: Vec<bool>,
    measure: f64,
}

impl GridDomain {
    pub fn from_mask(grid: GridSpec, mask: Vec<bool>) -> Result<Self> {
        grid.check_len(mask.len(), "mask")?;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.on_box_boundary(i, j) && mask[grid.node(i, j)] {
                    return Err(LabError::TouchesBoundary(format!(
                        "node ({i}, {j}) on the box boundary is marked inside"
                    )));
                }
            }
        }
        let mut cell_mask = vec![false; grid.n_cells()];
        for j in 0..grid.cy() {
            for i in 0..grid.cx() {
                cell_mask[grid.cell(i, j)] = mask[grid.node(i, j)]
                    && mask[grid.node(i + 1, j)]
                    && mask[grid.node(i, j + 1)]
                    && mask[grid.node(i + 1, j + 1)];
            }
        }
        let count = cell_mask.iter().filter(|&&c| c).count();
        let measure = grid.h * grid.h * count as f64;
        Ok(GridDomain {
            grid,
            mask,
            cell_mask,
            measure,
        })
    }

    pub fn empty(grid: GridSpec) -> Self {
        GridDomain {
            grid,
            mask: vec![false; grid.n_nodes()],
            cell_mask: vec![false; grid.n_cells()],
            measure: 0.0,
        }
    }

    /// Every node off the box boundary.
    pub fn full_interior(grid: GridSpec) -> Self {
        let mask = (0..grid.n_nodes())
            .map(|k| {
                let (i, j) = grid.node_ij(k);
                !grid.on_box_boundary(i, j)
            })
            .collect();
        Self::from_mask(grid, mask).expect("interior mask never touches the boundary")
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn cell_mask(&self) -> &[bool] {
        &self.cell_mask
    }

    #[inline]
    pub fn measure(&self) -> f64 {
        self.measure
    }

    #[inline]
    pub fn contains(&self, k: usize) -> bool {
        self.mask[k]
    }

    pub fn node_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of the inside nodes, in increasing order.
    pub fn nodes(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&k| self.mask[k]).collect()
    }

    /// Multiplies a nodal field by the characteristic function of the domain.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect()
    }

    /// `self ⊇ other` node-wise.
    pub fn contains_domain(&self, other: &GridDomain) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| a || !b)
    }

    /// Binary PGM (P5), 255 for inside nodes, top row first.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.grid.nx, self.grid.ny)?;
        let mut bytes = Vec::with_capacity(self.mask.len());
        for j in (0..self.grid.ny).rev() {
            for i in 0..self.grid.nx {
                bytes.push(if self.mask[self.grid.node(i, j)] { 255u8 } else { 0 });
            }
        }
        w.write_all(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_nodes_are_rejected() {
        let g = GridSpec::unit(5).unwrap();
        let mut mask = vec![false; g.n_nodes()];
        mask[g.node(0, 2)] = true;
        assert!(GridDomain::from_mask(g, mask).is_err());
    }

    #[test]
    fn cell_needs_all_four_corners() {
        let g = GridSpec::unit(5).unwrap();
        let mut mask = vec![false; g.n_nodes()];
        for (i, j) in [(1, 1), (2, 1), (1, 2)] {
            mask[g.node(i, j)] = true;
        }
        let d = GridDomain::from_mask(g, mask.clone()).unwrap();
        assert_eq!(d.measure(), 0.0);
        mask[g.node(2, 2)] = true;
        let d = GridDomain::from_mask(g, mask).unwrap();
        assert_eq!(d.measure(), g.h * g.h);
        assert!(d.cell_mask()[g.cell(1, 1)]);
    }

    #[test]
    fn pgm_header_and_size() {
        let g = GridSpec::unit(5).unwrap();
        let d = GridDomain::full_interior(g);
        let mut buf = Vec::new();
        d.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n5 5\n255\n"));
        assert_eq!(buf.len(), 11 + 25);
        assert_eq!(buf[11 + 6], 255);
        assert_eq!(buf[11], 0);
    }
}
