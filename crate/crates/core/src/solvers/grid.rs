//! Uniform nodal grids on the unit square and cube.
//!
//! Nodes sit at `i/(n−1)`. Flat index is `iy·n + ix` in 2-D and
//! `(iz·n + iy)·n + ix` in 3-D.
//!
//! The 2-D boundary is ordered counterclockwise from the origin: bottom edge
//! (left to right), right edge (upwards), top edge (right to left), left edge
//! (downwards), each edge omitting its final corner. The 3-D boundary lists
//! the faces z=0, z=1, y=0, y=1, x=0, x=1 in row-major order, skipping nodes
//! already listed on an earlier face.

use crate::error::{Error, Result};
use crate::numerics::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::dim(format!("grid dimension {dim} is not 2 or 3")));
        }
        if n < 2 {
            return Err(Error::dim(format!("grid needs at least 2 nodes per axis, got {n}")));
        }
        Ok(Grid { dim, n })
    }

    pub fn square(n: usize) -> Result<Self> {
        Grid::new(2, n)
    }

    pub fn cube(n: usize) -> Result<Self> {
        Grid::new(3, n)
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn n_boundary(&self) -> usize {
        let n = self.n;
        match self.dim {
            2 => 4 * (n - 1),
            _ => 6 * n * n - 12 * n + 8,
        }
    }

    /// Integer coordinates `[ix, iy, iz]` (`iz = 0` in 2-D).
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.n + iy) * self.n + ix
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let h = self.h();
        let [i, j, k] = self.ijk(idx);
        [i as f64 * h, j as f64 * h, k as f64 * h]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let last = self.n - 1;
        let c = self.ijk(idx);
        c[..self.dim].iter().any(|&v| v == 0 || v == last)
    }

    /// Boundary node indices in the documented order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let n = self.n;
        let last = n - 1;
        let mut out = Vec::with_capacity(self.n_boundary());
        if self.dim == 2 {
            out.extend((0..last).map(|ix| self.index(ix, 0, 0)));
            out.extend((0..last).map(|iy| self.index(last, iy, 0)));
            out.extend((1..=last).rev().map(|ix| self.index(ix, last, 0)));
            out.extend((1..=last).rev().map(|iy| self.index(0, iy, 0)));
        } else {
            for iz in [0, last] {
                for iy in 0..n {
                    out.extend((0..n).map(|ix| self.index(ix, iy, iz)));
                }
            }
            for iy in [0, last] {
                for iz in 1..last {
                    out.extend((0..n).map(|ix| self.index(ix, iy, iz)));
                }
            }
            for ix in [0, last] {
                for iz in 1..last {
                    out.extend((1..last).map(|iy| self.index(ix, iy, iz)));
                }
            }
        }
        out
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Writes boundary values (in boundary order) into a full nodal field.
    pub fn scatter_boundary(&self, values: &[f64], field: &mut [f64]) -> Result<()> {
        let nodes = self.boundary_nodes();
        if values.len() != nodes.len() || field.len() != self.n_nodes() {
            return Err(Error::dim(format!(
                "boundary data of length {} for {} boundary nodes",
                values.len(),
                nodes.len()
            )));
        }
        for (&node, &v) in nodes.iter().zip(values) {
            field[node] = v;
        }
        Ok(())
    }

    pub fn gather_boundary(&self, field: &[f64]) -> Vec<f64> {
        self.boundary_nodes().iter().map(|&i| field[i]).collect()
    }

    /// Axis-neighbours of `idx` that exist on the grid.
    pub fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.ijk(idx);
        let stride = [1, self.n, self.n * self.n];
        (0..self.dim).flat_map(move |a| {
            let lo = (c[a] > 0).then(|| idx - stride[a]);
            let hi = (c[a] + 1 < self.n).then(|| idx + stride[a]);
            lo.into_iter().chain(hi)
        })
    }
}

/// The `(−Δ)_h` stencil restricted to interior nodes, with Dirichlet
/// couplings kept separately.
#[derive(Clone, Debug)]
pub struct Laplacian {
    pub grid: Grid,
    pub matrix: CsrMatrix,
    /// Interior node indices, in unknown order.
    pub interior: Vec<usize>,
    /// Unknown index of each node, `usize::MAX` on the boundary.
    pub unknown: Vec<usize>,
    /// `(row, boundary node, coefficient)`: row gets `coefficient · u[node]`.
    pub coupling: Vec<(usize, usize, f64)>,
}

pub fn assemble_laplacian(grid: &Grid) -> Result<Laplacian> {
    assemble_weighted(grid, |_, _| 1.0)
}

/// Interior operator `Σ_faces w(i,j)(u_i − u_j)/h²` for a face-weight function.
pub(crate) fn assemble_weighted(grid: &Grid, weight: impl Fn(usize, usize) -> f64) -> Result<Laplacian> {
    if grid.n < 3 {
        return Err(Error::dim(format!("Laplacian needs n >= 3, got {}", grid.n)));
    }
    let interior = grid.interior_nodes();
    let mut unknown = vec![usize::MAX; grid.n_nodes()];
    for (k, &i) in interior.iter().enumerate() {
        unknown[i] = k;
    }
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut trip = Vec::with_capacity(interior.len() * (2 * grid.dim + 1));
    let mut coupling = Vec::new();
    for (row, &i) in interior.iter().enumerate() {
        let mut diag = 0.0;
        for j in grid.neighbours(i) {
            let w = weight(i, j) * inv_h2;
            diag += w;
            if unknown[j] == usize::MAX {
                coupling.push((row, j, w));
            } else {
                trip.push((row, unknown[j], -w));
            }
        }
        trip.push((row, row, diag));
    }
    let matrix = CsrMatrix::from_triplets(&trip, interior.len(), interior.len())?;
    Ok(Laplacian {
        grid: *grid,
        matrix,
        interior,
        unknown,
        coupling,
    })
}

impl Laplacian {
    pub fn n_unknowns(&self) -> usize {
        self.interior.len()
    }

    /// Right-hand-side contribution of Dirichlet values held in `field`.
    pub fn boundary_rhs(&self, field: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.n_unknowns()];
        for &(row, node, w) in &self.coupling {
            b[row] += w * field[node];
        }
        b
    }

    pub fn gather(&self, field: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&i| field[i]).collect()
    }

    pub fn scatter(&self, values: &[f64], field: &mut [f64]) {
        for (&i, &v) in self.interior.iter().zip(values) {
            field[i] = v;
        }
    }

    /// `(−Δ_h u)` at interior nodes for a full nodal field.
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        let mut r = self.matrix.matvec(&self.gather(field));
        for (ri, bi) in r.iter_mut().zip(self.boundary_rhs(field)) {
            *ri -= bi;
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_counts() {
        assert_eq!(Grid::square(51).unwrap().boundary_nodes().len(), 200);
        let g3 = Grid::cube(33).unwrap();
        assert_eq!(g3.n_boundary(), 6146);
        let b = g3.boundary_nodes();
        assert_eq!(b.len(), 6146);
        let mut sorted = b.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), b.len());
        assert!(b.iter().all(|&i| g3.is_boundary(i)));
        assert_eq!(g3.interior_nodes().len() + b.len(), g3.n_nodes());
    }

    #[test]
    fn square_boundary_is_counterclockwise_loop() {
        let g = Grid::square(4).unwrap();
        let b = g.boundary_nodes();
        assert_eq!(b, vec![0, 1, 2, 3, 7, 11, 15, 14, 13, 12, 8, 4]);
        // consecutive nodes (cyclically) are grid neighbours
        for k in 0..b.len() {
            let (p, q) = (b[k], b[(k + 1) % b.len()]);
            assert!(g.neighbours(p).any(|x| x == q));
        }
    }

    #[test]
    fn single_interior_node_stencil() {
        let lap = assemble_laplacian(&Grid::square(3).unwrap()).unwrap();
        assert_eq!(lap.matrix.n_rows, 1);
        assert_eq!(lap.matrix.get(0, 0), 4.0 / 0.25);
        assert!(assemble_laplacian(&Grid::square(2).unwrap()).is_err());
    }

    #[test]
    fn laplacian_is_symmetric() {
        for g in [Grid::square(9).unwrap(), Grid::cube(6).unwrap()] {
            let lap = assemble_laplacian(&g).unwrap();
            assert_eq!(lap.matrix.asymmetry(), 0.0);
        }
    }
}
