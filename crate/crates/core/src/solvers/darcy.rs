//! Steady Darcy flow `−∇·(a∇u) = 1` on the unit square, `u = 0` on the
//! boundary, with arithmetic face averages of the nodal coefficient.

use super::grid::{assemble_weighted, Grid};
use crate::error::{Error, Result};
use crate::numerics::{cg, CgOptions};

/// Solves on the `n × n` nodal grid for a row-major nodal coefficient `a`.
pub fn darcy_solve(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let grid = Grid::square(n)?;
    if a.len() != grid.n_nodes() {
        return Err(Error::dim(format!("coefficient has {} values for {n}x{n}", a.len())));
    }
    if let Some(i) = a.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::contract(format!(
            "coefficient {} at node {i} is not positive",
            a[i]
        )));
    }
    let op = assemble_weighted(&grid, |i, j| 0.5 * (a[i] + a[j]))?;
    let rhs = vec![1.0; op.n_unknowns()];
    let opts = CgOptions {
        tol: 1e-10,
        max_iter: 20 * op.n_unknowns(),
        jacobi: true,
    };
    let sol = cg(&op.matrix, &rhs, None, &opts, |_| {})?;
    let mut u = vec![0.0; grid.n_nodes()];
    op.scatter(&sol.x, &mut u);
    Ok(u)
}

/// Centre value of `−Δu = 1` on the unit square with zero boundary data,
/// from the double sine series.
pub fn poisson_center_series(terms: usize) -> f64 {
    use std::f64::consts::PI;
    let mut s = 0.0;
    for m in (1..2 * terms).step_by(2) {
        for k in (1..2 * terms).step_by(2) {
            let (mf, kf) = (m as f64, k as f64);
            let sign = if ((m + k) / 2 - 1) % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * 16.0 / (PI.powi(4) * mf * kf * (mf * mf + kf * kf));
        }
    }
    s
}
