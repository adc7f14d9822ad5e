//! Finite-difference Poisson–Boltzmann solver, `−Δu + k sinh(u) = f`, on
//! the unit square or cube with Dirichlet data.

use super::grid::{assemble_laplacian, Grid, Laplacian};
use super::newton::{damped_newton, max_abs, HomotopyConfig};
use crate::error::{Error, Result};
use crate::numerics::{cg, CgOptions};

#[derive(Clone, Debug)]
pub struct PbSolution {
    /// Full nodal field.
    pub u: Vec<f64>,
    /// Final interior residual, max norm.
    pub residual: f64,
    /// Accepted ℓ2 residuals of each continuation step.
    pub history: Vec<Vec<f64>>,
}

/// Interior residual `−Δ_h u + k sinh(u) − f` of a full nodal field.
pub fn pb_residual(lap: &Laplacian, k: f64, f: Option<&[f64]>, u: &[f64]) -> Vec<f64> {
    let mut r = lap.apply(u);
    for (row, &node) in lap.interior.iter().enumerate() {
        r[row] += k * u[node].sinh() - f.map_or(0.0, |f| f[node]);
    }
    r
}

/// Solves with `g` given in boundary order and `f` as a full nodal field
/// (only interior values are used).
pub fn solve_pb_grid(grid: &Grid, k: f64, f: Option<&[f64]>, g: &[f64], cfg: &HomotopyConfig) -> Result<PbSolution> {
    cfg.validate()?;
    if !(k >= 0.0) {
        return Err(Error::config(format!("PB coefficient k = {k} must be >= 0")));
    }
    if g.len() != grid.n_boundary() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::dim(format!(
            "boundary data has {} values, grid needs {} finite values",
            g.len(),
            grid.n_boundary()
        )));
    }
    if let Some(f) = f {
        if f.len() != grid.n_nodes() {
            return Err(Error::dim(format!(
                "source has {} values for {} nodes",
                f.len(),
                grid.n_nodes()
            )));
        }
    }
    let lap = assemble_laplacian(grid)?;
    let mut boundary = vec![0.0; grid.n_nodes()];
    grid.scatter_boundary(g, &mut boundary)?;
    let b_full = lap.boundary_rhs(&boundary);
    let f_int: Vec<f64> = match f {
        Some(f) => lap.gather(f),
        None => vec![0.0; lap.n_unknowns()],
    };
    let cg_opts = CgOptions {
        tol: cfg.cg_tol,
        max_iter: 50 * lap.n_unknowns().max(100),
        jacobi: true,
    };

    let mut u = vec![0.0; lap.n_unknowns()];
    let mut history = Vec::with_capacity(cfg.steps);
    for lambda in cfg.lambdas() {
        let rhs: Vec<f64> = b_full.iter().zip(&f_int).map(|(b, s)| lambda * (b + s)).collect();
        let residual = |v: &[f64]| {
            let mut r = lap.matrix.matvec(v);
            for i in 0..r.len() {
                r[i] += k * v[i].sinh() - rhs[i];
            }
            r
        };
        let solve = |v: &[f64], fv: &[f64]| {
            let d: Vec<f64> = v.iter().map(|x| k * x.cosh()).collect();
            let jac = lap.matrix.add_diagonal(&d)?;
            let neg: Vec<f64> = fv.iter().map(|x| -x).collect();
            Ok(cg(&jac, &neg, None, &cg_opts, |_| {})?.x)
        };
        history.push(damped_newton(&mut u, residual, solve, cfg)?);
    }
    let mut field = boundary;
    lap.scatter(&u, &mut field);
    let residual = max_abs(&pb_residual(&lap, k, f, &field));
    Ok(PbSolution {
        u: field,
        residual,
        history,
    })
}
