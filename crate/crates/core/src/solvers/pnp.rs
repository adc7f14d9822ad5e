//! Steady Poisson–Nernst–Planck system on the unit square,
//!
//! ```text
//! −Δφ = c₊ − c₋,   ∇·(∇c₊ + c₊∇φ) = 0,   ∇·(∇c₋ − c₋∇φ) = 0,
//! ```
//!
//! solved by Gummel iteration. Transport fluxes use Scharfetter–Gummel
//! exponential fitting, written in Slotboom variables `c₊ = n₊e^{−φ}`,
//! `c₋ = n₋e^{φ}` so that each transport solve is a symmetric M-matrix.
//! With `centered` set, each transport step is then refined by defect
//! correction until the centered-difference stencil is satisfied, using the
//! exponentially fitted operator as the preconditioner.

use super::grid::{assemble_laplacian, assemble_weighted, Grid, Laplacian};
use super::newton::{damped_newton, HomotopyConfig};
use crate::error::{Error, Result};
use crate::numerics::{cg, CgOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpConfig {
    /// Stop once the max update of all three fields falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub cg_tol: f64,
    /// Solve the transport equations in centered-difference form.
    pub centered: bool,
}

impl Default for PnpConfig {
    fn default() -> Self {
        PnpConfig {
            tol: 1e-8,
            max_sweeps: 200,
            cg_tol: 1e-13,
            centered: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PnpSolution {
    pub phi: Vec<f64>,
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
    pub sweeps: usize,
    /// Max field update of the last sweep.
    pub update: f64,
}

/// Bernoulli function `x/(eˣ − 1)`.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x / 2.0 + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

fn cg_opts(cfg: &PnpConfig, n: usize) -> CgOptions {
    CgOptions {
        tol: cfg.cg_tol,
        max_iter: 50 * n.max(100),
        jacobi: true,
    }
}

/// Dirichlet solve of a (weighted) Laplacian with boundary values from
/// `field`; interior values of `field` are overwritten.
fn solve_dirichlet(op: &Laplacian, field: &mut [f64], opts: &CgOptions) -> Result<()> {
    let rhs = op.boundary_rhs(field);
    let guess = op.gather(field);
    let sol = cg(&op.matrix, &rhs, Some(&guess), opts, |_| {})?;
    op.scatter(&sol.x, field);
    Ok(())
}

/// Solves with traces `g_phi`, `g_cp`, `g_cm` in grid boundary order.
pub fn gummel_pnp(n: usize, g_phi: &[f64], g_cp: &[f64], g_cm: &[f64], cfg: &PnpConfig) -> Result<PnpSolution> {
    let grid = Grid::square(n)?;
    let nb = grid.n_boundary();
    for (name, g) in [("phi", g_phi), ("c_plus", g_cp), ("c_minus", g_cm)] {
        if g.len() != nb || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::dim(format!(
                "{name} trace needs {nb} finite values, got {}",
                g.len()
            )));
        }
    }
    if let Some(v) = g_cp.iter().chain(g_cm).find(|&&v| !(v > 0.0)) {
        return Err(Error::contract(format!(
            "concentration trace value {v} is not positive"
        )));
    }
    if !(cfg.tol > 0.0) || cfg.max_sweeps == 0 {
        return Err(Error::config(format!("invalid PNP configuration {cfg:?}")));
    }
    let lap = assemble_laplacian(&grid)?;
    let opts = cg_opts(cfg, lap.n_unknowns());
    let bnodes = grid.boundary_nodes();

    let mut phi = vec![0.0; grid.n_nodes()];
    grid.scatter_boundary(g_phi, &mut phi)?;
    solve_dirichlet(&lap, &mut phi, &opts)?;
    let mut cp = vec![0.0; grid.n_nodes()];
    let mut cm = vec![0.0; grid.n_nodes()];
    grid.scatter_boundary(g_cp, &mut cp)?;
    grid.scatter_boundary(g_cm, &mut cm)?;
    solve_dirichlet(&lap, &mut cp, &opts)?;
    solve_dirichlet(&lap, &mut cm, &opts)?;

    let newton = HomotopyConfig {
        steps: 1,
        tol: 1e-10,
        max_newton: 50,
        cg_tol: cfg.cg_tol,
        ..Default::default()
    };
    let phi_b = lap.boundary_rhs(&phi);

    for sweep in 1..=cfg.max_sweeps {
        let old = (phi.clone(), cp.clone(), cm.clone());

        // Poisson with c± = n± e^{∓φ} for the current quasi-Fermi levels.
        let np: Vec<f64> = lap.interior.iter().map(|&i| cp[i] * phi[i].exp()).collect();
        let nm: Vec<f64> = lap.interior.iter().map(|&i| cm[i] * (-phi[i]).exp()).collect();
        let residual = |v: &[f64]| {
            let mut r = lap.matrix.matvec(v);
            for i in 0..r.len() {
                r[i] -= phi_b[i] + np[i] * (-v[i]).exp() - nm[i] * v[i].exp();
            }
            r
        };
        let solve = |v: &[f64], f: &[f64]| {
            let d: Vec<f64> = (0..v.len())
                .map(|i| np[i] * (-v[i]).exp() + nm[i] * v[i].exp())
                .collect();
            let jac = lap.matrix.add_diagonal(&d)?;
            let neg: Vec<f64> = f.iter().map(|x| -x).collect();
            Ok(cg(&jac, &neg, None, &opts, |_| {})?.x)
        };
        let mut u = lap.gather(&phi);
        damped_newton(&mut u, residual, solve, &newton)?;
        lap.scatter(&u, &mut phi);

        // Transport in Slotboom variables with the updated potential.
        for (c, g, sign) in [(&mut cp, g_cp, 1.0), (&mut cm, g_cm, -1.0)] {
            let op = assemble_weighted(&grid, |i, j| {
                bernoulli(sign * (phi[j] - phi[i])) * (-sign * phi[i]).exp()
            })?;
            let mut slot: Vec<f64> = (0..grid.n_nodes()).map(|i| c[i] * (sign * phi[i]).exp()).collect();
            for (&b, &gv) in bnodes.iter().zip(g) {
                slot[b] = gv * (sign * phi[b]).exp();
            }
            solve_dirichlet(&op, &mut slot, &opts)?;
            for i in 0..c.len() {
                c[i] = slot[i] * (-sign * phi[i]).exp();
            }
            if cfg.centered {
                defect_correct(&grid, &op, &phi, c, sign, &opts)?;
            }
        }

        let delta = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let update = delta(&phi, &old.0).max(delta(&cp, &old.1)).max(delta(&cm, &old.2));
        if !update.is_finite() {
            return Err(Error::solver("Gummel iteration diverged", update));
        }
        if update < cfg.tol {
            return Ok(PnpSolution {
                phi,
                c_plus: cp,
                c_minus: cm,
                sweeps: sweep,
                update,
            });
        }
    }
    let r = pnp_centered_residual(n, &phi, &cp, &cm)?;
    Err(Error::solver(
        format!("Gummel did not converge in {} sweeps", cfg.max_sweeps),
        r.iter().fold(0.0, |m: f64, v| m.max(*v)),
    ))
}

/// Interior residual `Σ_j [(c_j − c_i) ± ½(c_i + c_j)(φ_j − φ_i)]/h²`.
fn centered_transport(grid: &Grid, phi: &[f64], c: &[f64], sign: f64, interior: &[usize]) -> Vec<f64> {
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    interior
        .iter()
        .map(|&i| {
            grid.neighbours(i)
                .map(|j| ((c[j] - c[i]) + sign * 0.5 * (c[i] + c[j]) * (phi[j] - phi[i])) * inv_h2)
                .sum()
        })
        .collect()
}

const DEFECT_TOL: f64 = 1e-9;
const DEFECT_ITERS: usize = 100;

/// Iterates `L_SG δn = R(c)`, `c += δn e^{∓φ}` until the centered residual
/// is below `DEFECT_TOL`.
fn defect_correct(grid: &Grid, op: &Laplacian, phi: &[f64], c: &mut [f64], sign: f64, opts: &CgOptions) -> Result<()> {
    let mut last = f64::INFINITY;
    for _ in 0..DEFECT_ITERS {
        let r = centered_transport(grid, phi, c, sign, &op.interior);
        let size = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if size < DEFECT_TOL {
            if let Some(v) = c.iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::solver(format!("centered transport lost positivity ({v})"), size));
            }
            return Ok(());
        }
        if !(size < last) {
            return Err(Error::solver("defect correction stalled", size));
        }
        last = size;
        let dn = cg(&op.matrix, &r, None, opts, |_| {})?.x;
        for (&i, d) in op.interior.iter().zip(dn) {
            c[i] += d * (-sign * phi[i]).exp();
        }
    }
    Err(Error::solver("defect correction did not converge", last))
}

/// Max interior residuals of the centered-difference form of the three
/// equations: `[poisson, c_plus, c_minus]`. The transport stencils use
/// arithmetic face averages of the concentration.
pub fn pnp_centered_residual(n: usize, phi: &[f64], cp: &[f64], cm: &[f64]) -> Result<[f64; 3]> {
    let grid = Grid::square(n)?;
    if phi.len() != grid.n_nodes() || cp.len() != grid.n_nodes() || cm.len() != grid.n_nodes() {
        return Err(Error::dim("PNP fields do not match the grid"));
    }
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = [0.0f64; 3];
    for i in grid.interior_nodes() {
        let mut r = [-(cp[i] - cm[i]), 0.0, 0.0];
        for j in grid.neighbours(i) {
            let d = phi[j] - phi[i];
            r[0] -= d * inv_h2;
            r[1] += ((cp[j] - cp[i]) + 0.5 * (cp[i] + cp[j]) * d) * inv_h2;
            r[2] += ((cm[j] - cm[i]) - 0.5 * (cm[i] + cm[j]) * d) * inv_h2;
        }
        for k in 0..3 {
            out[k] = out[k].max(r[k].abs());
        }
    }
    Ok(out)
}
