//! P1 finite-element Poisson–Boltzmann solver on triangle meshes.
//!
//! The weak form is `∫∇u·∇v + k∫sinh(u)v = 0` with Dirichlet data on every
//! boundary loop. The sinh term uses the 3-point rule at barycentric
//! coordinates (2/3, 1/6, 1/6) and permutations, each weighted area/3.

use super::mesh::{signed_area, Mesh};
use super::newton::{damped_newton, max_abs, HomotopyConfig};
use super::pb_grid::PbSolution;
use crate::error::{Error, Result};
use crate::numerics::{cg, CgOptions, CsrMatrix};

const QUAD: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

struct Element {
    nodes: [usize; 3],
    area: f64,
    stiffness: [[f64; 3]; 3],
}

/// Precomputed element data and the free/fixed node split.
pub struct FemSystem {
    elements: Vec<Element>,
    n_nodes: usize,
    /// Free-node index of each node, `usize::MAX` on the boundary.
    unknown: Vec<usize>,
    free: Vec<usize>,
    boundary: Vec<usize>,
}

impl FemSystem {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let mut elements = Vec::with_capacity(mesh.triangles.len());
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p = tri.map(|v| mesh.nodes[v]);
            let area = signed_area(p[0], p[1], p[2]);
            if area < 1e-14 {
                return Err(Error::Mesh(format!("triangle {t} has area {area:.3e}")));
            }
            let grad = |i: usize| {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                [(p[j][1] - p[k][1]) / (2.0 * area), (p[k][0] - p[j][0]) / (2.0 * area)]
            };
            let g = [grad(0), grad(1), grad(2)];
            let mut stiffness = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    stiffness[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
            elements.push(Element {
                nodes: *tri,
                area,
                stiffness,
            });
        }
        let mask = mesh.is_boundary_mask();
        let free: Vec<usize> = (0..mesh.n_nodes()).filter(|&i| !mask[i]).collect();
        let mut unknown = vec![usize::MAX; mesh.n_nodes()];
        for (k, &i) in free.iter().enumerate() {
            unknown[i] = k;
        }
        Ok(FemSystem {
            elements,
            n_nodes: mesh.n_nodes(),
            unknown,
            free,
            boundary: mesh.boundary_nodes(),
        })
    }

    /// Full stiffness matrix over all nodes.
    pub fn stiffness(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(9 * self.elements.len());
        for e in &self.elements {
            for i in 0..3 {
                for j in 0..3 {
                    trip.push((e.nodes[i], e.nodes[j], e.stiffness[i][j]));
                }
            }
        }
        CsrMatrix::from_triplets(&trip, self.n_nodes, self.n_nodes).expect("mesh indices validated")
    }

    /// Free-node residual `K u + k ∫ sinh(u) φ_i` of a full nodal field.
    pub fn residual(&self, k: f64, u: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.free.len()];
        for e in &self.elements {
            let ue = e.nodes.map(|v| u[v]);
            let mut load = [0.0; 3];
            if k != 0.0 {
                for q in &QUAD {
                    let s = (q[0] * ue[0] + q[1] * ue[1] + q[2] * ue[2]).sinh() * e.area / 3.0;
                    for i in 0..3 {
                        load[i] += k * s * q[i];
                    }
                }
            }
            for i in 0..3 {
                let row = self.unknown[e.nodes[i]];
                if row == usize::MAX {
                    continue;
                }
                r[row] += e.stiffness[i][0] * ue[0] + e.stiffness[i][1] * ue[1] + e.stiffness[i][2] * ue[2] + load[i];
            }
        }
        r
    }

    /// Free-free block of `K + k ∫ c(u) φ_i φ_j` with `c` evaluated at the
    /// quadrature points.
    fn matrix(&self, k: f64, u: &[f64], c: impl Fn(f64) -> f64) -> Result<CsrMatrix> {
        let mut trip = Vec::with_capacity(9 * self.elements.len());
        for e in &self.elements {
            let ue = e.nodes.map(|v| u[v]);
            let mut local = e.stiffness;
            if k != 0.0 {
                for q in &QUAD {
                    let w = k * c(q[0] * ue[0] + q[1] * ue[1] + q[2] * ue[2]) * e.area / 3.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            local[i][j] += w * q[i] * q[j];
                        }
                    }
                }
            }
            for i in 0..3 {
                let r = self.unknown[e.nodes[i]];
                if r == usize::MAX {
                    continue;
                }
                for j in 0..3 {
                    let c = self.unknown[e.nodes[j]];
                    if c != usize::MAX {
                        trip.push((r, c, local[i][j]));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(&trip, self.free.len(), self.free.len())
    }

    fn scatter(&self, free_values: &[f64], field: &mut [f64]) {
        for (&i, &v) in self.free.iter().zip(free_values) {
            field[i] = v;
        }
    }
}

fn sinh_over_u(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        x.sinh() / x
    }
}

/// Solves with `g` listed in boundary-loop order.
pub fn solve_pb_fem(mesh: &Mesh, k: f64, g: &[f64], cfg: &HomotopyConfig) -> Result<PbSolution> {
    cfg.validate()?;
    let sys = FemSystem::new(mesh)?;
    if g.len() != sys.boundary.len() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::dim(format!(
            "boundary data has {} values, mesh has {} boundary nodes",
            g.len(),
            sys.boundary.len()
        )));
    }
    let mut field = vec![0.0; sys.n_nodes];
    for (&v, &gv) in sys.boundary.iter().zip(g) {
        field[v] = gv;
    }
    let cg_opts = CgOptions {
        tol: cfg.cg_tol,
        max_iter: 50 * sys.free.len().max(100),
        jacobi: true,
    };
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();

    // Harmonic extension (k = 0) as the starting point.
    let base = sys.residual(0.0, &field);
    let lin = sys.matrix(0.0, &field, |_| 0.0)?;
    let mut u = if sys.free.is_empty() {
        Vec::new()
    } else {
        cg(&lin, &neg(&base), None, &cg_opts, |_| {})?.x
    };
    sys.scatter(&u, &mut field);

    let mut history = Vec::with_capacity(cfg.steps);
    for lambda in cfg.lambdas() {
        let kl = lambda * k;
        if kl == 0.0 {
            history.push(vec![max_abs(&sys.residual(0.0, &field))]);
            continue;
        }
        // Picard: (K + k ∫ (sinh(u_old)/u_old) φφ) u = −K_fb g.
        for _ in 0..cfg.picard_iters {
            let a = sys.matrix(kl, &field, sinh_over_u)?;
            let mut zeroed = field.clone();
            sys.scatter(&vec![0.0; u.len()], &mut zeroed);
            let rhs = neg(&sys.residual(0.0, &zeroed));
            u = cg(&a, &rhs, Some(&u), &cg_opts, |_| {})?.x;
            sys.scatter(&u, &mut field);
        }
        let template = field.clone();
        let full = |v: &[f64]| {
            let mut f = template.clone();
            sys.scatter(v, &mut f);
            f
        };
        let residual = |v: &[f64]| sys.residual(kl, &full(v));
        let solve = |v: &[f64], fv: &[f64]| {
            let jac = sys.matrix(kl, &full(v), f64::cosh)?;
            Ok(cg(&jac, &neg(fv), None, &cg_opts, |_| {})?.x)
        };
        history.push(damped_newton(&mut u, residual, solve, cfg)?);
        sys.scatter(&u, &mut field);
    }
    let residual = max_abs(&sys.residual(k, &field));
    Ok(PbSolution {
        u: field,
        residual,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::mesh::structured_square;

    #[test]
    fn zero_boundary_gives_zero() {
        let mesh = structured_square(6).unwrap();
        let g = vec![0.0; mesh.n_boundary()];
        let sol = solve_pb_fem(&mesh, 2.0, &g, &HomotopyConfig::default()).unwrap();
        assert!(sol.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_stiffness_rows_sum_to_zero() {
        let mesh = super::super::mesh::star(20, 4).unwrap();
        let sys = FemSystem::new(&mesh).unwrap();
        let k = sys.stiffness();
        for &i in &sys.free {
            let (_, vals) = k.row(i);
            assert!(vals.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn nonlinear_solve_meets_tolerance() {
        let mesh = super::super::mesh::star(30, 6).unwrap();
        let g: Vec<f64> = (0..mesh.n_boundary()).map(|i| 3.0 * (i as f64 * 0.2).cos()).collect();
        let cfg = HomotopyConfig::default();
        let sol = solve_pb_fem(&mesh, 4.0, &g, &cfg).unwrap();
        assert!(sol.residual <= cfg.tol);
        for step in &sol.history {
            assert!(step.windows(2).all(|w| w[1] < w[0]));
        }
    }
}
