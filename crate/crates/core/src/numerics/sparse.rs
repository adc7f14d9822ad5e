//! Compressed sparse row matrices and preconditioned conjugate gradient.

use crate::autodiff::kernels::dot;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(triplets: &[(usize, usize, f64)], n_rows: usize, n_cols: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::dim(format!("triplet ({r}, {c}) outside {n_rows}x{n_cols}")));
            }
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[fill[r]] = (c, v);
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..n_rows {
            let row = &mut entries[counts[r]..counts[r + 1]];
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.n_rows) {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                trip.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(&trip, self.n_cols, self.n_rows).expect("transpose indices in range")
    }

    /// Largest `|A - Aᵀ|` entry.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - t.get(r, c)).abs());
            }
            let (tc, tv) = t.row(r);
            for (&c, &v) in tc.iter().zip(tv) {
                worst = worst.max((v - self.get(r, c)).abs());
            }
        }
        worst
    }

    /// Copy with `d[i]` added to every diagonal entry. Diagonal entries must
    /// already be stored.
    pub fn add_diagonal(&self, d: &[f64]) -> Result<CsrMatrix> {
        let mut out = self.clone();
        for (i, &di) in d.iter().enumerate() {
            let (a, b) = (out.row_ptr[i], out.row_ptr[i + 1]);
            match out.col_idx[a..b].binary_search(&i) {
                Ok(k) => out.values[a + k] += di,
                Err(_) => return Err(Error::dim(format!("row {i} has no stored diagonal"))),
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: 20_000,
            jacobi: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖Ax − b‖ / ‖b‖`.
    pub residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize, jacobi_precond: bool) -> Result<Vec<f64>> {
    let opts = CgOptions {
        tol,
        max_iter,
        jacobi: jacobi_precond,
    };
    cg(a, b, None, &opts, |_| {}).map(|o| o.x)
}

/// Preconditioned CG from an optional initial guess. `monitor` sees every
/// iterate, starting with the initial one.
pub fn cg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
    mut monitor: impl FnMut(&[f64]),
) -> Result<CgOutcome> {
    let n = a.n_rows;
    if a.n_cols != n || b.len() != n {
        return Err(Error::dim(format!(
            "cg on {}x{} matrix with rhs of length {}",
            a.n_rows,
            a.n_cols,
            b.len()
        )));
    }
    let inv_diag = if opts.jacobi {
        let d = a.diagonal();
        if let Some(i) = d.iter().position(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::solver(
                format!("zero diagonal at row {i} with Jacobi preconditioning"),
                f64::NAN,
            ));
        }
        Some(d.iter().map(|v| 1.0 / v).collect::<Vec<f64>>())
    } else {
        None
    };
    let precond = |r: &[f64], z: &mut [f64]| match &inv_diag {
        Some(d) => {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                *zi = ri * di;
            }
        }
        None => z.copy_from_slice(r),
    };

    let bnorm = dot(b, b).sqrt();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    monitor(&x);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = a.matvec(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    if rel <= opts.tol {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: rel,
        });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=opts.max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::solver(
                "matrix is not positive definite along a search direction",
                rel,
            ));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        monitor(&x);
        rel = dot(&r, &r).sqrt() / bnorm;
        if !rel.is_finite() {
            return Err(Error::solver("non-finite residual", rel));
        }
        if rel <= opts.tol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                residual: rel,
            });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::solver(
        format!("cg did not converge in {} iterations", opts.max_iter),
        rel,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(&[(0, 0, 1.0), (0, 0, 2.0)], 1, 1).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.values, vec![3.0]);
    }

    #[test]
    fn out_of_range_triplet() {
        assert!(matches!(
            CsrMatrix::from_triplets(&[(2, 0, 1.0)], 2, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        assert_eq!(a.matvec(&b), b);
        let out = cg(&a, &b, None, &CgOptions::default(), |_| {}).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = CsrMatrix::identity(3);
        assert_eq!(cg_solve(&a, &[0.0; 3], 1e-10, 10, true).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zero_diagonal_rejected_with_jacobi() {
        let a = CsrMatrix::from_triplets(&[(0, 1, 1.0), (1, 0, 1.0)], 2, 2).unwrap();
        assert!(matches!(
            cg_solve(&a, &[1.0, 1.0], 1e-10, 10, true),
            Err(Error::Solver { .. })
        ));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mut t = Vec::new();
        for i in 0..50 {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(&t, 50, 50).unwrap();
        match cg_solve(&a, &[1.0; 50], 1e-12, 3, false) {
            Err(Error::Solver { residual, .. }) => assert!(residual > 1e-12 && residual.is_finite()),
            other => panic!("expected solver error, got {other:?}"),
        }
    }
}
