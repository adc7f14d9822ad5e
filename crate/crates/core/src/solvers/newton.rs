//! Damped Newton iteration with homotopy continuation.

use crate::autodiff::kernels::dot;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomotopyConfig {
    /// Uniform continuation steps `λ = 1/steps, 2/steps, …, 1`.
    pub steps: usize,
    /// Target max-norm of the nonlinear residual.
    pub tol: f64,
    pub max_newton: usize,
    /// Smallest line-search step before giving up.
    pub min_damping: f64,
    /// Picard sweeps before Newton (FEM only).
    pub picard_iters: usize,
    /// Relative tolerance of the inner CG solves.
    pub cg_tol: f64,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        HomotopyConfig {
            steps: 8,
            tol: 1e-8,
            max_newton: 50,
            min_damping: 1.0 / 256.0,
            picard_iters: 3,
            cg_tol: 1e-10,
        }
    }
}

impl HomotopyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.tol > 0.0) || self.max_newton == 0 || !(self.min_damping > 0.0) {
            return Err(Error::config(format!("invalid homotopy configuration {self:?}")));
        }
        Ok(())
    }

    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.steps).map(move |s| s as f64 / self.steps as f64)
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Runs damped Newton on `F(u) = 0` from `u`.
///
/// `solve(u, F)` returns the Newton update `δ` with `J(u) δ = −F`. A step is
/// accepted once `‖F(u + tδ)‖₂ < ‖F(u)‖₂`, halving `t` from 1 down to
/// `cfg.min_damping`. Returns the ℓ2 residual of every accepted iterate,
/// starting with the initial one.
pub(crate) fn damped_newton(
    u: &mut Vec<f64>,
    residual: impl Fn(&[f64]) -> Vec<f64>,
    mut solve: impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
    cfg: &HomotopyConfig,
) -> Result<Vec<f64>> {
    let mut f = residual(u);
    let mut norm = dot(&f, &f).sqrt();
    let mut history = vec![norm];
    for _ in 0..cfg.max_newton {
        if max_abs(&f) <= cfg.tol {
            return Ok(history);
        }
        let delta = solve(u, &f)?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let ft = residual(&trial);
            let nt = dot(&ft, &ft).sqrt();
            if nt < norm && nt.is_finite() {
                *u = trial;
                f = ft;
                norm = nt;
                history.push(norm);
                break;
            }
            t *= 0.5;
            if t < cfg.min_damping {
                return Err(Error::solver("line search found no decrease", max_abs(&f)));
            }
        }
    }
    if max_abs(&f) <= cfg.tol {
        return Ok(history);
    }
    Err(Error::solver(
        format!("Newton did not converge in {} iterations", cfg.max_newton),
        max_abs(&f),
    ))
}
