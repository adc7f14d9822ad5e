//! 2-D incompressible Navier–Stokes in vorticity form on the periodic unit
//! square, pseudo-spectral in space with Crank–Nicolson viscosity and
//! explicit advection.
//!
//! Fields are row-major `n × n` with rows along `y` and columns along `x`.
//! The streamfunction satisfies `Δψ = ω` and the velocity is
//! `u = (ψ_y, −ψ_x)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::fft::{wavenumber, Fft2dPlan};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NsConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: f64,
    /// Adds `0.1(sin 2π(x+y) + cos 2π(x+y))` when true.
    pub forcing: bool,
}

impl Default for NsConfig {
    fn default() -> Self {
        NsConfig {
            nu: 1e-3,
            dt: 1e-4,
            t_final: 50.0,
            record_every: 1.0,
            forcing: true,
        }
    }
}

/// The deterministic forcing sampled on the `n × n` grid.
pub fn ns_forcing(n: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let s = 2.0 * PI * (c as f64 + r as f64) / n as f64;
            f.push(0.1 * (s.sin() + s.cos()));
        }
    }
    f
}

/// `½ Σ ω²` over grid points.
pub fn enstrophy(omega: &[f64]) -> f64 {
    0.5 * omega.iter().map(|w| w * w).sum::<f64>()
}

fn steps_between(interval: f64, dt: f64) -> Result<usize> {
    let s = (interval / dt).round();
    if s < 1.0 || (s * dt - interval).abs() > 1e-9 * interval {
        return Err(Error::config(format!(
            "interval {interval} is not a multiple of dt = {dt}"
        )));
    }
    Ok(s as usize)
}

/// Integrates from `omega0` and returns the snapshots at `t = j·record_every`
/// for `j = 1..=T/record_every`.
pub fn ns_rollout(omega0: &[f64], n: usize, cfg: &NsConfig) -> Result<Vec<Vec<f64>>> {
    if omega0.len() != n * n {
        return Err(Error::dim(format!(
            "vorticity has {} values, grid is {n}x{n}",
            omega0.len()
        )));
    }
    if !(cfg.nu >= 0.0 && cfg.dt > 0.0 && cfg.t_final > 0.0 && cfg.record_every > 0.0) {
        return Err(Error::config(format!("invalid Navier-Stokes configuration {cfg:?}")));
    }
    let per_record = steps_between(cfg.record_every, cfg.dt)?;
    let n_records = (cfg.t_final / cfg.record_every).round() as usize;
    if n_records == 0 || ((n_records as f64) * cfg.record_every - cfg.t_final).abs() > 1e-9 * cfg.t_final {
        return Err(Error::config(format!(
            "T = {} is not a multiple of the record interval {}",
            cfg.t_final, cfg.record_every
        )));
    }
    let plan = Fft2dPlan::new(n, n)?;
    let nn = n * n;
    let zero = Complex64::new(0.0, 0.0);

    let mut kx = vec![0.0; nn];
    let mut ky = vec![0.0; nn];
    let mut mask = vec![0.0; nn];
    let cut = n as f64 / 3.0;
    for r in 0..n {
        for c in 0..n {
            let (my, mx) = (wavenumber(r, n) as f64, wavenumber(c, n) as f64);
            let i = r * n + c;
            kx[i] = 2.0 * PI * mx;
            ky[i] = 2.0 * PI * my;
            if mx.abs() < cut && my.abs() < cut {
                mask[i] = 1.0;
            }
        }
    }
    let k2: Vec<f64> = kx.iter().zip(&ky).map(|(a, b)| a * a + b * b).collect();
    let half = 0.5 * cfg.nu * cfg.dt;
    let num: Vec<f64> = k2.iter().map(|k| 1.0 - half * k).collect();
    let den: Vec<f64> = k2.iter().map(|k| 1.0 + half * k).collect();

    let mut w_hat: Vec<Complex64> = omega0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.process(&mut w_hat, false);
    let f_hat = if cfg.forcing {
        let mut f: Vec<Complex64> = ns_forcing(n).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        plan.process(&mut f, false);
        f
    } else {
        vec![zero; nn]
    };

    let mut vel = vec![zero; nn];
    let mut grad = vec![zero; nn];
    let mut adv = vec![zero; nn];
    let mut out = Vec::with_capacity(n_records);
    let i_unit = Complex64::new(0.0, 1.0);
    for rec in 1..=n_records {
        for _ in 0..per_record {
            // Pack (u + i v) and (ω_x + i ω_y): real fields share one transform.
            for i in 0..nn {
                let w = w_hat[i] * mask[i];
                let psi = if k2[i] > 0.0 { -w / k2[i] } else { zero };
                let u = i_unit * ky[i] * psi;
                let v = -i_unit * kx[i] * psi;
                vel[i] = u + i_unit * v;
                grad[i] = i_unit * kx[i] * w + i_unit * (i_unit * ky[i] * w);
            }
            plan.process(&mut vel, true);
            plan.process(&mut grad, true);
            for i in 0..nn {
                adv[i] = Complex64::new(vel[i].re * grad[i].re + vel[i].im * grad[i].im, 0.0);
            }
            plan.process(&mut adv, false);
            for i in 0..nn {
                w_hat[i] = (num[i] * w_hat[i] - cfg.dt * mask[i] * adv[i] + cfg.dt * f_hat[i]) / den[i];
            }
        }
        let mut phys = w_hat.clone();
        plan.process(&mut phys, true);
        let snap: Vec<f64> = phys.iter().map(|z| z.re).collect();
        if snap.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                time: rec as f64 * cfg.record_every,
            });
        }
        out.push(snap);
    }
    Ok(out)
}
