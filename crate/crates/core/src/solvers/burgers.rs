//! Viscous Burgers `u_t + (u²/2)_x = ν u_xx` on the periodic interval
//! [0, 2π), integrated in Fourier space with ETDRK4.
//!
//! The φ-function coefficients use contour averages over 32 points on a unit
//! circle around each `hL`, which avoids cancellation for small `|hL|`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::fft::{wavenumber, FftPlan};

const CONTOUR_POINTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurgersConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Snapshots at `t_j = j·T/n_snapshots`, `j = 1..=n_snapshots`.
    pub n_snapshots: usize,
    /// Drops the advection term (pure heat equation) when false.
    pub nonlinear: bool,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        BurgersConfig {
            nu: 0.01,
            dt: 1e-4,
            t_final: 1.0,
            n_snapshots: 100,
            nonlinear: true,
        }
    }
}

struct Coefficients {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

fn coefficients(l: &[f64], h: f64) -> Coefficients {
    let m = CONTOUR_POINTS;
    let roots: Vec<Complex64> = (1..=m)
        .map(|j| Complex64::from_polar(1.0, std::f64::consts::PI * (j as f64 - 0.5) / m as f64))
        .collect();
    let n = l.len();
    let mut c = Coefficients {
        e: Vec::with_capacity(n),
        e2: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        f2: Vec::with_capacity(n),
        f3: Vec::with_capacity(n),
    };
    for &li in l {
        let hl = h * li;
        c.e.push(hl.exp());
        c.e2.push((hl / 2.0).exp());
        let (mut q, mut f1, mut f2, mut f3) = (0.0, 0.0, 0.0, 0.0);
        for r in &roots {
            let lr = Complex64::new(hl, 0.0) + r;
            let elr = lr.exp();
            let lr3 = lr * lr * lr;
            q += (((lr / 2.0).exp() - 1.0) / lr).re;
            f1 += ((-4.0 - lr + elr * (4.0 - 3.0 * lr + lr * lr)) / lr3).re;
            f2 += ((2.0 + lr + elr * (-2.0 + lr)) / lr3).re;
            f3 += ((-4.0 - 3.0 * lr - lr * lr + elr * (4.0 - lr)) / lr3).re;
        }
        let s = h / m as f64;
        c.q.push(s * q);
        c.f1.push(s * f1);
        c.f2.push(s * f2);
        c.f3.push(s * f3);
    }
    c
}

struct Nonlinear {
    plan: FftPlan,
    mask: Vec<f64>,
    ik_half: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl Nonlinear {
    /// `−½ i m · mask · FFT((IFFT(mask · v))²)`.
    fn eval(&mut self, v: &[Complex64], out: &mut [Complex64]) {
        for ((w, &x), &m) in self.work.iter_mut().zip(v).zip(&self.mask) {
            *w = x * m;
        }
        self.plan.process(&mut self.work, true);
        for w in self.work.iter_mut() {
            *w = Complex64::new(w.re * w.re, 0.0);
        }
        self.plan.process(&mut self.work, false);
        for (((o, &w), &m), &ik) in out.iter_mut().zip(&self.work).zip(&self.mask).zip(&self.ik_half) {
            *o = ik * w * m;
        }
    }
}

/// Integrates from `u0` (values at `x_j = 2πj/N`) and returns the snapshots
/// on the same grid.
pub fn etdrk4_burgers(u0: &[f64], cfg: &BurgersConfig) -> Result<Vec<Vec<f64>>> {
    let n = u0.len();
    if !(cfg.nu > 0.0 && cfg.dt > 0.0 && cfg.t_final > 0.0) || cfg.n_snapshots == 0 {
        return Err(Error::config(format!("invalid Burgers configuration {cfg:?}")));
    }
    let plan = FftPlan::new(n)?;
    let steps_total = (cfg.t_final / cfg.dt).round() as usize;
    if steps_total % cfg.n_snapshots != 0 || ((steps_total as f64) * cfg.dt - cfg.t_final).abs() > 1e-9 * cfg.t_final {
        return Err(Error::config(format!(
            "T = {} is not a whole number of steps dt = {} per snapshot",
            cfg.t_final, cfg.dt
        )));
    }
    let per_snapshot = steps_total / cfg.n_snapshots;

    let ms: Vec<f64> = (0..n).map(|j| wavenumber(j, n) as f64).collect();
    let l: Vec<f64> = ms.iter().map(|m| -cfg.nu * m * m).collect();
    let c = coefficients(&l, cfg.dt);
    let cutoff = n as f64 / 3.0;
    let mask: Vec<f64> = ms
        .iter()
        .enumerate()
        .map(|(j, m)| if m.abs() < cutoff && j != n / 2 { 1.0 } else { 0.0 })
        .collect();
    let ik_half = ms.iter().map(|&m| Complex64::new(0.0, -0.5 * m)).collect();
    let mut nl = Nonlinear {
        plan: plan.clone(),
        mask,
        ik_half,
        work: vec![Complex64::new(0.0, 0.0); n],
    };

    let mut v: Vec<Complex64> = u0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan.process(&mut v, false);
    let zero = Complex64::new(0.0, 0.0);
    let (mut nv, mut na, mut nb, mut nc) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
    let (mut a, mut b, mut cc) = (vec![zero; n], vec![zero; n], vec![zero; n]);
    let mut out = Vec::with_capacity(cfg.n_snapshots);
    for snap in 1..=cfg.n_snapshots {
        for _ in 0..per_snapshot {
            if !cfg.nonlinear {
                for (x, e) in v.iter_mut().zip(&c.e) {
                    *x *= e;
                }
                continue;
            }
            nl.eval(&v, &mut nv);
            for i in 0..n {
                a[i] = c.e2[i] * v[i] + c.q[i] * nv[i];
            }
            nl.eval(&a, &mut na);
            for i in 0..n {
                b[i] = c.e2[i] * v[i] + c.q[i] * na[i];
            }
            nl.eval(&b, &mut nb);
            for i in 0..n {
                cc[i] = c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nv[i]);
            }
            nl.eval(&cc, &mut nc);
            for i in 0..n {
                v[i] = c.e[i] * v[i] + nv[i] * c.f1[i] + 2.0 * (na[i] + nb[i]) * c.f2[i] + nc[i] * c.f3[i];
            }
        }
        let mut phys = v.clone();
        plan.process(&mut phys, true);
        let snapshot: Vec<f64> = phys.iter().map(|z| z.re).collect();
        if snapshot.iter().any(|x| !x.is_finite()) {
            return Err(Error::BlowUp {
                time: snap as f64 * cfg.t_final / cfg.n_snapshots as f64,
            });
        }
        out.push(snapshot);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_initial_condition_stays_zero() {
        let cfg = BurgersConfig {
            t_final: 0.01,
            n_snapshots: 2,
            ..Default::default()
        };
        let traj = etdrk4_burgers(&[0.0; 64], &cfg).unwrap();
        assert!(traj.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn contour_coefficients_match_closed_form_away_from_zero() {
        let h = 0.5;
        let l = [-3.0];
        let c = coefficients(&l, h);
        let z: f64 = h * l[0];
        let f1 = h * (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / z.powi(3);
        let q = h * ((z / 2.0).exp() - 1.0) / z;
        assert!((c.f1[0] - f1).abs() < 1e-12);
        assert!((c.q[0] - q).abs() < 1e-12);
    }

    #[test]
    fn rejects_misaligned_schedule() {
        let cfg = BurgersConfig {
            t_final: 1.0,
            dt: 0.3,
            ..Default::default()
        };
        assert!(etdrk4_burgers(&[0.0; 16], &cfg).is_err());
    }
}
