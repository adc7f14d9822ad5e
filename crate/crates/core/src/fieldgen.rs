//! Random input-function samplers for every benchmark family.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::fft::{wavenumber, Fft2dPlan};
use crate::rng::Rng;
use crate::solvers::Grid;

fn scale_to_unit_max(values: &mut [f64]) {
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        for v in values.iter_mut() {
            *v /= m;
        }
    }
}

/// Harmonic sample `u = Σ w_j · ½ log‖x − c_j‖²` with `J` sources drawn
/// from `[−0.5, 1.5]² \ [−ε, 1+ε]²`. Returns `(g, u)` with `g` in boundary
/// order and `u` the full nodal field, jointly scaled to max-abs 1.
pub fn laplace_mad_sample(grid: &Grid, j: usize, eps: f64, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if grid.dim != 2 {
        return Err(Error::dim("Laplace sampler needs a 2-D grid"));
    }
    let mut sources = Vec::with_capacity(j);
    while sources.len() < j {
        let c = [rng.uniform_range(-0.5, 1.5), rng.uniform_range(-0.5, 1.5)];
        let inside = c.iter().all(|&v| v >= -eps && v <= 1.0 + eps);
        if !inside {
            sources.push((c, rng.uniform_range(-1.0, 1.0)));
        }
    }
    let mut u: Vec<f64> = (0..grid.n_nodes())
        .map(|i| {
            let p = grid.coords(i);
            sources
                .iter()
                .map(|(c, w)| w * 0.5 * ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).ln())
                .sum()
        })
        .collect();
    scale_to_unit_max(&mut u);
    Ok((grid.gather_boundary(&u), u))
}

/// `Σ_{m≤K} (a_m cos mx + b_m sin mx)/m^α` on `x_j = 2πj/N`, shifted to zero
/// mean and scaled to unit standard deviation.
pub fn fourier_ic_1d(k: usize, alpha: f64, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if !n.is_power_of_two() || k == 0 || 2 * k >= n {
        return Err(Error::dim(format!(
            "Fourier initial condition needs N a power of two above 2K, got N={n}, K={k}"
        )));
    }
    let coeffs: Vec<(f64, f64)> = (1..=k).map(|_| (rng.normal(), rng.normal())).collect();
    let mut u: Vec<f64> = (0..n)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / n as f64;
            coeffs
                .iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let m = (i + 1) as f64;
                    (a * (m * x).cos() + b * (m * x).sin()) / m.powf(alpha)
                })
                .sum()
        })
        .collect();
    let mean = u.iter().sum::<f64>() / n as f64;
    let std = (u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if std == 0.0 {
        return Err(Error::Generation("degenerate initial condition".into()));
    }
    for v in &mut u {
        *v = (*v - mean) / std;
    }
    Ok(u)
}

/// Low-pass and high-pass band parameters `(α, τ)` of the boundary mixture.
pub const GRF_LOW: (f64, f64) = (2.5, 3.0);
pub const GRF_HIGH: (f64, f64) = (1.5, 12.0);
pub const GRF_HIGH_WEIGHT: f64 = 0.25;

/// Periodic Gaussian random field over a closed loop of `n` points, with
/// per-mode variance `(m² + τ²)^(−α)`.
pub fn periodic_grf_1d(n: usize, alpha: f64, tau: f64, rng: &mut Rng) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64)> = (0..n / 2)
        .map(|m| {
            let s = ((m * m) as f64 + tau * tau).powf(-alpha / 2.0);
            (s, rng.normal(), if m == 0 { 0.0 } else { rng.normal() })
        })
        .collect();
    (0..n)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / n as f64;
            modes
                .iter()
                .enumerate()
                .map(|(m, (s, a, b))| s * (a * (m as f64 * th).cos() + b * (m as f64 * th).sin()))
                .sum()
        })
        .collect()
}

/// `g_low + 0.25·g_high`, normalized to max-abs 1.
pub fn boundary_grf_mix(nb: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if nb < 8 {
        return Err(Error::dim(format!("boundary loop needs at least 8 points, got {nb}")));
    }
    let low = periodic_grf_1d(nb, GRF_LOW.0, GRF_LOW.1, rng);
    let high = periodic_grf_1d(nb, GRF_HIGH.0, GRF_HIGH.1, rng);
    let mut g: Vec<f64> = low.iter().zip(&high).map(|(l, h)| l + GRF_HIGH_WEIGHT * h).collect();
    scale_to_unit_max(&mut g);
    Ok(g)
}

/// Random `[2, 50, 50, 1]` sine network
/// `W₃ sin(W₂ sin(W₁x + b₁) + b₂) + b₃`.
#[derive(Clone, Debug)]
pub struct SineNet {
    w1: Vec<[f64; 2]>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: f64,
}

impl SineNet {
    pub const WIDTH: usize = 50;

    /// Weights `N(0,1)/√fan_in`, biases `Uniform(−π, π)`.
    pub fn sample(rng: &mut Rng) -> Self {
        let w = Self::WIDTH;
        let s1 = 1.0 / 2f64.sqrt();
        let s2 = 1.0 / (w as f64).sqrt();
        let w1 = (0..w).map(|_| [rng.normal() * s1, rng.normal() * s1]).collect();
        let b1 = (0..w).map(|_| rng.uniform_range(-PI, PI)).collect();
        let w2 = (0..w).map(|_| (0..w).map(|_| rng.normal() * s2).collect()).collect();
        let b2 = (0..w).map(|_| rng.uniform_range(-PI, PI)).collect();
        let w3 = (0..w).map(|_| rng.normal() * s2).collect();
        let b3 = rng.uniform_range(-PI, PI);
        SineNet { w1, b1, w2, b2, w3, b3 }
    }

    /// `‖W₃‖₁ + |b₃|`, a bound on the output magnitude.
    pub fn output_bound(&self) -> f64 {
        self.w3.iter().map(|v| v.abs()).sum::<f64>() + self.b3.abs()
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.eval_with_laplacian(x, y).0
    }

    /// Value and exact Laplacian at `(x, y)`.
    pub fn eval_with_laplacian(&self, x: f64, y: f64) -> (f64, f64) {
        let w = Self::WIDTH;
        let mut s1 = [0.0; Self::WIDTH];
        let mut c1 = [0.0; Self::WIDTH];
        for i in 0..w {
            let z = self.w1[i][0] * x + self.w1[i][1] * y + self.b1[i];
            s1[i] = z.sin();
            c1[i] = z.cos();
        }
        let (mut u, mut lap) = (self.b3, 0.0);
        for k in 0..w {
            let row = &self.w2[k];
            let mut z2 = self.b2[k];
            let (mut gx, mut gy, mut hxy) = (0.0, 0.0, 0.0);
            for i in 0..w {
                z2 += row[i] * s1[i];
                gx += row[i] * c1[i] * self.w1[i][0];
                gy += row[i] * c1[i] * self.w1[i][1];
                hxy -= row[i] * s1[i] * (self.w1[i][0].powi(2) + self.w1[i][1].powi(2));
            }
            u += self.w3[k] * z2.sin();
            lap += self.w3[k] * (-z2.sin() * (gx * gx + gy * gy) + z2.cos() * hxy);
        }
        (u, lap)
    }

    /// Values on every node of a 2-D grid.
    pub fn field(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.n_nodes())
            .map(|i| {
                let p = grid.coords(i);
                self.eval(p[0], p[1])
            })
            .collect()
    }
}

/// Raw sine-network field on a 2-D grid.
pub fn sine_net_field(grid: &Grid, rng: &mut Rng) -> Result<Vec<f64>> {
    if grid.dim != 2 {
        return Err(Error::dim("sine network field needs a 2-D grid"));
    }
    Ok(SineNet::sample(rng).field(grid))
}

/// Darcy coefficient `0.1 + softplus(raw)`.
pub fn darcy_coefficient(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|&v| 0.1 + crate::autodiff::softplus(v)).collect()
}

/// Hermitian spectrum `ξ(k)(|k|² + τ²)^(−α/2)` with `k = 2πm` and a zero DC
/// mode, laid out for an `n × n` FFT and scaled so that `ω(x) = Σ ω̂ e^{ik·x}`.
pub fn grf_spectrum_2d(n: usize, alpha: f64, tau: f64, rng: &mut Rng) -> Result<Vec<Complex64>> {
    if !n.is_power_of_two() || n < 4 {
        return Err(Error::dim(format!("periodic GRF needs N a power of two, got {n}")));
    }
    let amp = |r: usize, c: usize| {
        let k2 = 4.0 * PI * PI * ((wavenumber(r, n).pow(2) + wavenumber(c, n).pow(2)) as f64);
        (k2 + tau * tau).powf(-alpha / 2.0)
    };
    let raw: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(rng.normal(), rng.normal()) / 2f64.sqrt())
        .collect();
    let mut spec = vec![Complex64::new(0.0, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            let (rr, cc) = ((n - r) % n, (n - c) % n);
            let xi = 0.5 * (raw[r * n + c] + raw[rr * n + cc].conj());
            spec[r * n + c] = xi * amp(r, c);
        }
    }
    spec[0] = Complex64::new(0.0, 0.0);
    Ok(spec)
}

/// Periodic Gaussian random field on the `n × n` torus grid.
pub fn grf_periodic_2d(n: usize, alpha: f64, tau: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut spec = grf_spectrum_2d(n, alpha, tau, rng)?;
    Fft2dPlan::new(n, n)?.process(&mut spec, true);
    let scale = (n * n) as f64;
    Ok(spec.iter().map(|z| z.re * scale).collect())
}

/// Boundary data from screened Coulomb sources `e^{−κr}/r` placed in the
/// shell `[−0.7, 1.7]³ \ [−0.2, 1.2]³`, scaled to max-abs 1.
pub fn yukawa_boundary_3d(grid: &Grid, n_src: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if grid.dim != 3 {
        return Err(Error::dim("Yukawa sampler needs a 3-D grid"));
    }
    let mut sources = Vec::with_capacity(n_src);
    while sources.len() < n_src {
        let c = [
            rng.uniform_range(-0.7, 1.7),
            rng.uniform_range(-0.7, 1.7),
            rng.uniform_range(-0.7, 1.7),
        ];
        if c.iter().all(|&v| (-0.2..=1.2).contains(&v)) {
            continue;
        }
        let w = rng.uniform_range(-1.0, 1.0);
        let kappa = rng.uniform_range(0.5, 3.0);
        sources.push((c, w, kappa));
    }
    let mut g: Vec<f64> = grid
        .boundary_nodes()
        .iter()
        .map(|&i| {
            let p = grid.coords(i);
            sources
                .iter()
                .map(|(c, w, kappa)| {
                    let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
                    w * (-kappa * r).exp() / r
                })
                .sum()
        })
        .collect();
    scale_to_unit_max(&mut g);
    Ok(g)
}

/// Modes of the truncated boundary series.
pub const TRACE_MODES: usize = 8;

/// Zero-mean series `Σ_{m≤8} (a_m cos mθ + b_m sin mθ)/m²` around a loop.
pub fn fourier_trace(nb: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if nb < 8 {
        return Err(Error::dim(format!("boundary loop needs at least 8 points, got {nb}")));
    }
    let coeffs: Vec<(f64, f64)> = (0..TRACE_MODES).map(|_| (rng.normal(), rng.normal())).collect();
    Ok(trace_from_coefficients(nb, &coeffs))
}

fn trace_from_coefficients(nb: usize, coeffs: &[(f64, f64)]) -> Vec<f64> {
    (0..nb)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / nb as f64;
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let m = (k + 1) as f64;
                    (a * (m * th).cos() + b * (m * th).sin()) / (m * m)
                })
                .sum()
        })
        .collect()
}

/// `1 + s` for a zero-mean series `s`, with `s` shrunk whenever needed so
/// that the minimum equals `floor`.
pub fn positive_trace(series: &[f64], floor: f64) -> Vec<f64> {
    let lo = series.iter().fold(0.0f64, |m, &v| m.min(v));
    let shrink = if 1.0 + lo < floor { (1.0 - floor) / -lo } else { 1.0 };
    series.iter().map(|v| 1.0 + shrink * v).collect()
}

/// Strictly positive concentration trace with minimum at least `floor`.
pub fn fourier_boundary_positive(nb: usize, floor: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::config(format!("trace floor {floor} must lie in (0, 1)")));
    }
    Ok(positive_trace(&fourier_trace(nb, rng)?, floor))
}
