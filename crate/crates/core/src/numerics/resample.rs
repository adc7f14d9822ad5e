//! Grid-to-grid resampling.

use num_complex::Complex64;

use super::fft::{wavenumber, FftPlan};
use crate::error::{Error, Result};

/// Bilinear interpolation of a row-major `n_f × n_f` nodal field on `[0,1]²`
/// (nodes at `i/(n_f−1)`) onto the `n_c × n_c` nodal grid.
pub fn bilinear_downsample(field: &[f64], n_f: usize, n_c: usize) -> Result<Vec<f64>> {
    if field.len() != n_f * n_f || n_c < 2 || n_f < n_c {
        return Err(Error::dim(format!(
            "cannot resample {} values as {n_f}x{n_f} to {n_c}x{n_c}",
            field.len()
        )));
    }
    // Fine-grid coordinate of each coarse node, split into cell and weight.
    let locate = |i: usize| -> (usize, f64) {
        if i == n_c - 1 {
            return (n_f - 2, 1.0);
        }
        let s = (i * (n_f - 1)) as f64 / (n_c - 1) as f64;
        let c = (s.floor() as usize).min(n_f - 2);
        (c, s - c as f64)
    };
    let axis: Vec<(usize, f64)> = (0..n_c).map(locate).collect();
    let mut out = Vec::with_capacity(n_c * n_c);
    for &(iy, ty) in &axis {
        for &(ix, tx) in &axis {
            let f00 = field[iy * n_f + ix];
            let f01 = field[iy * n_f + ix + 1];
            let f10 = field[(iy + 1) * n_f + ix];
            let f11 = field[(iy + 1) * n_f + ix + 1];
            out.push((1.0 - ty) * ((1.0 - tx) * f00 + tx * f01) + ty * ((1.0 - tx) * f10 + tx * f11));
        }
    }
    Ok(out)
}

/// Zeroes every Fourier mode with `|m| ≥ n_c/2` of a periodic signal and
/// keeps every `(n_f/n_c)`-th sample.
pub fn spectral_lowpass_downsample(u_fine: &[f64], n_c: usize) -> Result<Vec<f64>> {
    let n_f = u_fine.len();
    if !n_f.is_power_of_two() || !n_c.is_power_of_two() || n_c > n_f {
        return Err(Error::dim(format!("cannot low-pass {n_f} samples to {n_c}")));
    }
    let plan = FftPlan::new(n_f)?;
    let mut spec: Vec<Complex64> = u_fine.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.process(&mut spec, false);
    lowpass_in_place(&mut spec, n_c);
    plan.process(&mut spec, true);
    let stride = n_f / n_c;
    Ok((0..n_c).map(|j| spec[j * stride].re).collect())
}

pub(crate) fn lowpass_in_place(spec: &mut [Complex64], n_c: usize) {
    let n = spec.len();
    let cut = (n_c / 2) as i64;
    for (j, v) in spec.iter_mut().enumerate() {
        if wavenumber(j, n).abs() >= cut {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}
