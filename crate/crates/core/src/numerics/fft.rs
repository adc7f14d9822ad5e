//! Power-of-two complex FFTs with cached plans.
//!
//! Forward transforms are unscaled; inverse transforms carry the `1/N`
//! factor, so `ifft(fft(x)) == x`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

fn check_pow2(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::dim(format!("{what} length {n} is not a power of two")));
    }
    Ok(())
}

/// Reusable 1-D transform of a fixed length.
#[derive(Clone)]
pub struct FftPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        check_pow2(n, "fft")?;
        let mut planner = FftPlanner::new();
        Ok(FftPlan {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Transforms every consecutive length-`n` chunk of `buf` in place.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len() % self.n, 0);
        if inverse {
            self.inverse.process(buf);
            let s = 1.0 / self.n as f64;
            for v in buf.iter_mut() {
                *v *= s;
            }
        } else {
            self.forward.process(buf);
        }
    }
}

/// Reusable 2-D transform of a row-major `[rows, cols]` grid.
#[derive(Clone)]
pub struct Fft2dPlan {
    rows: FftPlan,
    cols: FftPlan,
}

impl Fft2dPlan {
    pub fn new(n_rows: usize, n_cols: usize) -> Result<Self> {
        Ok(Fft2dPlan {
            rows: FftPlan::new(n_cols)?,
            cols: FftPlan::new(n_rows)?,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.cols.n, self.rows.n)
    }

    /// Row transforms, then column transforms, in place.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let (nr, nc) = self.shape();
        debug_assert_eq!(buf.len(), nr * nc);
        self.rows.process(buf, inverse);
        let mut t = transpose(buf, nr, nc);
        self.cols.process(&mut t, inverse);
        let back = transpose(&t, nc, nr);
        buf.copy_from_slice(&back);
    }
}

fn transpose(a: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub fn fft_1d(x: &mut [Complex64], inverse: bool) -> Result<()> {
    FftPlan::new(x.len())?.process(x, inverse);
    Ok(())
}

pub fn fft_2d(x: &mut [Complex64], n_rows: usize, n_cols: usize, inverse: bool) -> Result<()> {
    if x.len() != n_rows * n_cols {
        return Err(Error::dim(format!(
            "buffer of {} values is not {n_rows}x{n_cols}",
            x.len()
        )));
    }
    Fft2dPlan::new(n_rows, n_cols)?.process(x, inverse);
    Ok(())
}

/// Signed wavenumber of bin `j` for length `n` (`n/2` maps to `-n/2`).
#[inline]
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
