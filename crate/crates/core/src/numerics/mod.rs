//! FFTs, sparse linear algebra and resampling shared by the solvers.

pub mod fft;
pub mod resample;
pub mod sparse;

pub use fft::{fft_1d, fft_2d, Fft2dPlan, FftPlan};
pub use num_complex::Complex64;
pub use resample::{bilinear_downsample, spectral_lowpass_downsample};
pub use sparse::{cg, cg_solve, CgOptions, CgOutcome, CsrMatrix};
