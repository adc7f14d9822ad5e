//! Input builders shared by the kernel benchmarks.

use opbench::models::{lnfno_trace_to_grid, Ablation, Model, Preset, Widths};
use opbench::rng::Rng;
use opbench::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("shape matches data")
}

/// Laplace-style trace-to-grid model on an `n × n` grid, widths divided by `div`.
pub fn laplace_model(n: usize, div: usize) -> Model {
    let spec = lnfno_trace_to_grid(4 * (n - 1), &[n, n], Preset::A, Ablation::Full, Widths::scaled(div));
    Model::build(&spec, 0).expect("valid model spec")
}
