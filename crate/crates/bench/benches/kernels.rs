use criterion::{black_box, criterion_group, criterion_main, Criterion};
use opbench::autodiff::Tape;
use opbench::numerics::{cg_solve, fft_2d, Complex64};
use opbench::solvers::{assemble_laplacian, Grid};
use opbench_bench::{laplace_model, random_tensor};

fn matmul(c: &mut Criterion) {
    let (a, b) = (random_tensor(&[64, 256], 1), random_tensor(&[256, 256], 2));
    c.bench_function("matmul_64x256x256", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
            black_box(tape.matmul(x, y).unwrap());
        })
    });
}

fn conv2d(c: &mut Criterion) {
    let x = random_tensor(&[8, 16, 51, 51], 3);
    let w = random_tensor(&[16, 16, 3, 3], 4);
    let bias = random_tensor(&[16], 5);
    c.bench_function("conv2d_8x16x51x51_k3", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (
                tape.constant(x.clone()),
                tape.constant(w.clone()),
                tape.constant(bias.clone()),
            );
            black_box(tape.conv(xv, wv, bv, 1, 1).unwrap());
        })
    });
}

fn fft(c: &mut Criterion) {
    let n = 128;
    let data: Vec<Complex64> = random_tensor(&[n * n], 6)
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    c.bench_function("fft_2d_128", |bench| {
        bench.iter(|| {
            let mut buf = data.clone();
            fft_2d(&mut buf, n, n, false).unwrap();
            black_box(buf);
        })
    });
}

fn cg(c: &mut Criterion) {
    let lap = assemble_laplacian(&Grid::square(65).unwrap()).unwrap();
    let rhs = vec![1.0; lap.interior.len()];
    c.bench_function("cg_laplacian_65", |bench| {
        bench.iter(|| black_box(cg_solve(&lap.matrix, &rhs, 1e-10, 10_000, true).unwrap()))
    });
}

fn forward(c: &mut Criterion) {
    let n = 26;
    let model = laplace_model(n, 4);
    let g = random_tensor(&[20, 4 * (n - 1)], 7);
    c.bench_function("lnfno_forward_backward_26", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let vars: Vec<_> = model.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect();
            let x = tape.constant(g.clone());
            let y = model.forward(&mut tape, &vars, &[("g", x)], None).unwrap();
            let loss = tape.sum(y);
            tape.backward(loss).unwrap();
            black_box(tape.grad(vars[0]));
        })
    });
}

criterion_group!(benches, matmul, conv2d, fft, cg, forward);
criterion_main!(benches);
