use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

/// Central-difference derivative of `f` with respect to `x[i]`.
fn fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = 1e-6;
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn matmul_identity_and_hand_check() {
    let mut tape = Tape::new();
    let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let c = tape.matmul(i2, a).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let col = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let c = tape.matmul(r, col).unwrap();
    assert_eq!(tape.value(c).data(), &[11.0]);
    assert_eq!(tape.value(c).shape(), &[1, 1]);
}

#[test]
fn matmul_inner_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
    let b = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a0 = vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
    let b0 = vec![1.5, -0.2, 0.9, 0.4, -1.1, 0.6];
    let f = |av: &[f64]| {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], av));
        let b = tape.constant(t(&[3, 2], &b0));
        let c = tape.matmul(a, b).unwrap();
        tape.value(c).data().iter().sum::<f64>()
    };
    let mut tape = Tape::new();
    let a = tape.leaf(t(&[2, 3], &a0), true);
    let b = tape.constant(t(&[3, 2], &b0));
    let c = tape.matmul(a, b).unwrap();
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    let g = tape.grad(a).unwrap();
    for i in 0..6 {
        let n = fd(&f, &a0, i);
        assert!(
            (g.data()[i] - n).abs() <= 1e-6 * n.abs().max(1.0),
            "{i}: {} vs {n}",
            g.data()[i]
        );
    }
}

#[test]
fn conv_identity_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
    let w = tape.constant(t(&[1, 1, 1], &[1.0]));
    let b = tape.constant(t(&[1], &[0.0]));
    let y = tape.conv(x, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn conv_boundary_sum() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 8], 1.0).unwrap());
    let w = tape.constant(Tensor::full(&[1, 1, 3], 1.0).unwrap());
    let b = tape.constant(t(&[1], &[0.0]));
    let y = tape.conv(x, w, b, 1, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 2.0]);
}

#[test]
fn conv_output_sizes() {
    assert_eq!(conv_output_len(200, 9, 1, 4), Some(200));
    assert_eq!(conv_output_len(200, 9, 2, 4), Some(100));
    assert_eq!(conv_output_len(25, 9, 2, 4), Some(13));
    assert_eq!(conv_output_len(2, 9, 1, 0), None);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2]).unwrap());
    let w = tape.constant(Tensor::zeros(&[1, 1, 5]).unwrap());
    let b = tape.constant(Tensor::zeros(&[1]).unwrap());
    assert!(matches!(tape.conv(x, w, b, 1, 0), Err(Error::Dimension(_))));
}

#[test]
fn conv_centered_identity_is_identity_2d_and_3d() {
    let mut tape = Tape::new();
    let data: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = tape.constant(t(&[2, 5, 4], &data));
    // 2 -> 2 channels, kernel 3x3 with a centered delta on the diagonal pairs.
    let mut wd = vec![0.0; 2 * 2 * 9];
    wd[4] = 1.0;
    wd[(3) * 9 + 4] = 1.0;
    let w = tape.constant(t(&[2, 2, 3, 3], &wd));
    let b = tape.constant(Tensor::zeros(&[2]).unwrap());
    let y = tape.conv(x, w, b, 1, 1).unwrap();
    assert_eq!(tape.value(y).data(), &data[..]);

    let d3: Vec<f64> = (0..3 * 4 * 5).map(|i| i as f64).collect();
    let x = tape.constant(t(&[1, 3, 4, 5], &d3));
    let mut wk = vec![0.0; 27];
    wk[13] = 1.0;
    let w = tape.constant(t(&[1, 1, 3, 3, 3], &wk));
    let b = tape.constant(Tensor::zeros(&[1]).unwrap());
    let y = tape.conv(x, w, b, 1, 1).unwrap();
    assert_eq!(tape.value(y).data(), &d3[..]);
}

#[test]
fn conv_batched_matches_per_sample() {
    let mut tape = Tape::new();
    let data: Vec<f64> = (0..3 * 2 * 10).map(|i| (i as f64 * 0.71).cos()).collect();
    let wd: Vec<f64> = (0..4 * 2 * 3).map(|i| (i as f64 * 0.13).sin()).collect();
    let w = tape.constant(t(&[4, 2, 3], &wd));
    let b = tape.constant(t(&[4], &[0.1, -0.2, 0.3, 0.0]));
    let xb = tape.constant(t(&[3, 2, 10], &data));
    let yb = tape.conv(xb, w, b, 2, 1).unwrap();
    assert_eq!(tape.value(yb).shape(), &[3, 4, 5]);
    for s in 0..3 {
        let xs = tape.constant(t(&[2, 10], &data[s * 20..(s + 1) * 20]));
        let ys = tape.conv(xs, w, b, 2, 1).unwrap();
        assert_eq!(tape.value(ys).data(), &tape.value(yb).data()[s * 20..(s + 1) * 20]);
    }
}

#[test]
fn activations() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1], &[0.0]));
    let y = tape.tanh(x);
    assert_eq!(tape.value(y).data(), &[0.0]);
    assert!("gelu".parse::<Activation>().is_err());

    // Positive-coefficient map used for the smooth Darcy benchmark.
    let raw: Vec<f64> = (-30..=30).map(|i| i as f64).collect();
    let x = tape.constant(Tensor::from_vec(raw).unwrap());
    let y = tape.activation(x, Activation::Softplus);
    assert!(tape.value(y).data().iter().all(|&v| 0.1 + v > 0.1));
}

#[test]
fn tanh_derivative_at_half() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1], &[0.5]), true);
    let y = tape.tanh(x);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap().data()[0];
    let n = fd(&|v: &[f64]| v[0].tanh(), &[0.5], 0);
    assert!((g - n).abs() < 1e-8);
}

#[test]
fn ewise_and_scalar_broadcast() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.5, -2.0]));
    let ones = tape.constant(t(&[2], &[1.0, 1.0]));
    let y = tape.mul(a, ones).unwrap();
    assert_eq!(tape.value(y).data(), &[1.5, -2.0]);
    let alpha = tape.constant(Tensor::scalar(2.0));
    let v = tape.constant(t(&[2], &[1.0, 2.0]));
    let y = tape.mul(v, alpha).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 4.0]);
    let bad = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    assert!(tape.add(v, bad).is_err());
}

#[test]
fn mul_gradient_both_factors() {
    let a0 = [0.4, -1.3, 2.2];
    let b0 = [1.1, 0.5, -0.7];
    let mut tape = Tape::new();
    let a = tape.leaf(t(&[3], &a0), true);
    let b = tape.leaf(t(&[3], &b0), true);
    let c = tape.mul(a, b).unwrap();
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    let fa = |v: &[f64]| v.iter().zip(&b0).map(|(x, y)| x * y).sum::<f64>();
    let fb = |v: &[f64]| v.iter().zip(&a0).map(|(x, y)| x * y).sum::<f64>();
    for i in 0..3 {
        assert!(close(tape.grad(a).unwrap().data()[i], fd(&fa, &a0, i), 1e-6));
        assert!(close(tape.grad(b).unwrap().data()[i], fd(&fb, &b0, i), 1e-6));
    }
}

#[test]
fn scalar_factor_gradient_is_full_reduction() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let alpha = tape.leaf(Tensor::scalar(0.5), true);
    let y = tape.mul(x, alpha).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(alpha).unwrap().data(), &[6.0]);
}

#[test]
fn avg_pool_examples() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::full(&[2, 5, 7], 3.25).unwrap());
    let y = tape.adaptive_avg_pool2d(c, (3, 2)).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 3.25));

    // Row-index field; windows [0,2) and [2,4).
    let rows: Vec<f64> = (0..16).map(|i| (i / 4) as f64).collect();
    let x = tape.constant(t(&[1, 4, 4], &rows));
    let y = tape.adaptive_avg_pool2d(x, (2, 2)).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5, 2.5, 2.5]);

    let y = tape.adaptive_avg_pool2d(x, (4, 4)).unwrap();
    assert_eq!(tape.value(y).data(), &rows[..]);
    assert!(tape.adaptive_avg_pool2d(x, (5, 4)).is_err());
}

#[test]
fn avg_pool_overlapping_windows() {
    // 5 -> 3: windows [0,2), [1,4), [3,5) computed directly.
    let data: Vec<f64> = (0..5).map(|i| (i * i) as f64).collect();
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 5], &data));
    let y = tape.adaptive_avg_pool2d(x, (1, 3)).unwrap();
    let expect = [(0.0 + 1.0) / 2.0, (1.0 + 4.0 + 9.0) / 3.0, (9.0 + 16.0) / 2.0];
    assert_eq!(tape.value(y).data(), &expect);
}

#[test]
fn shape_ops() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let r = tape.reshape(x, &[2, 2]).unwrap();
    let back = tape.reshape(r, &[4]).unwrap();
    assert_eq!(tape.value(back).data(), tape.value(x).data());
    assert!(tape.reshape(x, &[3]).is_err());

    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[1], &[3.0]));
    let c = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);

    let m = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let left = tape.slice(m, 1, 0, 1).unwrap();
    let right = tape.slice(m, 1, 1, 3).unwrap();
    assert_eq!(tape.value(right).data(), &[2.0, 3.0, 5.0, 6.0]);
    let whole = tape.concat(&[left, right], 1).unwrap();
    assert_eq!(tape.value(whole).data(), tape.value(m).data());
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[5], 0.3).unwrap(), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 5]);

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);

    // Accumulation, then reset.
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());

    assert!(matches!(tape.backward(sq), Err(Error::Contract(_))));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    let unused = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).unwrap().data(), &[0.0; 3]);
}

#[test]
fn segment_norms_value_and_zero_subgradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 4], &[3.0, 4.0, 0.0, 0.0]), true);
    let n = tape.segment_norms(x, &[2, 2]).unwrap();
    assert_eq!(tape.value(n).data(), &[5.0, 0.0]);
    let s = tape.sum(n);
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap();
    for (a, b) in g.data().iter().zip([0.6, 0.8, 0.0, 0.0]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn tape_is_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), true);
        let w = tape.leaf(t(&[3, 2], &[1.0, -1.0, 0.5, 0.25, -0.75, 2.0]), true);
        let y = tape.matmul(x, w).unwrap();
        let z = tape.tanh(y);
        tape.value(z).to_vec()
    };
    assert_eq!(run(), run());
}
