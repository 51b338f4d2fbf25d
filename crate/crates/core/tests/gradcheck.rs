//! Every differentiable primitive against central finite differences, and
//! the convolution kernels against direct reference loops.

mod support;

use support::*;
use ynetr::tensor::{Tape, Tensor};

#[test]
fn primitives_match_finite_differences() {
    let mut failures = Vec::new();
    for seed in 0..10 {
        for c in primitive_cases(seed) {
            assert!(c.inputs.iter().all(|t| t.numel() <= 64), "{} too large", c.name);
            let err = gradcheck(&c.inputs, c.f.as_ref(), 1e-3, seed);
            if !(err <= 1e-2) {
                failures.push(format!("{} seed {seed}: {err:.3e}", c.name));
            }
        }
    }
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    for seed in 0..5 {
        for (s, p) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
            let e = conv_adjoint_error(seed, s, p);
            assert!(e <= 1e-4, "stride {s} pad {p}: {e:.3e}");
        }
    }
}

#[test]
fn conv3d_matches_direct_loops() {
    let r = &mut rng(11);
    for (cin, cout, dims, k, s, p) in [
        (1, 2, [5, 6, 7], 3, 1, 1),
        (3, 4, [8, 8, 8], 3, 2, 1),
        (2, 3, [4, 5, 6], 2, 2, 0),
        (4, 2, [6, 6, 6], 1, 1, 0),
    ] {
        let x = randn(&[cin, dims[0], dims[1], dims[2]], r);
        let w = randn(&[cout, cin, k, k, k], r);
        let b = randn(&[cout], r);
        let tape = Tape::no_grad();
        let got = tape
            .constant(x.clone())
            .conv3d(&tape.constant(w.clone()), Some(&tape.constant(b.clone())), s, p)
            .unwrap();
        let want = naive_conv3d(&x, &w, Some(&b), s, p);
        assert_eq!(got.shape(), want.shape());
        assert!(got.value().max_abs_diff(&want) < 1e-4);
    }
}

#[test]
fn conv_transpose3d_matches_scatter() {
    let r = &mut rng(12);
    for (cin, cout, dims, k, s, p) in [
        (4, 2, [2, 3, 2], 2, 2, 0),
        (2, 3, [3, 3, 4], 3, 2, 1),
        (1, 1, [4, 4, 4], 3, 1, 1),
    ] {
        let x = randn(&[cin, dims[0], dims[1], dims[2]], r);
        let w = randn(&[cin, cout, k, k, k], r);
        let tape = Tape::no_grad();
        let got = tape
            .constant(x.clone())
            .conv_transpose3d(&tape.constant(w.clone()), None, s, p)
            .unwrap();
        let want = naive_conv_transpose3d(&x, &w, s, p);
        assert_eq!(got.shape(), want.shape());
        assert!(got.value().max_abs_diff(&want) < 1e-4);
    }
}

#[test]
fn large_conv_crosses_chunk_boundaries() {
    // big enough that the lowering buffer is split into several chunks
    let r = &mut rng(13);
    let x = randn(&[16, 24, 24, 24], r);
    let w = randn(&[8, 16, 3, 3, 3], r);
    let tape = Tape::no_grad();
    let got = tape
        .constant(x.clone())
        .conv3d(&tape.constant(w.clone()), None, 1, 1)
        .unwrap();
    let want = naive_conv3d(&x, &w, None, 1, 1);
    assert!(got.value().max_abs_diff(&want) < 1e-3);
}

#[test]
fn matmul_matches_naive_product() {
    let r = &mut rng(14);
    for (m, k, n) in [(1, 1, 1), (3, 7, 2), (17, 33, 9), (64, 64, 64)] {
        let a = randn(&[m, k], r);
        let b = randn(&[k, n], r);
        let tape = Tape::no_grad();
        let got = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
        assert!(got.value().max_abs_diff(&naive_matmul(&a, &b)) < 1e-4);
    }
}

#[test]
fn gelu_forward_matches_formula() {
    let xs = Tensor::new(&[5], vec![-3.0, -1.0, 0.0, 0.5, 2.0]).unwrap();
    let tape = Tape::no_grad();
    let got = tape.constant(xs.clone()).gelu();
    for (&x, &g) in xs.data().iter().zip(got.value().data()) {
        let x = x as f64;
        let want = 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        assert!((g as f64 - want).abs() < 1e-6);
    }
}

#[test]
fn gradients_accumulate_over_shared_paths() {
    // f(x) = sum(x * x + x) → df/dx = 2x + 1
    let x = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let tape = Tape::new();
    let v = tape.leaf(x);
    let loss = v.mul(&v).unwrap().add(&v).unwrap().sum_all();
    let g = tape.backward(&loss).unwrap().get(&v);
    assert_eq!(g.data(), &[3.0, -3.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_and_detached() {
    let tape = Tape::new();
    let v = tape.leaf(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(&v.exp()), Err(ynetr::Error::NonScalarLoss(_))));
    let c = tape.constant(Tensor::scalar(1.0));
    assert!(matches!(tape.backward(&c), Err(ynetr::Error::DetachedGraph)));
}

#[test]
fn blended_loss_gradient_matches_finite_differences() {
    use ynetr::loss::{segmentation_loss, LossConfig, LossKind};
    for seed in 0..10 {
        let r = &mut rng(100 + seed);
        let logits = randn(&[2, 2, 3, 4], r);
        let target = Tensor::new(
            &[2, 3, 4],
            randn(&[24], r).data().iter().map(|&v| f32::from(v > 0.3)).collect(),
        )
        .unwrap();
        for kind in [LossKind::Dice, LossKind::Ce, LossKind::DiceCe] {
            let cfg = LossConfig { kind, ..LossConfig::default() };
            let t = target.clone();
            let f: Box<Build> =
                Box::new(move |v| segmentation_loss(&v[0], &t, &cfg).map(|p| p.total));
            let err = gradcheck(&[logits.clone()], f.as_ref(), 1e-3, seed);
            assert!(err <= 1e-2, "{kind:?} seed {seed}: {err:.3e}");
        }
    }
}
