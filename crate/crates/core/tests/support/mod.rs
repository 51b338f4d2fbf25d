//! Reference implementations used as test oracles. Everything here is
//! written the slow, obvious way on purpose and shares no code with the
//! library kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ynetr::tensor::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Random values with magnitude at least `gap`, so kinks and poles are
/// not crossed by a finite-difference probe.
pub fn away_from_zero(shape: &[usize], gap: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(gap..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 0.3, 2.0, rng)
}

pub type Build = dyn for<'t> Fn(&[Var<'t>]) -> ynetr::Result<Var<'t>>;

/// Central-difference gradient check of `f` at `inputs`, through the
/// scalar `sum(f(x) * w)` with a fixed random `w`. Returns the worst
/// norm-relative error ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
/// over all inputs.
pub fn gradcheck(inputs: &[Tensor], f: &Build, h: f64, seed: u64) -> f64 {
    let probe_shape = {
        let tape = Tape::no_grad();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&vars).unwrap().shape().to_vec()
    };
    let w = Tensor::randn(&probe_shape, 1.0, &mut rng(seed ^ 0xABCD));

    let scalar = |xs: &[Tensor]| -> f64 {
        let tape = Tape::no_grad();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&vars).unwrap();
        out.value()
            .data()
            .iter()
            .zip(w.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&vars).unwrap();
    let loss = out.mul(&tape.constant(w.clone())).unwrap().sum_all();
    let grads = tape.backward(&loss).unwrap();

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(var);
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut nu2 = 0.0;
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[i].data_mut()[k] += h as f32;
            minus[i].data_mut()[k] -= h as f32;
            let numeric = (scalar(&plus) - scalar(&minus)) / (2.0 * h);
            let a = analytic.data()[k] as f64;
            diff2 += (a - numeric).powi(2);
            an2 += a * a;
            nu2 += numeric * numeric;
        }
        let denom = an2.sqrt().max(nu2.sqrt()).max(1e-6);
        worst = worst.max(diff2.sqrt() / denom);
    }
    worst
}

/// `c[i][j] = Σ_k a[i][k] b[k][j]` with f64 accumulation.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut c = vec![0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0f64;
            for t in 0..k {
                s += a.data()[i * k + t] as f64 * b.data()[t * n + j] as f64;
            }
            c[i * n + j] = s as f32;
        }
    }
    Tensor::new(&[m, n], c).unwrap()
}

/// Direct 3-D cross-correlation: input (Cin, D0, D1, D2), weight
/// (Cout, Cin, k, k, k), zero padding.
pub fn naive_conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (cin, d) = (s[0], [s[1], s[2], s[3]]);
    let (cout, k) = (w.shape()[0], [w.shape()[2], w.shape()[3], w.shape()[4]]);
    let o: Vec<usize> = (0..3).map(|a| (d[a] + 2 * pad - k[a]) / stride + 1).collect();
    let mut out = vec![0f32; cout * o[0] * o[1] * o[2]];
    let xi = |c: usize, p: [usize; 3]| x.data()[((c * d[0] + p[0]) * d[1] + p[1]) * d[2] + p[2]];
    for co in 0..cout {
        for i0 in 0..o[0] {
            for i1 in 0..o[1] {
                for i2 in 0..o[2] {
                    let mut acc = b.map_or(0.0, |b| b.data()[co] as f64);
                    for ci in 0..cin {
                        for a in 0..k[0] {
                            for bb in 0..k[1] {
                                for c in 0..k[2] {
                                    let p = [
                                        (i0 * stride + a) as isize - pad as isize,
                                        (i1 * stride + bb) as isize - pad as isize,
                                        (i2 * stride + c) as isize - pad as isize,
                                    ];
                                    if (0..3).any(|q| p[q] < 0 || p[q] >= d[q] as isize) {
                                        continue;
                                    }
                                    let wv = w.data()
                                        [(((co * cin + ci) * k[0] + a) * k[1] + bb) * k[2] + c];
                                    let pu = [p[0] as usize, p[1] as usize, p[2] as usize];
                                    acc += wv as f64 * xi(ci, pu) as f64;
                                }
                            }
                        }
                    }
                    out[((co * o[0] + i0) * o[1] + i1) * o[2] + i2] = acc as f32;
                }
            }
        }
    }
    Tensor::new(&[cout, o[0], o[1], o[2]], out).unwrap()
}

/// Transposed convolution by scattering every input voxel through the
/// kernel: weight (Cin, Cout, k, k, k).
pub fn naive_conv_transpose3d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (cin, d) = (s[0], [s[1], s[2], s[3]]);
    let (cout, k) = (w.shape()[1], [w.shape()[2], w.shape()[3], w.shape()[4]]);
    let o: Vec<usize> = (0..3).map(|a| (d[a] - 1) * stride + k[a] - 2 * pad).collect();
    let mut out = vec![0f64; cout * o[0] * o[1] * o[2]];
    for ci in 0..cin {
        for i0 in 0..d[0] {
            for i1 in 0..d[1] {
                for i2 in 0..d[2] {
                    let xv = x.data()[((ci * d[0] + i0) * d[1] + i1) * d[2] + i2] as f64;
                    for co in 0..cout {
                        for a in 0..k[0] {
                            for b in 0..k[1] {
                                for c in 0..k[2] {
                                    let p = [
                                        (i0 * stride + a) as isize - pad as isize,
                                        (i1 * stride + b) as isize - pad as isize,
                                        (i2 * stride + c) as isize - pad as isize,
                                    ];
                                    if (0..3).any(|q| p[q] < 0 || p[q] >= o[q] as isize) {
                                        continue;
                                    }
                                    let wv = w.data()
                                        [(((ci * cout + co) * k[0] + a) * k[1] + b) * k[2] + c];
                                    let idx = ((co * o[0] + p[0] as usize) * o[1] + p[1] as usize)
                                        * o[2]
                                        + p[2] as usize;
                                    out[idx] += wv as f64 * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[cout, o[0], o[1], o[2]], out.into_iter().map(|v| v as f32).collect()).unwrap()
}

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: Box<Build>,
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: Box<Build>) -> Case {
    Case { name, inputs, f }
}

/// One instance of every differentiable primitive, all operands at most
/// 64 elements, drawn from `seed`.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let r = &mut rng(seed);
    vec![
        case("add", vec![randn(&[3, 4], r), randn(&[3, 4], r)], Box::new(|v| v[0].add(&v[1]))),
        case("add_broadcast", vec![randn(&[2, 3, 4], r), randn(&[4], r)], Box::new(|v| v[0].add(&v[1]))),
        case("sub", vec![randn(&[5, 2], r), randn(&[2], r)], Box::new(|v| v[0].sub(&v[1]))),
        case("mul", vec![randn(&[3, 4], r), randn(&[3, 4], r)], Box::new(|v| v[0].mul(&v[1]))),
        case("mul_broadcast", vec![randn(&[4, 6], r), randn(&[6], r)], Box::new(|v| v[0].mul(&v[1]))),
        case("div", vec![randn(&[3, 5], r), away_from_zero(&[3, 5], 0.4, r)], Box::new(|v| v[0].div(&v[1]))),
        case("div_broadcast", vec![randn(&[2, 5], r), away_from_zero(&[5], 0.4, r)], Box::new(|v| v[0].div(&v[1]))),
        case("scale", vec![randn(&[7], r)], Box::new(|v| Ok(v[0].scale(-2.5)))),
        case("add_scalar", vec![randn(&[7], r)], Box::new(|v| Ok(v[0].add_scalar(0.7)))),
        case("neg", vec![randn(&[7], r)], Box::new(|v| Ok(v[0].neg()))),
        case("exp", vec![randn(&[3, 3], r)], Box::new(|v| Ok(v[0].exp()))),
        case("ln", vec![positive(&[3, 3], r)], Box::new(|v| Ok(v[0].ln()))),
        case("relu", vec![away_from_zero(&[4, 4], 0.05, r)], Box::new(|v| Ok(v[0].relu()))),
        case("gelu", vec![randn(&[4, 4], r)], Box::new(|v| Ok(v[0].gelu()))),
        case("reshape", vec![randn(&[2, 6], r)], Box::new(|v| v[0].reshape(&[3, 4]))),
        case("permute", vec![randn(&[2, 3, 4], r)], Box::new(|v| v[0].permute(&[2, 0, 1]))),
        case("slice", vec![randn(&[4, 5], r)], Box::new(|v| v[0].slice(1, 1, 4))),
        case(
            "concat",
            vec![randn(&[2, 3], r), randn(&[2, 2], r)],
            Box::new(|v| Var::concat(&[v[0].clone(), v[1].clone()], 1)),
        ),
        case("sum_all", vec![randn(&[3, 4], r)], Box::new(|v| Ok(v[0].sum_all()))),
        case("mean_all", vec![randn(&[3, 4], r)], Box::new(|v| Ok(v[0].mean_all()))),
        case("sum_axis", vec![randn(&[2, 3, 4], r)], Box::new(|v| v[0].sum_axis(1))),
        case("mean_axis", vec![randn(&[2, 3, 4], r)], Box::new(|v| v[0].mean_axis(2))),
        case("softmax", vec![randn(&[3, 5], r)], Box::new(|v| v[0].softmax(1))),
        case("softmax_axis0", vec![randn(&[2, 4, 3], r)], Box::new(|v| v[0].softmax(0))),
        case("log_softmax", vec![randn(&[4, 3], r)], Box::new(|v| v[0].log_softmax(1))),
        case(
            "layer_norm",
            vec![randn(&[3, 8], r), randn(&[8], r), randn(&[8], r)],
            Box::new(|v| v[0].layer_norm(Some(&v[1]), Some(&v[2]), 1e-5)),
        ),
        case("matmul", vec![randn(&[3, 4], r), randn(&[4, 5], r)], Box::new(|v| v[0].matmul(&v[1]))),
        case(
            "matmul_batched",
            vec![randn(&[2, 3, 4], r), randn(&[2, 4, 2], r)],
            Box::new(|v| v[0].matmul(&v[1])),
        ),
        case(
            "conv3d",
            vec![randn(&[2, 3, 3, 3], r), randn(&[2, 2, 2, 2, 2], r), randn(&[2], r)],
            Box::new(|v| v[0].conv3d(&v[1], Some(&v[2]), 1, 1)),
        ),
        case(
            "conv3d_strided",
            vec![randn(&[1, 4, 4, 4], r), randn(&[2, 1, 3, 3, 3], r), randn(&[2], r)],
            Box::new(|v| v[0].conv3d(&v[1], Some(&v[2]), 2, 1)),
        ),
        case(
            "conv_transpose3d",
            vec![randn(&[2, 2, 2, 2], r), randn(&[2, 3, 2, 2, 2], r), randn(&[3], r)],
            Box::new(|v| v[0].conv_transpose3d(&v[1], Some(&v[2]), 2, 0)),
        ),
        case(
            "conv_transpose3d_padded",
            vec![randn(&[1, 3, 3, 3], r), randn(&[1, 2, 3, 3, 3], r), randn(&[2], r)],
            Box::new(|v| v[0].conv_transpose3d(&v[1], Some(&v[2]), 2, 1)),
        ),
    ]
}

/// Relative violation of ⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩ for a shared kernel.
/// Odd spatial dims keep both shapes exact for k = 3, stride ≤ 2.
pub fn conv_adjoint_error(seed: u64, stride: usize, pad: usize) -> f64 {
    let r = &mut rng(seed);
    let x = randn(&[2, 5, 5, 7], r);
    let w = randn(&[3, 2, 3, 3, 3], r);
    let tape = Tape::no_grad();
    let ax = tape
        .constant(x.clone())
        .conv3d(&tape.constant(w.clone()), None, stride, pad)
        .unwrap();
    let y = randn(ax.shape(), r);
    // as a transposed kernel the same buffer reads (Cin, Cout) = (3, 2)
    let aty = tape
        .constant(y.clone())
        .conv_transpose3d(&tape.constant(w), None, stride, pad)
        .unwrap();
    assert_eq!(aty.shape(), x.shape());
    let lhs = ax.value().dot(&y);
    let rhs = aty.value().dot(&x);
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}
