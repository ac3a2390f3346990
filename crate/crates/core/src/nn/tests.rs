use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand3(dim: (usize, usize, usize), rng: &mut impl Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0))
}

/// Checks input and parameter gradients of `loss = <f(x), probe>` against
/// central differences.
fn check<M: Module>(
    m: &mut M,
    x: &Array3<f64>,
    fwd: &dyn Fn(&M, ArrayView3<f64>) -> Array3<f64>,
    bwd: &dyn Fn(&mut M, ArrayView3<f64>, ArrayView3<f64>) -> Array3<f64>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let y = fwd(m, x.view());
    let probe = rand3(y.dim(), &mut rng);
    let loss = |m: &M, x: &Array3<f64>| (fwd(m, x.view()) * &probe).sum();
    m.zero_grad();
    let dx = bwd(m, x.view(), probe.view());
    let h = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-6);
    for idx in [0, x.len() / 3, x.len() / 2, x.len() - 1] {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[idx] += h;
        xm.as_slice_mut().unwrap()[idx] -= h;
        let fd = (loss(m, &xp) - loss(m, &xm)) / (2.0 * h);
        let an = dx.as_slice().unwrap()[idx];
        assert!(rel(fd, an) < 1e-6, "input {idx}: fd {fd} analytic {an}");
    }
    let mut names = Vec::new();
    m.visit(&mut |n, p| names.push((n.to_string(), p.len())));
    for (name, len) in names {
        for k in [0, len / 2, len - 1] {
            let mut grad = 0.0;
            m.visit(&mut |n, p| {
                if n == name {
                    grad = p.grad.as_slice().unwrap()[k];
                }
            });
            let nudge = |m: &mut M, d: f64| {
                m.visit_mut(&mut |n, p| {
                    if n == name {
                        p.value.as_slice_mut().unwrap()[k] += d;
                    }
                })
            };
            nudge(m, h);
            let lp = loss(m, x);
            nudge(m, -2.0 * h);
            let lm = loss(m, x);
            nudge(m, h);
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel(fd, grad) < 1e-6, "{name}[{k}]: fd {fd} analytic {grad}");
        }
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut l = Linear::new(5, 3, &mut rng);
    let x = rand3((2, 4, 5), &mut rng);
    check(
        &mut l,
        &x,
        &|m, x| {
            let (a, b, c) = x.dim();
            let y = m.forward(x.to_shape((a * b, c)).unwrap().view());
            y.into_shape_with_order((a, b, 3)).unwrap()
        },
        &|m, x, dy| {
            let (a, b, c) = x.dim();
            let x2 = x.to_shape((a * b, c)).unwrap().to_owned();
            let dy2 = dy.to_shape((a * b, 3)).unwrap().to_owned();
            m.backward(x2.view(), dy2.view()).into_shape_with_order((a, b, c)).unwrap()
        },
    );
}

#[test]
fn gated_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut c = GatedConv::new(3, 4, &mut rng);
    let x = rand3((4, 11, 3), &mut rng);
    check(
        &mut c,
        &x,
        &|m, x| m.forward(x).unwrap().0,
        &|m, x, dy| {
            let (_, cache) = m.forward(x).unwrap();
            m.backward(&cache, dy)
        },
    );
}

#[test]
fn gated_trans_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut c = GatedTransConv::new(3, 2, 1, &mut rng);
    let x = rand3((4, 5, 3), &mut rng);
    check(
        &mut c,
        &x,
        &|m, x| m.forward(x).unwrap().0,
        &|m, x, dy| {
            let (_, cache) = m.forward(x).unwrap();
            m.backward(&cache, dy)
        },
    );
}

#[test]
fn lstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for reverse in [false, true] {
        let mut l = Lstm::new(3, 4, &mut rng);
        let x = rand3((2, 6, 3), &mut rng);
        check(
            &mut l,
            &x,
            &|m, x| m.forward(x, reverse).unwrap().0,
            &|m, x, dy| {
                let (_, cache) = m.forward(x, reverse).unwrap();
                m.backward(&cache, dy)
            },
        );
    }
}

#[test]
fn bilstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut l = BiLstm::new(2, 3, &mut rng);
    let x = rand3((3, 5, 2), &mut rng);
    check(
        &mut l,
        &x,
        &|m, x| m.forward(x).unwrap().0,
        &|m, x, dy| {
            let (_, cache) = m.forward(x).unwrap();
            m.backward(&cache, dy)
        },
    );
}

#[test]
fn encoder_bin_arithmetic() {
    let mut f = 161;
    let mut sizes = Vec::new();
    for _ in 0..5 {
        f = conv_out_bins(f);
        sizes.push(f);
    }
    assert_eq!(sizes, [80, 39, 19, 9, 4]);
    assert_eq!(trans_out_bins(4, 0), 9);
    assert_eq!(trans_out_bins(39, 1), 80);
    assert_eq!(trans_out_bins(80, 0), 161);
}

#[test]
fn conv_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = GatedConv::new(2, 3, &mut rng);
    let tc = GatedTransConv::new(2, 3, 0, &mut rng);
    let x = rand3((8, 9, 2), &mut rng);
    let mut x2 = x.clone();
    x2.slice_mut(ndarray::s![5.., .., ..]).mapv_inplace(|v| v + 3.0);
    let (a, _) = c.forward(x.view()).unwrap();
    let (b, _) = c.forward(x2.view()).unwrap();
    assert_eq!(a.slice(ndarray::s![..5, .., ..]), b.slice(ndarray::s![..5, .., ..]));
    assert_ne!(a.slice(ndarray::s![5, .., ..]), b.slice(ndarray::s![5, .., ..]));
    let (a, _) = tc.forward(x.view()).unwrap();
    let (b, _) = tc.forward(x2.view()).unwrap();
    assert_eq!(a.slice(ndarray::s![..5, .., ..]), b.slice(ndarray::s![..5, .., ..]));
}

#[test]
fn closed_gate_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut c = GatedConv::new(2, 3, &mut rng);
    c.w.value.slice_mut(ndarray::s![3.., ..]).fill(0.0);
    c.b.value.slice_mut(ndarray::s![.., 3..]).fill(-1e4);
    let (y, _) = c.forward(rand3((4, 9, 2), &mut rng).view()).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_parameter_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let l = Lstm::new(94, 128, &mut rng);
    assert_eq!(l.param_count(), 4 * (94 + 128 + 1) * 128);
}

#[test]
fn lstm_first_output_ignores_future() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let l = Lstm::new(3, 5, &mut rng);
    let x = rand3((1, 6, 3), &mut rng);
    let mut x2 = x.clone();
    x2.slice_mut(ndarray::s![.., 1.., ..]).fill(0.7);
    let (a, _) = l.forward(x.view(), false).unwrap();
    let (b, _) = l.forward(x2.view(), false).unwrap();
    assert_eq!(a.slice(ndarray::s![.., 0, ..]), b.slice(ndarray::s![.., 0, ..]));
}

#[test]
fn adam_skips_frozen_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut layers = vec![Linear::new(2, 2, &mut rng), Linear::new(2, 2, &mut rng)];
    layers.visit_mut(&mut |_, p| p.grad.fill(1.0));
    let before = layers[0].clone();
    let mut opt = Adam::new(AdamConfig::default());
    opt.update(&mut layers, &|n| !n.starts_with("0."));
    assert_eq!(layers[0], before);
    assert!(layers[1].w.value.iter().zip(before.w.value.iter()).all(|(a, b)| a != b));
}

#[test]
fn adam_clips_gradient_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut a = Linear::new(2, 2, &mut rng);
    let mut b = a.clone();
    a.visit_mut(&mut |_, p| p.grad.fill(100.0));
    b.visit_mut(&mut |_, p| p.grad.fill(1000.0));
    // After clipping both gradients point the same way with the same norm.
    Adam::new(AdamConfig::default()).update(&mut a, &|_| true);
    Adam::new(AdamConfig::default()).update(&mut b, &|_| true);
    for (x, y) in a.w.value.iter().zip(b.w.value.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}
