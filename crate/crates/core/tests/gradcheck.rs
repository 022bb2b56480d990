//! Analytic gradients against central differences at f64.

use qana_core::arch::{dropout_rng, QanaConfig, QanaModel};
use qana_core::ops::{self, Mode, Padding};
use qana_core::Tensor;
use qana_testkit::fd::{check, weighted_sum};
use qana_testkit::rng;
use rand::Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
// small enough that a probe rarely moves a relu6/maxpool decision
const MODEL_EPS: f64 = 1e-7;

fn rand_t(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(1);
    for (stride, pad) in [
        (1, Padding::Same),
        (2, Padding::Same),
        (1, Padding::Valid),
        (2, Padding::Valid),
    ] {
        let x = rand_t(&[2, 5, 6, 3], &mut r);
        let k = rand_t(&[3, 3, 3, 2], &mut r);
        let b = rand_t(&[2], &mut r);
        let out = ops::conv2d(&x, &k, Some(&b), stride, pad).unwrap();
        let g = rand_t(out.shape(), &mut r);
        let an = ops::conv2d_backward(&x, &k, stride, pad, &g).unwrap();
        let e = check(
            &mut |t| weighted_sum(&ops::conv2d(t, &k, Some(&b), stride, pad).unwrap(), &g),
            &x,
            &an.input,
            EPS,
            400,
            1e-6,
        );
        assert!(e < TOL, "conv input {e}");
        let e = check(
            &mut |t| weighted_sum(&ops::conv2d(&x, t, Some(&b), stride, pad).unwrap(), &g),
            &k,
            &an.kernel,
            EPS,
            400,
            1e-6,
        );
        assert!(e < TOL, "conv kernel {e}");
        let e = check(
            &mut |t| weighted_sum(&ops::conv2d(&x, &k, Some(t), stride, pad).unwrap(), &g),
            &b,
            &an.bias,
            EPS,
            400,
            1e-6,
        );
        assert!(e < TOL, "conv bias {e}");
    }
}

#[test]
fn depthwise_and_separable_gradients() {
    let mut r = rng(2);
    let x = rand_t(&[2, 5, 5, 3], &mut r);
    let k = rand_t(&[3, 3, 3, 1], &mut r);
    for stride in [1, 2] {
        let out = ops::depthwise_conv2d(&x, &k, None, stride, Padding::Same).unwrap();
        let g = rand_t(out.shape(), &mut r);
        let an = ops::depthwise_conv2d_backward(&x, &k, stride, Padding::Same, &g).unwrap();
        let f = |x: &Tensor<f64>, k: &Tensor<f64>| {
            weighted_sum(&ops::depthwise_conv2d(x, k, None, stride, Padding::Same).unwrap(), &g)
        };
        assert!(check(&mut |t| f(t, &k), &x, &an.input, EPS, 400, 1e-6) < TOL);
        assert!(check(&mut |t| f(&x, t), &k, &an.kernel, EPS, 400, 1e-6) < TOL);
    }
    let pk = rand_t(&[1, 1, 3, 4], &mut r);
    let b = rand_t(&[4], &mut r);
    let out = ops::separable_conv2d(&x, &k, &pk, Some(&b)).unwrap();
    let g = rand_t(out.shape(), &mut r);
    let an = ops::separable_conv2d_backward(&x, &k, &pk, &g).unwrap();
    let f = |x: &Tensor<f64>, k: &Tensor<f64>, p: &Tensor<f64>, b: &Tensor<f64>| {
        weighted_sum(&ops::separable_conv2d(x, k, p, Some(b)).unwrap(), &g)
    };
    assert!(check(&mut |t| f(t, &k, &pk, &b), &x, &an.input, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, t, &pk, &b), &k, &an.depth_kernel, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, &k, t, &b), &pk, &an.point_kernel, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, &k, &pk, t), &b, &an.bias, EPS, 400, 1e-6) < TOL);
}

#[test]
fn batch_norm_gradients_both_modes() {
    let mut r = rng(3);
    let x = Tensor::<f64>::uniform(&[3, 2, 2, 4], -2.0, 2.0, &mut r);
    let gm = Tensor::<f64>::uniform(&[4], 0.5, 1.5, &mut r);
    let bt = rand_t(&[4], &mut r);
    let g = rand_t(x.shape(), &mut r);
    let (_, cache, _) = ops::batch_norm_train(&x, &gm, &bt, 1e-3).unwrap();
    let an = ops::batch_norm_backward(&cache, &g).unwrap();
    let f = |x: &Tensor<f64>, gm: &Tensor<f64>, bt: &Tensor<f64>| {
        weighted_sum(&ops::batch_norm_train(x, gm, bt, 1e-3).unwrap().0, &g)
    };
    assert!(check(&mut |t| f(t, &gm, &bt), &x, &an.input, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, t, &bt), &gm, &an.gamma, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, &gm, t), &bt, &an.beta, EPS, 400, 1e-6) < TOL);

    let rm = rand_t(&[4], &mut r);
    let rv = Tensor::<f64>::uniform(&[4], 0.5, 2.0, &mut r);
    let (_, cache) = ops::batch_norm_infer_cached(&x, &gm, &bt, &rm, &rv, 1e-3).unwrap();
    let an = ops::batch_norm_backward(&cache, &g).unwrap();
    let f = |x: &Tensor<f64>, gm: &Tensor<f64>| {
        weighted_sum(&ops::batch_norm_infer(x, gm, &bt, &rm, &rv, 1e-3).unwrap(), &g)
    };
    assert!(check(&mut |t| f(t, &gm), &x, &an.input, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, t), &gm, &an.gamma, EPS, 400, 1e-6) < TOL);
}

#[test]
fn dense_and_mean_gradients() {
    let mut r = rng(4);
    let x = rand_t(&[3, 6], &mut r);
    let w = rand_t(&[4, 6], &mut r);
    let b = rand_t(&[4], &mut r);
    let g = rand_t(&[3, 4], &mut r);
    let an = ops::dense_backward(&x, &w, &g).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| weighted_sum(&ops::dense(x, w, Some(b)).unwrap(), &g);
    assert!(check(&mut |t| f(t, &w, &b), &x, &an.input, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, t, &b), &w, &an.weight, EPS, 400, 1e-6) < TOL);
    assert!(check(&mut |t| f(&x, &w, t), &b, &an.bias, EPS, 400, 1e-6) < TOL);

    let f4 = rand_t(&[2, 3, 3, 4], &mut r);
    let gm = rand_t(&[2, 4], &mut r);
    let an = ops::spatial_mean_backward(f4.shape(), &gm).unwrap();
    let e = check(
        &mut |t| weighted_sum(&ops::spatial_mean(t).unwrap(), &gm),
        &f4,
        &an,
        EPS,
        400,
        1e-6,
    );
    assert!(e < TOL);
}

/// Inputs kept at least 0.05 away from every clamp corner.
fn away_from(r: &mut impl Rng, shape: &[usize], lo: f64, hi: f64, corners: &[f64]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = r.gen_range(lo..hi);
        if corners.iter().all(|c| (v - c).abs() > 0.05) {
            break v;
        }
    })
}

#[test]
fn activation_and_pool_gradients() {
    let mut r = rng(5);
    let shape = [2, 4, 4, 3];
    let g = rand_t(&shape, &mut r);

    let x = away_from(&mut r, &shape, -2.0, 8.0, &[0.0, 6.0]);
    let an = ops::relu6_backward(&x, &g).unwrap();
    assert!(check(&mut |t| weighted_sum(&ops::relu6(t), &g), &x, &an, EPS, 400, 1e-6) < TOL);

    let x = away_from(&mut r, &shape, -0.5, 1.5, &[0.0, 1.0]);
    let an = ops::bounded_unit_backward(&x, &g).unwrap();
    assert!(
        check(
            &mut |t| weighted_sum(&ops::bounded_unit(t), &g),
            &x,
            &an,
            EPS,
            400,
            1e-6
        ) < TOL
    );

    let x = away_from(&mut r, &shape, -1.0, 1.0, &[0.0]);
    let an = ops::relu_backward(&x, &g).unwrap();
    assert!(check(&mut |t| weighted_sum(&ops::relu(t), &g), &x, &an, EPS, 400, 1e-6) < TOL);

    let x = Tensor::<f64>::uniform(&shape, -6.0, 6.0, &mut r);
    let an = ops::sigmoid_backward(&ops::sigmoid(&x), &g).unwrap();
    assert!(check(&mut |t| weighted_sum(&ops::sigmoid(t), &g), &x, &an, EPS, 400, 1e-6) < TOL);

    let x = rand_t(&shape, &mut r);
    let (out, arg) = ops::maxpool2d(&x, 2).unwrap();
    let gp = rand_t(out.shape(), &mut r);
    let an = ops::maxpool2d_backward(&shape, &arg, &gp).unwrap();
    let e = check(
        &mut |t| weighted_sum(&ops::maxpool2d(t, 2).unwrap().0, &gp),
        &x,
        &an,
        EPS,
        400,
        1e-6,
    );
    assert!(e < TOL);
}

#[test]
fn dropout_gradient_replays_mask() {
    let mut r = rng(6);
    let x = rand_t(&[1, 4, 4, 4], &mut r);
    let g = rand_t(x.shape(), &mut r);
    let (_, mask) = ops::dropout(&x, 0.3, Mode::Train, &mut rng(77)).unwrap();
    let an = ops::dropout_backward(mask.as_deref(), &g);
    let e = check(
        &mut |t| weighted_sum(&ops::dropout(t, 0.3, Mode::Train, &mut rng(77)).unwrap().0, &g),
        &x,
        &an,
        EPS,
        400,
        1e-6,
    );
    assert!(e < TOL);
}

fn model_loss(m: &QanaModel<f64>, x: &Tensor<f64>, w: &Tensor<f64>, mode: Mode) -> f64 {
    let mut dr = dropout_rng(99, 0);
    weighted_sum(&m.forward(x, mode, Some(&mut dr)).unwrap(), w)
}

fn full_model_check(mode: Mode) {
    let cfg = QanaConfig::compact();
    let mut model = QanaModel::<f64>::new(cfg, 13).unwrap();
    if mode == Mode::Infer {
        // non-trivial running statistics
        let mut r = rng(14);
        for (name, p) in model.params.clone().iter() {
            if name.ends_with(".mean") {
                let t = Tensor::uniform(p.value.shape(), -0.1, 0.1, &mut r);
                model.params.set(name, t).unwrap();
            } else if name.ends_with(".var") {
                let t = Tensor::uniform(p.value.shape(), 0.5, 1.5, &mut r);
                model.params.set(name, t).unwrap();
            }
        }
    }
    let mut r = rng(15);
    let x = Tensor::<f64>::uniform(&[2, 64, 64, 3], 0.0, 1.0, &mut r);
    let mut dr = dropout_rng(99, 0);
    let (y, trace) = model.forward_trace(&x, mode, Some(&mut dr)).unwrap();
    let w = rand_t(y.shape(), &mut r);
    let grads = model.backward(&trace, &w).unwrap();
    let mut worst = 0.0f64;
    for (name, p) in model.params.iter() {
        if !p.trainable {
            continue;
        }
        let an = grads.get(name).unwrap_or_else(|| panic!("no gradient for {name}"));
        let mut m = model.clone();
        let e = check(
            &mut |t| {
                m.params.set(name, t.clone()).unwrap();
                model_loss(&m, &x, &w, mode)
            },
            &p.value,
            an,
            MODEL_EPS,
            6,
            1e-5,
        );
        assert!(e < 1e-3, "{name}: rel err {e}");
        worst = worst.max(e);
    }
    assert!(worst < 1e-3);
}

#[test]
fn full_model_gradient_train_mode() {
    full_model_check(Mode::Train);
}

#[test]
fn full_model_gradient_infer_mode() {
    full_model_check(Mode::Infer);
}
