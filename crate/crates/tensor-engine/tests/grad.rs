use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_engine::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect()
}

#[test]
fn quadratic_is_exact() {
    let x = Tensor::parameter(&[2], vec![1.0f64, 2.0]).unwrap();
    let mut f = |t: &Tensor<f64>| sum_all(&mul(t, t)?);
    let err = grad_check(&mut f, &x, 1e-5).unwrap();
    assert!(err < 1e-8, "rel err {err}");
    // Analytic gradient for sum(x^2) is 2x.
    let y = sum_all(&mul(&x, &x).unwrap()).unwrap();
    x.zero_grad();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn conv_layers_pass_gradcheck() {
    for (k, s, p, d, seed) in [
        (3usize, 1usize, 1usize, 1usize, 0u64),
        (3, 3, 1, 1, 1),
        (3, 3, 2, 2, 2),
        (3, 3, 3, 3, 3),
        (1, 1, 0, 1, 4),
    ] {
        let mut r = rng(seed);
        let params = ConvParams::<f64>::init(k, s, p, d, 2, 3, &mut r).unwrap();
        let x = Tensor::parameter(&[1, 2, 8, 8], rand_vec(&mut r, 128)).unwrap();

        let mut fx = |t: &Tensor<f64>| sum_all(&conv2d(t, &params)?);
        let err = grad_check(&mut fx, &x, 1e-6).unwrap();
        assert!(err < 1e-7, "input grad k={k} s={s} p={p} d={d}: {err}");

        let mut fw = |_: &Tensor<f64>| sum_all(&mul(&conv2d(&x, &params)?, &conv2d(&x, &params)?)?);
        let err = grad_check(&mut fw, &params.weight, 1e-6).unwrap();
        assert!(err < 1e-6, "weight grad k={k}: {err}");
        let err = grad_check(&mut fw, &params.bias, 1e-6).unwrap();
        assert!(err < 1e-6, "bias grad k={k}: {err}");
    }
}

#[test]
fn batchnorm_passes_gradcheck_in_both_modes() {
    let mut r = rng(10);
    for training in [true, false] {
        let gamma = Tensor::parameter(&[3], rand_vec(&mut r, 3)).unwrap();
        let beta = Tensor::parameter(&[3], rand_vec(&mut r, 3)).unwrap();
        let running_mean = rand_vec(&mut r, 3);
        let running_var = vec![0.7, 1.3, 0.9];
        let x = Tensor::parameter(&[2, 3, 4, 4], rand_vec(&mut r, 96)).unwrap();

        // Square the output so the loss is sensitive to the scale path.
        // A fresh state per call reuses the same parameter handles, so
        // the probes below see gradients while running stats are free
        // to drift harmlessly.
        let mut f = |_: &Tensor<f64>| {
            let mut st = BatchNormState::from_parts(
                gamma.clone(),
                beta.clone(),
                running_mean.clone(),
                running_var.clone(),
                1e-5,
                0.1,
            )?;
            let y = batchnorm2d(&x, &mut st, training)?;
            sum_all(&mul(&y, &y)?)
        };
        for (probe, name) in [(&x, "input"), (&gamma, "gamma"), (&beta, "beta")] {
            let err = grad_check(&mut f, probe, 1e-6).unwrap();
            assert!(err < 1e-6, "bn {name} grad training={training}: {err}");
        }
    }
}

#[test]
fn pooling_and_activations_pass_gradcheck() {
    let mut r = rng(20);
    let x = Tensor::parameter(&[1, 2, 6, 6], rand_vec(&mut r, 72)).unwrap();

    let mut f = |t: &Tensor<f64>| sum_all(&mul(&relu(t)?, &relu(t)?)?);
    assert!(grad_check(&mut f, &x, 1e-6).unwrap() < 1e-6);

    let mut f = |t: &Tensor<f64>| {
        let y = maxpool2d(t, 2, 2)?;
        sum_all(&mul(&y, &y)?)
    };
    assert!(grad_check(&mut f, &x, 1e-6).unwrap() < 1e-6);

    let mut f = |t: &Tensor<f64>| {
        let y = adaptive_avgpool2d(t, 5)?;
        sum_all(&mul(&y, &y)?)
    };
    assert!(grad_check(&mut f, &x, 1e-6).unwrap() < 1e-6);

    let mut f = |t: &Tensor<f64>| sum_all(&softplus(t)?);
    assert!(grad_check(&mut f, &x, 1e-6).unwrap() < 1e-6);

    let mut f = |t: &Tensor<f64>| {
        let y = bilinear_upsample2d(t, 13, 9)?;
        sum_all(&mul(&y, &y)?)
    };
    assert!(grad_check(&mut f, &x, 1e-6).unwrap() < 1e-6);
}

#[test]
fn maxpool_gradcheck_at_strict_max() {
    // Distinct values guarantee a strict max in every window.
    let data: Vec<f64> = (0..36).map(|i| (i as f64 * 0.618).sin() * 2.0).collect();
    let x = Tensor::parameter(&[1, 1, 6, 6], data).unwrap();
    let mut f = |t: &Tensor<f64>| {
        let y = maxpool2d(t, 2, 2)?;
        sum_all(&mul(&y, &y)?)
    };
    let err = grad_check(&mut f, &x, 1e-6).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn attention_ops_pass_gradcheck() {
    let mut r = rng(30);
    let x = Tensor::parameter(&[2, 3, 4, 4], rand_vec(&mut r, 96)).unwrap();
    let weights = rand_vec(&mut r, 3 * 16);

    let mut f = |t: &Tensor<f64>| {
        let m = mul_const_sum_channels(t, &weights)?;
        let m = relu(&m)?;
        let m = normalize_spatial_max(&m, 1e-8)?;
        let m = bilinear_upsample2d(&m, 4, 4)?;
        let y = mul_channel_broadcast(t, &m)?;
        sum_all(&mul(&y, &y)?)
    };
    let err = grad_check(&mut f, &x, 1e-6).unwrap();
    assert!(err < 1e-5, "attention path rel err {err}");
}

#[test]
fn softmax_loss_chain_passes_gradcheck() {
    let mut r = rng(40);
    let logits = Tensor::parameter(&[3, 4], rand_vec(&mut r, 12)).unwrap();
    let y = one_hot::<f64>(&[0, 2, 3], 4).unwrap();
    for kind in [LossKind::ClasswiseBinary, LossKind::SoftmaxCe] {
        let mut f = |t: &Tensor<f64>| {
            let p = softmax_rows(t)?;
            match kind {
                LossKind::ClasswiseBinary => loss_eq9(&p, &y),
                LossKind::SoftmaxCe => loss_softmax_ce(&p, &y),
            }
        };
        let err = grad_check(&mut f, &logits, 1e-6).unwrap();
        assert!(err < 1e-6, "{kind:?} rel err {err}");
    }
}

#[test]
fn dropout_with_fixed_mask_passes_gradcheck() {
    let mut r = rng(50);
    let x = Tensor::parameter(&[1, 2, 4, 4], rand_vec(&mut r, 32)).unwrap();
    let mut f = |t: &Tensor<f64>| {
        // Fresh stream with a fixed seed per evaluation fixes the mask.
        let mut mask_rng = rng(1234);
        let y = dropout(t, 0.5, true, &mut mask_rng)?;
        sum_all(&mul(&y, &y)?)
    };
    let err = grad_check(&mut f, &x, 1e-6).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn linear_and_concat_pass_gradcheck() {
    let mut r = rng(60);
    let x = Tensor::parameter(&[2, 5], rand_vec(&mut r, 10)).unwrap();
    let w = Tensor::parameter(&[3, 5], rand_vec(&mut r, 15)).unwrap();
    let b = Tensor::parameter(&[3], rand_vec(&mut r, 3)).unwrap();
    let mut f = |_: &Tensor<f64>| {
        let y = linear(&x, &w, &b)?;
        sum_all(&mul(&y, &y)?)
    };
    for probe in [&x, &w, &b] {
        let err = grad_check(&mut f, probe, 1e-6).unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    let a = Tensor::parameter(&[1, 2, 3, 3], rand_vec(&mut r, 18)).unwrap();
    let c = Tensor::parameter(&[1, 1, 3, 3], rand_vec(&mut r, 9)).unwrap();
    let mut f = |_: &Tensor<f64>| {
        let y = concat_channels(&[a.clone(), c.clone()])?;
        sum_all(&mul(&y, &y)?)
    };
    assert!(grad_check(&mut f, &a, 1e-6).unwrap() < 1e-6);
    assert!(grad_check(&mut f, &c, 1e-6).unwrap() < 1e-6);
}

#[test]
fn mixing_ops_pass_gradcheck() {
    let mut r = rng(80);
    let theta = Tensor::parameter(&[3], rand_vec(&mut r, 3)).unwrap();
    let x = Tensor::parameter(&[2, 2], rand_vec(&mut r, 4)).unwrap();
    // sum over i of (softplus(theta)_i / sum softplus(theta)) * (x*x) scaled by i+1
    let mut f = |_: &Tensor<f64>| {
        let alpha = softplus(&theta)?;
        let total = sum_all(&alpha)?;
        let mut acc: Option<Tensor<f64>> = None;
        for i in 0..3 {
            let coef = div_scalar_broadcast(&select_index(&alpha, i)?, &total)?;
            let branch = scale(&mul(&x, &x)?, (i + 1) as f64)?;
            let term = mul_scalar_broadcast(&branch, &coef)?;
            acc = Some(match acc {
                Some(a) => add(&a, &term)?,
                None => term,
            });
        }
        sum_all(&acc.unwrap())
    };
    assert!(grad_check(&mut f, &theta, 1e-6).unwrap() < 1e-6);
    assert!(grad_check(&mut f, &x, 1e-6).unwrap() < 1e-6);
}

#[test]
fn f32_mode_passes_relaxed_gradcheck() {
    let mut r = rng(70);
    let params = ConvParams::<f32>::init(3, 1, 1, 1, 2, 2, &mut r).unwrap();
    let data: Vec<f32> = (0..32).map(|_| r.gen::<f32>() - 0.5).collect();
    let x = Tensor::parameter(&[1, 2, 4, 4], data).unwrap();
    let mut f = |t: &Tensor<f32>| sum_all(&conv2d(t, &params)?);
    let err = grad_check(&mut f, &x, 1e-3f32).unwrap();
    assert!(err < 1e-3, "f32 rel err {err}");
}
