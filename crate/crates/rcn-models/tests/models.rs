use approx::assert_abs_diff_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcn_models::*;
use tensor_engine::{add, conv2d, sum_all, ConvParams, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input<T: tensor_engine::Real>(n: usize, r: usize, seed: u64) -> Tensor<T> {
    use rand::Rng;
    let mut rg = rng(seed);
    let data: Vec<T> = (0..n * 3 * r * r)
        .map(|_| T::from_f64(rg.gen::<f64>() * 2.0 - 1.0))
        .collect();
    Tensor::from_vec(&[n, 3, r, r], data).unwrap()
}

#[test]
fn forward_shapes_at_r60() {
    let mut model =
        RcnModel::<f32>::build_named(ModelKind::Rcn, 16, 5, 3, 60, 0).unwrap();
    let x = input::<f32>(2, 60, 1);
    let out = model.forward(&x, false, &mut rng(0)).unwrap();
    assert_eq!(out.taps.conv1.shape(), vec![2, 16, 20, 20]);
    assert_eq!(out.taps.cam_tap.shape(), vec![2, 16, 20, 20]);
    assert_eq!(out.logits.shape(), vec![2, 3]);
    assert_eq!(out.probs.shape(), vec![2, 3]);
    // Classifier consumes K*K*M = 400 features.
    assert_eq!(model.classifier_weight.shape(), vec![3, 400]);
}

#[test]
fn forward_shapes_at_r100() {
    let mut model =
        RcnModel::<f32>::build_named(ModelKind::Rcn, 8, 5, 3, 100, 0).unwrap();
    let x = input::<f32>(1, 100, 2);
    let out = model.forward(&x, false, &mut rng(0)).unwrap();
    assert_eq!(out.taps.conv1.shape(), vec![1, 8, 34, 34]);
    assert_eq!(out.logits.shape(), vec![1, 3]);
}

#[test]
fn zero_network_gives_uniform_probabilities() {
    let mut model =
        RcnModel::<f64>::build_named(ModelKind::Rcn, 4, 2, 3, 24, 0).unwrap();
    for (_, p) in model.named_parameters() {
        p.set_data(vec![0.0; p.numel()]).unwrap();
    }
    // Keep BN gamma at 1 so the map stays affine, biases all zero.
    model.conv1.bn.gamma.set_data(vec![1.0; 4]).unwrap();
    for layer in &mut model.rconv {
        layer.bn_ff.gamma.set_data(vec![1.0; 4]).unwrap();
        layer.bn_rec[0].gamma.set_data(vec![1.0; 4]).unwrap();
    }
    let x = input::<f64>(2, 24, 3);
    let out = model.forward(&x, false, &mut rng(0)).unwrap();
    assert!(out.logits.to_vec().iter().all(|&v| v == 0.0));
    for &p in out.probs.to_vec().iter() {
        assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
    }
}

#[test]
fn rconv_zero_states_is_a_pointwise_layer() {
    let mut r = rng(4);
    let mut layer = RconvLayer::<f64> {
        ff: ConvParams::init(1, 1, 0, 1, 3, 3, &mut r).unwrap(),
        rec: ConvParams::init(3, 1, 1, 1, 3, 3, &mut r).unwrap(),
        bn_ff: tensor_engine::BatchNormState::new(3).unwrap(),
        bn_rec: vec![tensor_engine::BatchNormState::new(3).unwrap()],
        states: 0,
    };
    let x = input::<f64>(1, 10, 5);
    let out = layer
        .forward(&x, false, AttentionPlacement::None, None, true)
        .unwrap();
    // Point-wise conv preserves the spatial extent.
    assert_eq!(out.out.shape(), vec![1, 3, 10, 10]);

    // Same parameters, evaluated manually.
    let expect = tensor_engine::relu(
        &tensor_engine::batchnorm2d(
            &conv2d(&x, &layer.ff).unwrap(),
            &mut tensor_engine::BatchNormState::new(3).unwrap(),
            true,
        )
        .unwrap(),
    )
    .unwrap();
    assert_eq!(out.out.to_vec(), expect.to_vec());
}

#[test]
fn shortcut_with_zero_recurrent_weights_is_depth_independent() {
    let make = |states: usize| {
        let mut r = rng(6);
        let mut layer = RconvLayer::<f64> {
            ff: ConvParams::init(1, 1, 0, 1, 3, 3, &mut r).unwrap(),
            rec: ConvParams::init(3, 1, 1, 1, 3, 3, &mut r).unwrap(),
            bn_ff: tensor_engine::BatchNormState::new(3).unwrap(),
            bn_rec: vec![tensor_engine::BatchNormState::new(3).unwrap()],
            states,
        };
        layer
            .rec
            .weight
            .set_data(vec![0.0; layer.rec.weight.numel()])
            .unwrap();
        layer.rec.bias.set_data(vec![0.4, -0.2, 0.1]).unwrap();
        let x = input::<f64>(1, 10, 7);
        layer
            .forward(&x, true, AttentionPlacement::None, None, true)
            .unwrap()
            .out
            .to_vec()
    };
    let one = make(1);
    let three = make(3);
    assert_eq!(one, three);
}

#[test]
fn shared_weight_distributivity() {
    // W*(X+F) == W*X + W*F for the shared recurrent weights (bias-free).
    let mut r = rng(8);
    let params = {
        let p = ConvParams::<f64>::init(3, 1, 1, 1, 4, 4, &mut r).unwrap();
        p.bias.set_data(vec![0.0; 4]).unwrap();
        p
    };
    let x = input::<f64>(1, 12, 9);
    let x4 = {
        use rand::Rng;
        let data: Vec<f64> = (0..4 * 144).map(|_| r.gen::<f64>() - 0.5).collect();
        Tensor::from_vec(&[1, 4, 12, 12], data).unwrap()
    };
    let f4 = {
        use rand::Rng;
        let data: Vec<f64> = (0..4 * 144).map(|_| r.gen::<f64>() - 0.5).collect();
        Tensor::from_vec(&[1, 4, 12, 12], data).unwrap()
    };
    drop(x);
    let joint = conv2d(&add(&x4, &f4).unwrap(), &params).unwrap();
    let split = add(
        &conv2d(&x4, &params).unwrap(),
        &conv2d(&f4, &params).unwrap(),
    )
    .unwrap();
    for (a, b) in joint.to_vec().iter().zip(split.to_vec()) {
        assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
    }
}

#[test]
fn wide_split_counts() {
    for (m, expect) in [
        (16usize, vec![6usize, 5, 5]),
        (32, vec![11, 11, 10]),
        (64, vec![22, 21, 21]),
    ] {
        let d = ArchDescriptor::named(ModelKind::RcnW, m, 5, 3, 60).unwrap();
        assert_eq!(d.stream_channels(), expect);
    }
}

#[test]
fn wide_streams_agree_on_constant_input_interior() {
    // Identical constant weights in every stream: away from padding,
    // all output channels see the same 27-tap sum regardless of
    // dilation.
    let x = Tensor::<f64>::from_vec(&[1, 3, 60, 60], vec![1.0; 3 * 60 * 60]).unwrap();
    let mut outputs = Vec::new();
    for (d, p) in [(1usize, 1usize), (2, 2), (3, 3)] {
        let params = ConvParams::from_tensors(
            3,
            3,
            p,
            d,
            Tensor::parameter(&[2, 3, 3, 3], vec![0.1; 54]).unwrap(),
            Tensor::parameter(&[2], vec![0.0; 2]).unwrap(),
        )
        .unwrap();
        outputs.push(conv2d(&x, &params).unwrap());
    }
    let expected = 27.0 * 0.1;
    for out in &outputs {
        assert_eq!(out.shape(), vec![1, 2, 20, 20]);
        let data = out.to_vec();
        for y in 2..18 {
            for x in 2..18 {
                for c in 0..2 {
                    let v = data[c * 400 + y * 20 + x];
                    assert_abs_diff_eq!(v, expected, epsilon = 1e-10);
                }
            }
        }
    }
}

#[test]
fn attention_map_constant_features_give_all_ones() {
    let x = Tensor::<f64>::from_vec(&[2, 4, 8, 8], vec![0.6; 2 * 4 * 64]).unwrap();
    let source = AttentionSource {
        classifier_weight: Tensor::parameter(&[3, 4 * 2 * 2], vec![0.5; 48]).unwrap(),
        pool_size: 2,
    };
    let map = attention_map(&x, &source).unwrap();
    assert_eq!(map.shape(), vec![2, 1, 8, 8]);
    assert!(map.to_vec().iter().all(|&v| v == 1.0));
}

#[test]
fn attention_map_zero_weights_fall_back_to_ones() {
    let x = input::<f64>(1, 8, 10);
    let x4 = {
        use rand::Rng;
        let mut rg = rng(11);
        let data: Vec<f64> = (0..4 * 64).map(|_| rg.gen::<f64>()).collect();
        Tensor::from_vec(&[1, 4, 8, 8], data).unwrap()
    };
    drop(x);
    let source = AttentionSource {
        classifier_weight: Tensor::parameter(&[3, 16], vec![0.0; 48]).unwrap(),
        pool_size: 2,
    };
    let map = attention_map(&x4, &source).unwrap();
    assert!(map.to_vec().iter().all(|&v| v == 1.0));
}

#[test]
fn attention_peak_lands_in_active_bin() {
    // One hot spatial bin with aligned positive weights: after
    // upsampling, the map's maximum stays inside that bin's quadrant.
    let mut data = vec![0.0f64; 4 * 8 * 8];
    for y in 0..4 {
        for x in 0..4 {
            for c in 0..4 {
                data[c * 64 + y * 8 + x] = 1.0;
            }
        }
    }
    let x = Tensor::from_vec(&[1, 4, 8, 8], data).unwrap();
    let source = AttentionSource {
        classifier_weight: Tensor::parameter(&[3, 16], vec![0.25; 48]).unwrap(),
        pool_size: 2,
    };
    let map = attention_map(&x, &source).unwrap();
    let m = map.to_vec();
    let (mut best, mut best_v) = (0usize, f64::MIN);
    for (i, &v) in m.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    let (by, bx) = (best / 8, best % 8);
    assert!(by < 4 && bx < 4, "peak at ({by},{bx})");
}

#[test]
fn apply_attention_identity_and_annihilation() {
    let x = input::<f64>(1, 8, 12);
    let x4 = {
        use rand::Rng;
        let mut rg = rng(13);
        let data: Vec<f64> = (0..2 * 64).map(|_| rg.gen::<f64>() - 0.5).collect();
        Tensor::from_vec(&[1, 2, 8, 8], data).unwrap()
    };
    drop(x);
    let ones = Tensor::from_vec(&[1, 1, 8, 8], vec![1.0; 64]).unwrap();
    let zeros = Tensor::from_vec(&[1, 1, 8, 8], vec![0.0; 64]).unwrap();
    let same = apply_attention(&x4, &ones).unwrap();
    assert_eq!(same.to_vec(), x4.to_vec());
    let nil = apply_attention(&x4, &zeros).unwrap();
    assert!(nil.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn model2_is_the_rcn_backbone() {
    let a = ArchDescriptor::named(ModelKind::Model2, 16, 5, 3, 60).unwrap();
    let b = ArchDescriptor::named(ModelKind::Rcn, 16, 5, 3, 60).unwrap();
    assert_eq!(a.to_string(), b.to_string());
}

#[test]
fn parameter_counts_are_invariant_across_module_variants() {
    let count = |kind: ModelKind| {
        RcnModel::<f32>::build_named(kind, 16, 5, 3, 60, 0)
            .unwrap()
            .parameter_count()
    };
    let base = count(ModelKind::Rcn);
    for kind in [
        ModelKind::RcnW,
        ModelKind::RcnS,
        ModelKind::RcnA,
        ModelKind::RcnC,
        ModelKind::RcnF,
        ModelKind::RcnP,
    ] {
        assert_eq!(count(kind), base, "{kind:?}");
    }
    // The deeper baselines do differ.
    assert!(count(ModelKind::Model3) > base);
    assert!(count(ModelKind::Model4) > count(ModelKind::Model3));
    assert!(count(ModelKind::Model1) < base);
}

#[test]
fn shape_soundness_across_resolutions_and_pools() {
    for kind in ModelKind::ALL_NAMED {
        for r in [20usize, 37, 60, 100, 300] {
            for k in [5usize, 7, 9] {
                let mut model = RcnModel::<f32>::build_named(kind, 4, k, 3, r, 0).unwrap();
                let x = input::<f32>(1, r, 99);
                let out = model.forward(&x, false, &mut rng(0)).unwrap();
                assert_eq!(out.logits.shape(), vec![1, 3], "{kind:?} R={r} K={k}");
            }
        }
    }
}

#[test]
fn attention_neutrality_with_constant_propagation() {
    // Hand-set parameters that keep every feature map spatially
    // constant in eval mode: the attention map is then exactly ones and
    // the attended forward pass must be bit-identical to the plain one.
    fn build_constant(kind: ModelKind) -> RcnModel<f64> {
        let mut model = RcnModel::<f64>::build_named(kind, 4, 2, 3, 18, 5).unwrap();
        let s = &model.conv1.streams[0];
        let mut w = vec![0.0; s.weight.numel()];
        // Center tap only; stride 3 keeps it in bounds everywhere.
        for o in 0..4 {
            for i in 0..3 {
                w[((o * 3 + i) * 3 + 1) * 3 + 1] = 0.2;
            }
        }
        s.weight.set_data(w).unwrap();
        s.bias.set_data(vec![0.05; 4]).unwrap();
        let layer = &model.rconv[0];
        layer
            .ff
            .weight
            .set_data(vec![0.25; layer.ff.weight.numel()])
            .unwrap();
        layer.ff.bias.set_data(vec![0.1; 4]).unwrap();
        let mut w = vec![0.0; layer.rec.weight.numel()];
        for o in 0..4 {
            for i in 0..4 {
                w[((o * 4 + i) * 3 + 1) * 3 + 1] = 0.25;
            }
        }
        layer.rec.weight.set_data(w).unwrap();
        layer.rec.bias.set_data(vec![0.0; 4]).unwrap();
        model
            .classifier_weight
            .set_data(vec![0.7; model.classifier_weight.numel()])
            .unwrap();
        model.classifier_bias.set_data(vec![0.1, 0.2, 0.3]).unwrap();
        model
    }

    let x = Tensor::<f64>::from_vec(&[1, 3, 18, 18], vec![0.4; 3 * 18 * 18]).unwrap();
    let mut plain = build_constant(ModelKind::Rcn);
    let base = plain.forward(&x, false, &mut rng(0)).unwrap();
    for kind in [ModelKind::RcnA, ModelKind::RcnF, ModelKind::RcnP, ModelKind::RcnC] {
        // The attended variants share the backbone parameter layout
        // except conv1 wideness; restrict to standard-conv kinds.
        if matches!(kind, ModelKind::RcnF | ModelKind::RcnP | ModelKind::RcnC) {
            continue;
        }
        let mut attended = build_constant(kind);
        let out = attended.forward(&x, false, &mut rng(0)).unwrap();
        let map = out.taps.attention.expect("attended variant must expose a map");
        assert!(map.to_vec().iter().all(|&v| v == 1.0), "{kind:?} map not ones");
        let a = base.logits.to_vec();
        let b = out.logits.to_vec();
        assert!(
            a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{kind:?} logits differ: {a:?} vs {b:?}"
        );
    }
}

#[test]
fn descriptor_round_trip() {
    for kind in ModelKind::ALL_NAMED {
        let d = ArchDescriptor::named(kind, 16, 5, 3, 60).unwrap();
        let s = d.to_string();
        let back: ArchDescriptor = s.parse().unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_string(), s);
    }
    for att in AttentionPlacement::ALL {
        let d = ArchDescriptor::custom(12, 7, 3, 100, true, false, att).unwrap();
        let back: ArchDescriptor = d.to_string().parse().unwrap();
        assert_eq!(back, d);
    }
}

#[test]
fn descriptor_rejects_contradictions() {
    // rcn-w with wide=0 contradicts the named kind.
    let s = "kind=rcn-w;M=16;K=5;C=3;R=60;wide=0;shortcut=0;att=none;dil=1,2,3";
    assert!(s.parse::<ArchDescriptor>().is_err());
    let s = "kind=banana;M=16;K=5;C=3;R=60;wide=0;shortcut=0;att=none;dil=1,2,3";
    assert!(s.parse::<ArchDescriptor>().is_err());
    // Attention on a model without a recurrent layer.
    assert!(ArchDescriptor::named(ModelKind::Model1, 16, 5, 3, 60)
        .map(|mut d| {
            d.attention = AttentionPlacement::AfterRconv;
            d.validate()
        })
        .unwrap()
        .is_err());
}

#[test]
fn checkpoint_round_trip_preserves_forward() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rcnm");
    let mut model = RcnModel::<f32>::build_named(ModelKind::RcnF, 6, 3, 3, 24, 42).unwrap();
    model.norm_mean = [0.1, 0.2, 0.3];
    model.norm_std = [1.1, 0.9, 1.4];
    // Touch the running stats so the buffers are non-trivial.
    let x = input::<f32>(4, 24, 21);
    model.forward(&x, true, &mut rng(1)).unwrap();

    let ckpt = model.to_checkpoint();
    tensor_engine::write_rcnm(&path, &ckpt).unwrap();
    let loaded = tensor_engine::read_rcnm(&path).unwrap();
    let mut restored = RcnModel::<f32>::from_checkpoint(&loaded).unwrap();

    assert_eq!(restored.descriptor, model.descriptor);
    assert_eq!(restored.parameter_count(), model.parameter_count());
    let a = model.forward(&x, false, &mut rng(2)).unwrap().logits.to_vec();
    let b = restored.forward(&x, false, &mut rng(2)).unwrap().logits.to_vec();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn same_seed_same_model() {
    let mut a = RcnModel::<f32>::build_named(ModelKind::RcnC, 8, 5, 3, 40, 7).unwrap();
    let mut b = RcnModel::<f32>::build_named(ModelKind::RcnC, 8, 5, 3, 40, 7).unwrap();
    let x = input::<f32>(2, 40, 30);
    let la = a.forward(&x, true, &mut rng(3)).unwrap().logits.to_vec();
    let lb = b.forward(&x, true, &mut rng(3)).unwrap().logits.to_vec();
    assert!(la.iter().zip(&lb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn predict_classes_breaks_ties_low() {
    let logits = Tensor::<f32>::from_vec(&[2, 3], vec![0.5, 0.5, 0.1, 0.0, 0.7, 0.7]).unwrap();
    assert_eq!(predict_classes(&logits), vec![0, 1]);
}

#[test]
fn full_model_gradcheck_spot() {
    use tensor_engine::{grad_check, loss_eq9, one_hot};
    for kind in [ModelKind::RcnF, ModelKind::Model4] {
        let mut model = RcnModel::<f64>::build_named(kind, 6, 2, 3, 12, 3).unwrap();
        let x = Tensor::parameter(
            &[2, 3, 12, 12],
            input::<f64>(2, 12, 77).to_vec(),
        )
        .unwrap();
        let y = one_hot::<f64>(&[0, 2], 3).unwrap();
        let mut f = |_: &Tensor<f64>| {
            let mut mask_rng = rng(5);
            let out = model
                .forward(&x, true, &mut mask_rng)
                .map_err(|_| tensor_engine::TensorError::NonFinite { op: "forward" })?;
            loss_eq9(&out.probs, &y)
        };
        let err = grad_check(&mut f, &x, 1e-6).unwrap();
        assert!(err < 1e-5, "{kind:?} input grad rel err {err}");

        let probe = model.rconv[0].rec.weight.clone();
        let mut f = |_: &Tensor<f64>| {
            let mut mask_rng = rng(5);
            let out = model
                .forward(&x, true, &mut mask_rng)
                .map_err(|_| tensor_engine::TensorError::NonFinite { op: "forward" })?;
            loss_eq9(&out.probs, &y)
        };
        let err = grad_check(&mut f, &probe, 1e-6).unwrap();
        assert!(err < 1e-5, "{kind:?} shared weight grad rel err {err}");
    }
}
