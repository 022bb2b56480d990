use qana_core::arch::{
    classify, ghost_forward, qana_block_forward, sa_eca_forward, se_forward, spike_head_forward, GhostConfig,
    LayerKind, ModelSpec, QanaConfig, QanaModel,
};
use qana_core::ops::{self, Mode};
use qana_core::tensor::max_rel_diff;
use qana_core::{QanaError, Tensor};
use qana_testkit::{loops, rng};
use rand::Rng;

fn compact64() -> QanaModel<f64> {
    QanaModel::new(QanaConfig::compact(), 3).unwrap()
}

#[test]
fn ghost_matches_explicit_composition() {
    let m = compact64();
    let p = &m.params;
    let mut r = rng(1);
    let x = Tensor::<f64>::uniform(&[1, 8, 8, 16], -1.0, 1.0, &mut r);
    let gcfg = GhostConfig::new(32, 0.5, 3).unwrap();
    let got = ghost_forward(&x, &gcfg, p, 3).unwrap();
    assert_eq!(got.shape(), &[1, 8, 8, 32]);
    let base = loops::conv2d(&x, p.get("block3.ghost.base.w").unwrap(), None, 1, false);
    let ghost = loops::separable(
        &x,
        p.get("block3.ghost.dw.w").unwrap(),
        p.get("block3.ghost.pw.w").unwrap(),
        None,
    );
    let want = Tensor::concat_channels(&base, &ghost).unwrap();
    assert!(max_rel_diff(&got, &want, 1e-9) < 1e-9);
}

#[test]
fn ghost_zero_mask_zeroes_ghost_half() {
    let mut m = compact64();
    m.params.set("block3.ghost.mask", Tensor::zeros(&[16])).unwrap();
    let x = Tensor::<f64>::uniform(&[1, 8, 8, 16], -1.0, 1.0, &mut rng(2));
    let out = ghost_forward(&x, &GhostConfig::new(32, 0.5, 3).unwrap(), &m.params, 3).unwrap();
    for row in out.data().chunks(32) {
        assert!(row[16..].iter().all(|&v| v == 0.0));
        assert!(row[..16].iter().any(|&v| v != 0.0));
    }
}

#[test]
fn ghost_split_for_64_channels() {
    let g = GhostConfig::new(64, 0.5, 3).unwrap();
    assert_eq!((g.base_channels(), g.ghost_channels()), (32, 32));
    assert!(matches!(GhostConfig::new(2, 0.1, 3), Err(QanaError::Config(_))));
}

#[test]
fn sa_eca_composition_and_edge_cases() {
    let mut m = compact64();
    let cfg = m.config.clone();
    let mut r = rng(3);
    let x = Tensor::<f64>::uniform(&[2, 8, 8, 8], 0.0, 6.0, &mut r);
    let got = sa_eca_forward(&x, &m.params, &cfg, 1, Mode::Infer).unwrap();
    let p = &m.params;
    let d = loops::depthwise(&x, p.get("block1.eca.dw.w").unwrap(), 1, true);
    let g = |n: &str| p.get(n).unwrap().data().to_vec();
    let (gm, bt, mu, var) = (
        g("block1.eca.bn.gamma"),
        g("block1.eca.bn.beta"),
        g("block1.eca.bn.mean"),
        g("block1.eca.bn.var"),
    );
    let mut bn = d.clone();
    for row in bn.data_mut().chunks_mut(8) {
        for c in 0..8 {
            row[c] = gm[c] * (row[c] - mu[c]) / (var[c] + cfg.bn_eps).sqrt() + bt[c];
        }
    }
    let pre = loops::conv2d(
        &bn,
        p.get("block1.eca.pw.w").unwrap(),
        Some(&g("block1.eca.pw.b")),
        1,
        false,
    );
    let want = Tensor::from_fn(x.shape(), |i| loops::sigmoid(pre.data()[i]) * x.data()[i]);
    assert!(max_rel_diff(&got, &want, 1e-9) < 1e-9);

    let zero = Tensor::<f64>::zeros(&[1, 4, 4, 8]);
    assert!(sa_eca_forward(&zero, &m.params, &cfg, 1, Mode::Infer)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    m.params.set("block1.eca.pw.b", Tensor::full(&[8], 60.0)).unwrap();
    let sat = sa_eca_forward(&x, &m.params, &cfg, 1, Mode::Infer).unwrap();
    assert!(max_rel_diff(&sat, &x, 1e-9) < 1e-6);
}

#[test]
fn block_degenerate_residual_is_maxpool() {
    let mut m = compact64();
    // block 2 is 8 -> 16 so P is a learned 1x1 conv; set it to a padded identity
    for name in ["block2.ghost.base.w", "block2.ghost.pw.w", "block2.ghost.dw.w"] {
        let s = m.params.get(name).unwrap().shape().to_vec();
        m.params.set(name, Tensor::zeros(&s)).unwrap();
    }
    // BN with zero beta maps a zero ghost output to zero
    let mut proj = Tensor::<f64>::zeros(&[1, 1, 8, 16]);
    for c in 0..8 {
        proj.data_mut()[c * 16 + c] = 1.0;
    }
    m.params.set("block2.proj.w", proj).unwrap();
    let x = Tensor::<f64>::uniform(&[1, 8, 8, 8], -1.0, 1.0, &mut rng(4));
    let out = qana_block_forward(&x, 2, &m.params, &m.config, Mode::Infer, None).unwrap();
    assert_eq!(out.shape(), &[1, 4, 4, 16]);
    let (pooled, _) = ops::maxpool2d(&x, 2).unwrap();
    for (row, prow) in out.data().chunks(16).zip(pooled.data().chunks(8)) {
        assert_eq!(&row[..8], prow);
        assert!(row[8..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn block_shape_and_width_mismatch() {
    let m = QanaModel::<f32>::new(QanaConfig::default(), 5).unwrap();
    let x = Tensor::<f32>::uniform(&[1, 64, 64, 3], 0.0, 1.0, &mut rng(5));
    let out = qana_block_forward(&x, 1, &m.params, &m.config, Mode::Infer, None).unwrap();
    assert_eq!(out.shape(), &[1, 32, 32, 32]);

    let mut p = qana_core::arch::ParamStore::new();
    for (name, v) in m.params.iter() {
        if !name.starts_with("block1.proj") {
            p.insert(name, v.value.clone(), v.trainable).unwrap();
        }
    }
    let err = qana_block_forward(&x, 1, &p, &m.config, Mode::Infer, None).unwrap_err();
    assert!(matches!(err, QanaError::Shape { .. }));
}

#[test]
fn head_composition_and_range() {
    let m = compact64();
    let cfg = &m.config;
    let mut r = rng(6);
    let x = Tensor::<f64>::uniform(&[2, 4, 4, 64], -3.0, 3.0, &mut r);
    let got = spike_head_forward(&x, &m.params, cfg, Mode::Infer).unwrap();
    assert_eq!(got.shape(), &[2, 4, 4, 64]);
    let p = &m.params;
    let z = loops::separable(&x, p.get("head.dw.w").unwrap(), p.get("head.pw.w").unwrap(), None);
    let g = |n: &str| p.get(n).unwrap().data().to_vec();
    let (gm, bt, gs, bs) = (
        g("head.bn.gamma"),
        g("head.bn.beta"),
        g("head.gamma_spk"),
        g("head.beta_spk"),
    );
    let (mu, var) = (g("head.bn.mean"), g("head.bn.var"));
    let want = Tensor::from_fn(z.shape(), |i| {
        let c = i % 64;
        let n = gm[c] * (z.data()[i] - mu[c]) / (var[c] + cfg.bn_eps).sqrt() + bt[c];
        (gs[c] * n + bs[c]).clamp(0.0, 1.0)
    });
    assert!(max_rel_diff(&got, &want, 1e-9) < 1e-9);
    assert!(got.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let big = Tensor::<f64>::uniform(&[1, 4, 4, 64], -1e6, 1e6, &mut r);
    let out = spike_head_forward(&big, &m.params, cfg, Mode::Train).unwrap();
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn head_default_width() {
    let m = QanaModel::<f32>::new(QanaConfig::default(), 1).unwrap();
    let x = Tensor::<f32>::uniform(&[1, 4, 4, 256], -1.0, 1.0, &mut rng(7));
    let out = spike_head_forward(&x, &m.params, &m.config, Mode::Infer).unwrap();
    assert_eq!(out.shape(), &[1, 4, 4, 256]);
}

#[test]
fn se_composition_and_edge_cases() {
    let mut m = compact64();
    let mut r = rng(8);
    let x = Tensor::<f64>::uniform(&[2, 4, 4, 64], 0.0, 1.0, &mut r);
    let p = &m.params;
    let got = se_forward(&x, p).unwrap();
    let mean = loops::spatial_mean(&x);
    let h = loops::dense(&mean, p.get("se.w1").unwrap(), Some(p.get("se.b1").unwrap().data())).map(|v| v.max(0.0));
    let s = loops::dense(&h, p.get("se.w2").unwrap(), Some(p.get("se.b2").unwrap().data())).map(loops::sigmoid);
    let want = Tensor::from_fn(x.shape(), |i| x.data()[i] * s.data()[(i / (16 * 64)) * 64 + i % 64]);
    assert!(max_rel_diff(&got, &want, 1e-9) < 1e-9);
    for (a, b) in got.data().iter().zip(x.data()) {
        assert!(a.abs() <= b.abs());
    }
    assert!(se_forward(&Tensor::<f64>::zeros(&[1, 4, 4, 64]), p)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    m.params.set("se.w2", Tensor::zeros(&[64, 8])).unwrap();
    let half = se_forward(&x, &m.params).unwrap();
    assert_eq!(half, x.scale(0.5));
}

#[test]
fn classify_flatten_order_and_oracle() {
    let mut m = QanaModel::<f64>::new(QanaConfig::default(), 2).unwrap();
    let x = Tensor::<f64>::uniform(&[2, 4, 4, 256], 0.0, 1.0, &mut rng(9));
    let y = classify(&x, &m.params).unwrap();
    assert_eq!(y.shape(), &[2, 7]);
    let flat = x.clone().reshape(&[2, 4096]).unwrap();
    let want = loops::dense(
        &flat,
        m.params.get("cls.w").unwrap(),
        Some(m.params.get("cls.b").unwrap().data()),
    );
    assert!(max_rel_diff(&y, &want, 1e-9) < 1e-9);

    // a weight row selecting element (h, w, c) = (2, 3, 17)
    let mut w = Tensor::<f64>::zeros(&[7, 4096]);
    w.data_mut()[2 * (4 * 256) + 3 * 256 + 17] = 1.0;
    m.params.set("cls.w", w).unwrap();
    m.params.set("cls.b", Tensor::zeros(&[7])).unwrap();
    let y = classify(&x, &m.params).unwrap();
    assert_eq!(y.data()[0], x.at4(0, 2, 3, 17));
    assert!(y.data()[1..7].iter().all(|&v| v == 0.0));

    m.params.set("cls.w", Tensor::zeros(&[7, 4096])).unwrap();
    assert!(classify(&x, &m.params).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn full_model_contract_and_determinism() {
    let cfg = QanaConfig::default();
    assert_eq!(cfg.spatial_trajectory(), [32, 16, 8, 4]);
    assert_eq!(cfg.flatten_dim(), 4096);
    let m = QanaModel::<f32>::new(cfg, 4).unwrap();
    assert_eq!(m.params.get("cls.w").unwrap().shape(), &[7, 4096]);
    let x = Tensor::<f32>::uniform(&[2, 64, 64, 3], 0.0, 1.0, &mut rng(10));
    let a = m.forward(&x, Mode::Infer, None).unwrap();
    let b = m.forward(&x, Mode::Infer, None).unwrap();
    assert_eq!(a.shape(), &[2, 7]);
    assert_eq!(a, b);
    let f = m.features(&x).unwrap();
    assert_eq!(f.shape(), &[2, 4096]);
}

#[test]
fn full_model_matches_layerwise_composition() {
    let m = compact64();
    let x = Tensor::<f64>::uniform(&[1, 64, 64, 3], 0.0, 1.0, &mut rng(11));
    let mut cur = x.clone();
    let mut sides = vec![];
    for l in 1..=4 {
        cur = qana_block_forward(&cur, l, &m.params, &m.config, Mode::Infer, None).unwrap();
        sides.push(cur.shape()[1]);
    }
    assert_eq!(sides, vec![32, 16, 8, 4]);
    let f = spike_head_forward(&cur, &m.params, &m.config, Mode::Infer).unwrap();
    let s = se_forward(&f, &m.params).unwrap();
    let want = classify(&s, &m.params).unwrap();
    let got = m.forward(&x, Mode::Infer, None).unwrap();
    assert_eq!(got, want);
}

#[test]
fn spec_covers_every_parameter_once() {
    let m = compact64();
    let spec = ModelSpec::qana(&m.config);
    spec.validate(&m.params).unwrap();
    let mut referenced: Vec<&str> = spec
        .layers
        .iter()
        .flat_map(|l| l.params.iter().map(String::as_str))
        .collect();
    referenced.sort();
    let mut all: Vec<&str> = m.params.names().collect();
    all.sort();
    assert_eq!(referenced, all);

    let mut bad = spec.clone();
    bad.layers.push(qana_core::arch::LayerDesc {
        name: "mystery".into(),
        kind: LayerKind::Custom("lstm".into()),
        params: vec![],
    });
    assert!(matches!(
        bad.validate(&m.params),
        Err(QanaError::UnsupportedLayer { .. })
    ));
}

#[test]
fn head_range_holds_under_extreme_parameters() {
    let mut m = compact64();
    let mut r = rng(12);
    m.params.set("head.gamma_spk", Tensor::full(&[64], 1e4)).unwrap();
    for _ in 0..20 {
        let scale = 10f64.powi(r.gen_range(-3..8));
        let x = Tensor::<f64>::uniform(&[1, 4, 4, 64], -scale, scale, &mut r);
        let out = spike_head_forward(&x, &m.params, &m.config, Mode::Infer).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
