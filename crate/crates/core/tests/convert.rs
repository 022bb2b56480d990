use proptest::prelude::*;
use qana_core::arch::{LayerDesc, LayerKind, ModelSpec, QanaConfig, QanaModel};
use qana_core::convert::*;
use qana_core::data::ImageSample;
use qana_core::ops::Mode;
use qana_core::snn::PopulationKind;
use qana_core::tensor::max_rel_diff;
use qana_core::{QanaError, Tensor};
use qana_testkit::{loops, rng, stats};
use rand::Rng;

fn images(n: usize, seed: u64) -> Vec<ImageSample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let px = Tensor::<f32>::uniform(&[64, 64, 3], 0.0, 1.0, &mut r);
            ImageSample::new(px, i % 7, format!("u{i}")).unwrap()
        })
        .collect()
}

/// Compact model with non-trivial BN statistics and affine terms.
fn perturbed_model(seed: u64) -> QanaModel<f64> {
    let mut m = QanaModel::<f64>::new(QanaConfig::compact(), seed).unwrap();
    let mut r = rng(seed + 100);
    let names: Vec<String> = m.params.names().map(String::from).collect();
    for name in names {
        let shape = m.params.get(&name).unwrap().shape().to_vec();
        let range = if name.ends_with(".var") {
            0.3..2.0
        } else if name.ends_with(".gamma") || name.ends_with("alpha") {
            0.5..1.5
        } else if name.ends_with(".mean") || name.ends_with(".beta") {
            -0.3..0.3
        } else {
            continue;
        };
        let fresh = Tensor::from_fn(&shape, |_| r.gen_range(range.clone()));
        m.params.set(&name, fresh).unwrap();
    }
    m
}

#[test]
fn quantize_examples() {
    let q = QuantParams::new(0.5, 0).unwrap();
    assert_eq!(q.quantize(0.0), 0);
    assert_eq!(q.quantize(1.23), 2);
    assert_eq!(q.dequantize(2), 1.0);
    assert_eq!(q.quantize(1e6), 255);
    assert_eq!(q.quantize(-3.0), 0);
    assert_eq!(q.quantize(0.25), 1);
    let a = QuantParams::new(0.1, 100).unwrap();
    assert_eq!(a.quantize(0.0), 100);
    assert!((a.dequantize(90) + 1.0).abs() < 1e-12);
    assert!(QuantParams::new(0.0, 0).is_err());
    assert!(QuantParams::new(1.0, 256).is_err());
}

proptest! {
    #[test]
    fn quantize_round_trip_within_half_step(scale in 1e-4f64..10.0, u in 0.0f64..1.0) {
        let q = QuantParams::new(scale, 0).unwrap();
        let x = u * q.max_value();
        prop_assert!((q.dequantize(q.quantize(x)) - x).abs() <= scale / 2.0 + 1e-12);
    }

    #[test]
    fn asymmetric_range_round_trip(lo in -5.0f64..0.0, span in 0.01f64..10.0, u in 0.0f64..1.0) {
        let q = QuantParams::asymmetric(lo, lo + span);
        let x = q.min_value() + u * (q.max_value() - q.min_value());
        prop_assert!((q.dequantize(q.quantize(x)) - x).abs() <= q.scale / 2.0 + 1e-12);
        prop_assert_eq!(q.dequantize(q.quantize(0.0)), 0.0);
    }
}

#[test]
fn tensor_quantization_round_trip() {
    let mut r = rng(8);
    let t = Tensor::<f32>::uniform(&[3, 5, 7], 0.0, 2.0, &mut r);
    let qp = QuantParams::unsigned(2.0);
    let back = dequantize(&quantize_tensor(&t, qp));
    let err = t
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= qp.scale / 2.0 + 1e-6);
    let (q, s) = quantize_symmetric(&[0.5, -1.0, 0.25]);
    assert_eq!(q, vec![64, -127, 32]);
    assert!((s - 1.0 / 127.0).abs() < 1e-15);
}

#[test]
fn percentile_matches_sorting_oracle() {
    let mut r = rng(12);
    for _ in 0..200 {
        let n = r.gen_range(1..500);
        let v: Vec<f64> = (0..n).map(|_| r.gen_range(-10.0..10.0)).collect();
        let p = [0.1, 1.0, 50.0, 99.0, 99.9, 100.0][r.gen_range(0..6)];
        assert_eq!(percentile(&mut v.clone(), p).unwrap(), stats::percentile_sorted(&v, p));
    }
}

#[test]
fn calibration_ranges() {
    let a = 2.7;
    let q = unsigned_range(&mut vec![a; 1000], CALIBRATION_PERCENTILE).unwrap();
    assert!((q.scale - a / 255.0).abs() < 1e-15);
    assert_eq!(q.zero_point, 0);
    let mut signed: Vec<f64> = (0..1001).map(|i| i as f64 / 100.0 - 5.0).collect();
    let s = signed_range(&mut signed, CALIBRATION_PERCENTILE).unwrap();
    assert!(s.zero_point > 100 && s.zero_point < 155);
    assert!(s.min_value() <= -4.9 && s.max_value() >= 4.9);
    assert!(matches!(percentile(&mut [], 50.0), Err(QanaError::EmptyCalibration)));
    let folded = fold_batchnorm(&perturbed_model(1)).unwrap();
    assert!(matches!(
        calibrate(&folded, &[], 99.9),
        Err(QanaError::EmptyCalibration)
    ));
}

#[test]
fn identity_batchnorm_fold_is_a_no_op() {
    let mut r = rng(4);
    let k = Tensor::<f64>::uniform(&[3, 3, 4, 5], -1.0, 1.0, &mut r);
    let f = fold_conv_bn(&k, None, &[1.0; 5], &[0.0; 5], &[0.0; 5], &[1.0; 5], 0.0).unwrap();
    assert_eq!(f.kernel, k);
    assert_eq!(f.bias, vec![0.0; 5]);
}

#[test]
fn conv_batchnorm_fold_matches_unfolded() {
    let mut r = rng(6);
    for _ in 0..20 {
        let (cin, cout, kk) = (r.gen_range(1..5), r.gen_range(1..6), [1, 3][r.gen_range(0..2)]);
        let k = Tensor::<f64>::uniform(&[kk, kk, cin, cout], -1.0, 1.0, &mut r);
        let b: Vec<f64> = (0..cout).map(|_| r.gen_range(-1.0..1.0)).collect();
        let gamma: Vec<f64> = (0..cout).map(|_| r.gen_range(0.2..2.0)).collect();
        let beta: Vec<f64> = (0..cout).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mean: Vec<f64> = (0..cout).map(|_| r.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..cout).map(|_| r.gen_range(0.1..3.0)).collect();
        let eps = 1e-3;
        let x = Tensor::<f64>::uniform(&[2, 6, 5, cin], -1.0, 1.0, &mut r);
        let y = loops::conv2d(&x, &k, Some(&b), 1, true);
        let want = Tensor::from_fn(y.shape(), |i| {
            let c = i % cout;
            gamma[c] * (y.data()[i] - mean[c]) / (var[c] + eps).sqrt() + beta[c]
        });
        let f = fold_conv_bn(&k, Some(&b), &gamma, &beta, &mean, &var, eps).unwrap();
        assert!(max_rel_diff(&f.forward(&x).unwrap(), &want, 1e-6) < 1e-5);
    }
    assert!(fold_conv_bn(
        &Tensor::zeros(&[1, 1, 1, 2]),
        None,
        &[1.0],
        &[0.0; 2],
        &[0.0; 2],
        &[1.0; 2],
        0.0
    )
    .is_err());
}

#[test]
fn folded_model_matches_source_and_has_no_batchnorm() {
    let m = perturbed_model(9);
    let folded = fold_batchnorm(&m).unwrap();
    let mut r = rng(10);
    let x = Tensor::<f64>::uniform(&[2, 64, 64, 3], 0.0, 1.0, &mut r);
    let want = m.forward(&x, Mode::Infer, None).unwrap();
    let got = folded.forward(&x).unwrap();
    assert!(
        max_rel_diff(&got, &want, 1e-6) < 1e-5,
        "{}",
        max_rel_diff(&got, &want, 1e-6)
    );
    let spec = folded.spec();
    assert!(spec.layers.iter().all(|l| !matches!(
        l.kind,
        LayerKind::BatchNorm | LayerKind::SpikeAffine | LayerKind::Dropout
    )));
    assert!(spec.layers.iter().any(|l| matches!(l.kind, LayerKind::Ghost)));
}

#[test]
fn mapping_covers_every_layer_once() {
    let m = perturbed_model(2);
    let conv = convert(&m, &images(4, 3)).unwrap();
    let layers: Vec<String> = m.spec().layers.into_iter().map(|l| l.name).collect();
    let mapped: Vec<String> = conv.spec.mapping.iter().map(|e| e.source.clone()).collect();
    assert_eq!(mapped, layers);
    let mut uniq = mapped.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), mapped.len());
    assert!(conv.spec.mapping.iter().all(|e| !e.target.is_empty()));

    for l in 1..=4 {
        let i = conv.spec.find(&format!("block{l}.d")).unwrap();
        let p = &conv.spec.populations[i];
        let PopulationKind::Integrate(layer) = &p.kind else {
            panic!("block{l}.d is not IF")
        };
        assert_eq!(layer.cap, Some((6.0 / p.quant.scale).round() as u32));
        assert_eq!(conv.calibration.get(&format!("block{l}.d")).unwrap(), p.quant);
    }
    let head = &conv.spec.populations[conv.spec.find("head").unwrap()];
    let PopulationKind::Integrate(hl) = &head.kind else {
        panic!("head is not IF")
    };
    assert_eq!(hl.cap, Some((1.0 / head.quant.scale).round() as u32));
    assert_eq!(conv.spec.num_classes(), 7);
}

#[test]
fn unsupported_layer_is_rejected() {
    let m = perturbed_model(2);
    let conv = convert(&m, &images(2, 3)).unwrap();
    let mut spec: ModelSpec = m.spec();
    spec.layers.push(LayerDesc {
        name: "mystery".into(),
        kind: LayerKind::Custom("Swish".into()),
        params: vec![],
    });
    let err = map_operators(&conv.folded, &spec, &conv.calibration).unwrap_err();
    assert!(
        matches!(err, QanaError::UnsupportedLayer { ref name, .. } if name == "mystery"),
        "{err}"
    );
}

#[test]
fn snn_file_round_trip_is_bit_exact() {
    let m = perturbed_model(5);
    let spec = convert(&m, &images(3, 1)).unwrap().spec;
    let bytes = encode_snn(&spec);
    let back = decode_snn(&bytes).unwrap();
    assert_eq!(back, spec);
    assert_eq!(encode_snn(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.qsnn");
    save_snn(&spec, &path).unwrap();
    assert_eq!(load_snn(&path).unwrap(), spec);

    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(decode_snn(&bytes[..cut]), Err(QanaError::Corrupt(_))),
            "cut {cut}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_snn(&extra), Err(QanaError::Corrupt(_))));
    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&(SNN_VERSION + 1).to_le_bytes());
    assert!(matches!(decode_snn(&newer), Err(QanaError::Version { .. })));
}

#[test]
fn cost_report_counts_structure() {
    let m = perturbed_model(5);
    let probes = images(2, 4);
    let spec = convert(&m, &probes).unwrap().spec;
    let c = cost_report(&spec, &probes, 64).unwrap();
    assert_eq!(c.neurons, spec.neurons());
    assert_eq!(c.synapses, spec.synapses());
    assert!(c.weight_bytes > 0 && c.gate_parameters > 0);
    assert!(c.estimated_events_per_inference.unwrap() > 0.0);
    assert_eq!(
        cost_report(&spec, &[], 64).unwrap().estimated_events_per_inference,
        None
    );
}

#[test]
fn verification_is_deterministic_and_catches_a_bad_threshold() {
    let m = perturbed_model(7);
    let calib = images(6, 21);
    let conv = convert(&m, &calib).unwrap();
    let probes = images(4, 22);
    let t = 128;
    let a = verify_conversion(&conv.folded, &conv.spec, &probes, t).unwrap();
    let b = verify_conversion(&conv.folded, &conv.spec, &probes, t).unwrap();
    assert_eq!(a, b);

    // starve the output neuron the dequantized network picks most often
    let mut votes = [0usize; 7];
    for s in &probes {
        let z = dequantized_forward(&conv.folded, &conv.spec, s.pixels.data()).unwrap();
        votes[qana_core::snn::argmax(&z)] += 1;
    }
    let top = (0..7).max_by_key(|&c| votes[c]).unwrap();
    let mut bad = conv.spec.clone();
    let out = bad.output;
    let PopulationKind::Integrate(layer) = &mut bad.populations[out].kind else {
        panic!()
    };
    layer.threshold[top] = layer.threshold[top].saturating_mul(20);
    let c = verify_conversion(&conv.folded, &bad, &probes, t).unwrap();
    assert!(
        c.argmax_agreement < a.argmax_agreement,
        "clean {} corrupted {}",
        a.argmax_agreement,
        c.argmax_agreement
    );
    assert!(verify_conversion(&conv.folded, &conv.spec, &[], t).is_err());
}

#[test]
fn spiking_logits_converge_with_window() {
    let m = perturbed_model(13);
    let conv = convert(&m, &images(6, 31)).unwrap();
    let probes = images(2, 32);
    let short = verify_conversion(&conv.folded, &conv.spec, &probes, 32).unwrap();
    let long = verify_conversion(&conv.folded, &conv.spec, &probes, 512).unwrap();
    assert!(
        long.mean_logit_deviation < short.mean_logit_deviation / 4.0,
        "T=32 {} T=512 {}",
        short.mean_logit_deviation,
        long.mean_logit_deviation
    );
}
