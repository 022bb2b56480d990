use qana_core::arch::{QanaConfig, QanaModel};
use qana_core::data::{generate_synthetic, preprocess, ImageSample, SynthConfig};
use qana_core::ops::Mode;
use qana_core::train::*;
use qana_core::Tensor;
use qana_testkit::{rng, stats};
use rand::Rng;

fn two_class_toy(n: usize, seed: u64) -> Vec<ImageSample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let base = if label == 0 { 0.2 } else { 0.8 };
            let px = (0..64 * 64 * 3)
                .map(|_| (base + r.gen_range(-0.15..0.15f32)).clamp(0.0, 1.0))
                .collect();
            ImageSample::new(Tensor::new(vec![64, 64, 3], px).unwrap(), label, format!("t{i}")).unwrap()
        })
        .collect()
}

fn compact(k: usize) -> QanaConfig {
    QanaConfig {
        num_classes: k,
        ..QanaConfig::compact()
    }
}

#[test]
fn cross_entropy_value_and_gradient() {
    let logits = Tensor::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
    let (loss, g) = softmax_cross_entropy(&logits, &[2, 1]).unwrap();
    let z: f64 = [1f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let want = (-(3f64.exp() / z).ln() + 3f64.ln()) / 2.0;
    assert!((loss - want).abs() < 1e-12);
    let rows: Vec<f64> = g.data().chunks(3).map(|r| r.iter().sum()).collect();
    assert!(rows.iter().all(|s| s.abs() < 1e-12));
    let eps = 1e-6;
    for i in 0..6 {
        let mut p = logits.clone();
        p.data_mut()[i] += eps;
        let mut m = logits.clone();
        m.data_mut()[i] -= eps;
        let fd = (softmax_cross_entropy(&p, &[2, 1]).unwrap().0 - softmax_cross_entropy(&m, &[2, 1]).unwrap().0)
            / (2.0 * eps);
        assert!((fd - g.data()[i]).abs() < 1e-8);
    }
}

#[test]
fn zero_learning_rate_leaves_learnable_parameters_unchanged() {
    let data = two_class_toy(8, 1);
    let mut m = QanaModel::<f32>::new(compact(2), 1).unwrap();
    let before = m.clone();
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        },
        batch_size: 4,
        epochs: 1,
        ..TrainConfig::default()
    };
    train(&mut m, &data, &cfg).unwrap();
    for (name, p) in before.params.iter() {
        if p.trainable {
            assert_eq!(&p.value, m.params.get(name).unwrap(), "{name}");
        }
    }
}

#[test]
fn separable_toy_reaches_full_accuracy_and_is_deterministic() {
    let data = two_class_toy(32, 2);
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        batch_size: 8,
        epochs: 5,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut a = QanaModel::<f32>::new(compact(2), 3).unwrap();
    let ha = train(&mut a, &data, &cfg).unwrap();
    let mut b = QanaModel::<f32>::new(compact(2), 3).unwrap();
    let hb = train(&mut b, &data, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    assert!(ha.loss.last().unwrap() < ha.loss.first().unwrap());
    let rep = evaluate(&a, &data).unwrap();
    assert_eq!(rep.top1_accuracy, 1.0, "{:?}", ha);
}

#[test]
fn divergence_is_reported() {
    let data = two_class_toy(4, 3);
    let mut m = QanaModel::<f32>::new(compact(2), 1).unwrap();
    m.params
        .set("cls.b", Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap())
        .unwrap();
    let err = train(
        &mut m,
        &data,
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap_err();
    assert!(matches!(
        err,
        qana_core::QanaError::NonFinite(_) | qana_core::QanaError::Diverged { .. }
    ));
}

#[test]
fn metrics_perfect_and_confusion_invariants() {
    let labels = [0, 1, 2, 2, 1, 0, 0];
    let scores: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| (0..3).map(|c| if c == y { 1.0 } else { 0.0 }).collect())
        .collect();
    let rep = report_from_scores(&scores, &labels, 3).unwrap();
    assert_eq!(rep.top1_accuracy, 1.0);
    assert_eq!(rep.macro_f1, 1.0);
    assert_eq!(rep.macro_auc, Some(1.0));

    let preds = [0, 2, 2, 1, 1, 0, 1];
    let rep = MetricsReport::new(&labels, &preds, None, 3).unwrap();
    for (c, row) in rep.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), labels.iter().filter(|&&y| y == c).count());
    }
    let trace: usize = (0..3).map(|c| rep.confusion[c][c]).sum();
    assert_eq!(rep.top1_accuracy, trace as f64 / 7.0);
    let f1_mean = rep.per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0;
    assert_eq!(rep.macro_f1, f1_mean);
    for m in &rep.per_class {
        assert_eq!(m.accuracy, m.recall);
    }
    assert!(rep.to_table(None).contains("Average"));
    assert_eq!(rep.to_csv().lines().count(), 5);
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut r = rng(4);
    for _ in 0..50 {
        let n = r.gen_range(2..60);
        let pos: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
        // coarse scores to exercise ties
        let s: Vec<f64> = (0..n).map(|_| (r.gen_range(0..8)) as f64 / 8.0).collect();
        match auc_roc(&s, &pos) {
            Some(a) => assert!((a - stats::auc_pairwise(&s, &pos)).abs() < 1e-12),
            None => assert!(pos.iter().all(|&p| p) || pos.iter().all(|&p| !p)),
        }
    }
}

#[test]
fn table_one_averages() {
    let rows = [
        [0.890, 0.933, 0.911, 0.933],
        [0.890, 0.901, 0.896, 0.901],
        [0.866, 0.853, 0.859, 0.853],
        [0.925, 0.976, 0.950, 0.976],
        [0.887, 0.817, 0.851, 0.817],
        [0.949, 0.966, 0.957, 0.966],
        [0.956, 0.933, 0.944, 0.933],
    ];
    let avg = column_means(&rows).map(|v| round_to(v, 3));
    assert_eq!(avg[0], 0.909);
    assert_eq!(avg[1], 0.911);
    assert_eq!(avg[2], 0.910);
    // the accuracy column repeats recall, so its mean rounds like recall
    assert_eq!(avg[3], 0.911);
}

#[test]
fn finetune_touches_only_the_head_and_adapts_to_relabelled_data() {
    let synth = SynthConfig {
        majority: 12,
        seed: 5,
        ..SynthConfig::default()
    };
    let data: Vec<ImageSample> = generate_synthetic(&synth)
        .iter()
        .map(|(id, img, y)| preprocess(img, *y, id).unwrap())
        .collect();
    let mut model = QanaModel::<f32>::new(QanaConfig::compact(), 2).unwrap();
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        batch_size: 16,
        epochs: 6,
        seed: 1,
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg).unwrap();

    // shifted task: every label moves to the next class
    let shifted: Vec<ImageSample> = data
        .iter()
        .map(|s| ImageSample {
            label: (s.label + 1) % 7,
            ..s.clone()
        })
        .collect();
    let frozen = evaluate(&model, &shifted).unwrap().top1_accuracy;
    let ft_cfg = TrainConfig {
        epochs: 40,
        ..cfg.clone()
    };
    let tuned = incremental_finetune(&model, &shifted, &ft_cfg).unwrap();
    for (name, p) in model.params.iter() {
        if !HEAD_PARAMS.contains(&name) {
            assert_eq!(&p.value, tuned.params.get(name).unwrap(), "{name} changed");
        }
    }
    assert_ne!(model.params.get("cls.w").unwrap(), tuned.params.get("cls.w").unwrap());
    let after = evaluate(&tuned, &shifted).unwrap().top1_accuracy;
    assert!(after >= frozen + 0.10, "frozen {frozen} tuned {after}");

    assert_eq!(incremental_finetune(&model, &[], &ft_cfg).unwrap(), model);
    let _ = model
        .forward(
            &shifted[0].pixels.clone().reshape(&[1, 64, 64, 3]).unwrap(),
            Mode::Infer,
            None,
        )
        .unwrap();
}
