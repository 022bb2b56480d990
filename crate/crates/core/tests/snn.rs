use qana_core::convert::QuantParams;
use qana_core::error::QanaError;
use qana_core::snn::*;
use qana_testkit::snn::{dense_simulate, random_input, random_network};
use qana_testkit::{rng, stats};
use rand::Rng;

fn to_trains(input: &[Vec<u8>]) -> SpikeTrains {
    SpikeTrains {
        neurons: input.first().map_or(0, |r| r.len()),
        steps: input
            .iter()
            .map(|row| (0..row.len() as u32).filter(|&j| row[j as usize] == 1).collect())
            .collect(),
    }
}

/// input[1,1,n] -> IF[1,1,n], channelwise weight 1, threshold one unit charge.
fn relay(n: usize, bias: i32) -> SpikingNetworkSpec {
    let q = QuantParams::unsigned(1.0);
    SpikingNetworkSpec {
        populations: vec![
            Population {
                name: "input".into(),
                shape: [1, 1, n],
                quant: q,
                kind: PopulationKind::Input,
            },
            Population {
                name: "out".into(),
                shape: [1, 1, n],
                quant: q,
                kind: PopulationKind::Integrate(IfLayer {
                    threshold: vec![UNIT_GAIN as i32; n],
                    initial: vec![0; n],
                    bias: vec![bias; n],
                    cap: None,
                    projections: vec![Projection {
                        source: 0,
                        kind: ProjectionKind::Channelwise,
                        weights: vec![1; n],
                        gate: None,
                    }],
                }),
            },
        ],
        gates: vec![],
        mapping: vec![],
        output: 1,
    }
}

#[test]
fn regular_code_examples() {
    let tr = rate_encode(&[0.0, 1.0, 0.5, 0.25], 8).unwrap();
    assert_eq!(tr.counts(), vec![0, 8, 4, 2]);
    let fires: Vec<bool> = tr.steps.iter().map(|s| s.contains(&2)).collect();
    assert_eq!(fires, [false, true, false, true, false, true, false, true]);
    let q = rate_encode(&[0.25], 4).unwrap();
    assert_eq!(q.steps, vec![vec![], vec![], vec![], vec![0]]);
}

#[test]
fn regular_code_count_is_floor() {
    let mut r = rng(3);
    for _ in 0..2000 {
        let a: f32 = r.gen_range(0.0..=1.0);
        let t = r.gen_range(1..300usize);
        let c = rate_encode(&[a], t).unwrap().counts()[0] as u64;
        assert_eq!(c, (a as f64 * t as f64).floor() as u64, "a={a} t={t}");
    }
}

#[test]
fn encoder_rejects_bad_input() {
    assert!(matches!(rate_encode(&[1.5], 4), Err(QanaError::Config(_))));
    assert!(matches!(rate_encode(&[-0.1], 4), Err(QanaError::Config(_))));
    assert!(matches!(rate_encode(&[0.5], 0), Err(QanaError::Config(_))));
}

#[test]
fn poisson_code_is_seeded() {
    let v = vec![0.3f32; 50];
    let a = encode(&v, 200, Encoding::Poisson { seed: 9 }).unwrap();
    let b = encode(&v, 200, Encoding::Poisson { seed: 9 }).unwrap();
    let c = encode(&v, 200, Encoding::Poisson { seed: 10 }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let rate = a.total() as f64 / (50.0 * 200.0);
    assert!((rate - 0.3).abs() < 0.03, "{rate}");
}

#[test]
fn relay_passes_every_spike_through() {
    let mut r = rng(5);
    let input = random_input(&mut r, 6, 40);
    let spec = relay(6, 0);
    let res = simulate(&spec, &to_trains(&input), &SimOptions::default()).unwrap();
    let want: Vec<u32> = (0..6).map(|j| input.iter().map(|row| row[j] as u32).sum()).collect();
    assert_eq!(res.counts[1], want);
    for (t, row) in input.iter().enumerate() {
        let got: Vec<u32> = res.record.per_step[t].clone();
        let exp: Vec<u32> = row.iter().map(|&v| v as u32).collect();
        assert_eq!(got, exp, "step {}", t + 1);
    }
}

#[test]
fn silent_input_gives_silent_output() {
    let spec = relay(4, 0);
    let res = simulate(&spec, &rate_encode(&[0.0; 4], 32).unwrap(), &SimOptions::default()).unwrap();
    assert_eq!(res.total_events(), 0);
}

#[test]
fn event_driven_simulation_matches_dense_oracle() {
    let mut r = rng(2024);
    let mut spiking = 0;
    for case in 0..1000 {
        let spec = random_network(&mut r, 100);
        let t = r.gen_range(1..24);
        let input = random_input(&mut r, spec.input().len(), t);
        let want = dense_simulate(&spec, &input);
        let got = simulate(&spec, &to_trains(&input), &SimOptions { trace: true }).unwrap();
        assert_eq!(got.counts, want.counts, "case {case}");
        let mut steps: Vec<Vec<Vec<u8>>> = spec.populations.iter().map(|p| vec![vec![0u8; p.len()]; t]).collect();
        for e in &got.trace {
            steps[e.layer as usize][e.step as usize - 1][e.neuron as usize] = 1;
        }
        assert_eq!(steps, want.spikes, "case {case}");
        spiking += (got.total_events() > got.events[0]) as usize;
    }
    assert!(spiking > 500, "only {spiking} networks produced internal spikes");
}

#[test]
fn trace_csv_lists_every_spike() {
    let spec = relay(2, 0);
    let res = simulate(
        &spec,
        &rate_encode(&[1.0, 0.5], 4).unwrap(),
        &SimOptions { trace: true },
    )
    .unwrap();
    let mut out = Vec::new();
    write_trace_csv(&spec, &res.trace, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,layer,neuron,event");
    assert_eq!(lines.len() - 1, res.total_events() as usize);
    assert!(lines.contains(&"2,out,1,spike"));
    assert!(lines.contains(&"1,input,0,spike"));
}

#[test]
fn headroom_check_flags_possible_overflow() {
    let spec = relay(1, i32::MAX);
    assert!(check_headroom(&spec, 1000).is_ok());
    let err = check_headroom(&spec, u32::MAX as usize * 4).unwrap_err();
    assert!(matches!(err, QanaError::Overflow { population: 1, .. }), "{err}");
}

#[test]
fn softmax_examples() {
    let p = softmax_f64(&[0.0; 7]);
    assert!(p.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-12));
    let p = softmax_f64(&[3.0, 1.0]);
    assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
    let big = softmax_f64(&[1000.0, 999.0]);
    assert!(big.iter().all(|v| v.is_finite()));
}

#[test]
fn decoded_probabilities_properties() {
    let mut r = rng(17);
    for _ in 0..500 {
        let k = r.gen_range(2..9);
        let s: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..10.0)).collect();
        let alpha = r.gen_range(0.05..2.0);
        let p = probs_from_sums(&s, alpha);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = s.iter().map(|v| v + 13.0).collect();
        for (a, b) in p.iter().zip(probs_from_sums(&shifted, alpha)) {
            assert!((a - b).abs() < 1e-12);
        }
        let j = r.gen_range(0..k);
        let mut up = s.clone();
        up[j] += 1.0;
        assert!(probs_from_sums(&up, alpha)[j] > p[j]);
        assert_eq!(argmax(&probs_from_sums(&s, alpha * 7.0)), argmax(&p));
    }
}

#[test]
fn temporal_weights_favour_late_spikes() {
    let rec = SpikeRecord {
        per_step: vec![vec![1, 0], vec![0, 0], vec![0, 1]],
        totals: vec![1, 1],
    };
    let flat = weighted_sums(&rec, &DecodeConfig::default());
    assert_eq!(flat, vec![1.0, 1.0]);
    let decayed = weighted_sums(&rec, &DecodeConfig { alpha: 1.0, beta: 0.5 });
    assert!((decayed[0] - (-1.0f64).exp()).abs() < 1e-12);
    assert_eq!(decayed[1], 1.0);
    assert!(DecodeConfig { alpha: 0.0, beta: 0.0 }.validate().is_err());
    assert!(DecodeConfig { alpha: 1.0, beta: -1.0 }.validate().is_err());
}

#[test]
fn threshold_calibration_example() {
    let totals = vec![vec![5], vec![7], vec![2]];
    let th = calibrate_thresholds(&totals, &[0, 0, 1], 2).unwrap_err();
    assert!(matches!(th, QanaError::Config(_)));
    let totals = vec![vec![5, 0], vec![7, 0], vec![2, 0]];
    let th = calibrate_thresholds(&totals, &[0, 0, 1], 2).unwrap();
    assert_eq!(th.theta[0], 2);
    let all = vec![vec![4u64], vec![9], vec![6]];
    let th = calibrate_thresholds(&all, &[0, 0, 0], 1).unwrap();
    assert_eq!(th.theta[0], 0);
}

#[test]
fn threshold_calibration_is_optimal() {
    let mut r = rng(99);
    for _ in 0..100 {
        let n = r.gen_range(1..40);
        let k = r.gen_range(1..5);
        let totals: Vec<Vec<u64>> = (0..n).map(|_| (0..k).map(|_| r.gen_range(0..30)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let th = calibrate_thresholds(&totals, &labels, k).unwrap();
        for c in 0..k {
            let counts: Vec<u64> = totals.iter().map(|t| t[c]).collect();
            let member: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            let got = stats::threshold_errors(&counts, &member, th.theta[c]);
            assert_eq!(got, stats::best_threshold_errors(&counts, &member));
            assert_eq!(got, threshold_errors(&counts, &member, th.theta[c]));
            let smaller = (0..th.theta[c]).all(|s| stats::threshold_errors(&counts, &member, s) > got);
            assert!(smaller, "ties must resolve to the smallest threshold");
        }
    }
}

#[test]
fn thresholded_argmax_rules() {
    let probs = [0.5, 0.3, 0.2];
    let totals = [10u64, 6, 4];
    let zero = ClassThresholds { theta: vec![0, 0, 0] };
    assert_eq!(thresholded_argmax(&probs, &totals, &zero), argmax(&probs));
    let block_top = ClassThresholds { theta: vec![10, 0, 0] };
    assert_eq!(thresholded_argmax(&probs, &totals, &block_top), 1);
    let none = ClassThresholds {
        theta: vec![99, 99, 99],
    };
    assert_eq!(thresholded_argmax(&probs, &totals, &none), 0);
}

#[test]
fn prediction_is_deterministic_and_threshold_aware() {
    let mut r = rng(41);
    let spec = relay(3, 0);
    let px: Vec<f32> = (0..3).map(|_| r.gen_range(0.0..1.0)).collect();
    let cfg = PredictConfig {
        window: 50,
        ..PredictConfig::default()
    };
    let a = predict(&spec, &px, &cfg, None).unwrap();
    let b = predict(&spec, &px, &cfg, None).unwrap();
    assert_eq!(a.probs, b.probs);
    assert_eq!(a.totals, b.totals);
    let zero = ClassThresholds { theta: vec![0; 3] };
    let z = predict(&spec, &px, &cfg, Some(&zero)).unwrap();
    assert_eq!(z.class, a.class);
    let mut theta = vec![0; 3];
    theta[a.class] = a.totals[a.class];
    let second = predict(&spec, &px, &cfg, Some(&ClassThresholds { theta })).unwrap();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| a.probs[j].partial_cmp(&a.probs[i]).unwrap());
    assert_eq!(second.class, order[1]);
    assert_eq!(
        a.stats.total_events,
        a.stats.per_layer.iter().map(|l| l.events).sum::<u64>()
    );
}
