//! One function per subcommand. Each reads only the paths named in its
//! configuration, writes into `out`, and echoes the effective configuration
//! there as `config.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::Serialize;

use qana_core::arch::{QanaConfig, QanaModel};
use qana_core::convert::{convert, cost_report, fold_batchnorm, load_snn, save_snn, verify_conversion, VerifyReport};
use qana_core::data::{
    class_counts, generate_synthetic, load_dataset, load_image, preprocess, read_split, select_split, smote_oversample,
    stratified_split, write_dataset, write_samples, write_split, AugmentConfig, ImageFormat, ImageSample,
    QualityConfig, SmoteConfig, Split, SplitEntry, SynthConfig, SPLIT_FILE,
};
use qana_core::snn::{
    calibrate_thresholds, matched_alpha, prediction_from, run, threshold_errors, write_trace_csv, ClassThresholds,
    DecodeConfig, Encoding, PredictConfig, Prediction, SimOptions, SpikeStats, SpikingNetworkSpec,
};
use qana_core::train::{predict_logits, report_from_scores, softmax, train, AdamConfig, MetricsReport, TrainConfig};

use crate::config::{stage_seed, RunConfig};
use crate::model_file::{load_model, save_model, ModelFile};
use crate::report::{text_table, write_json};

pub const CONFIG_ECHO: &str = "config.txt";
pub const MODEL_FILE: &str = "model.qana";
pub const SNN_FILE: &str = "network.qsnn";
pub const THRESHOLDS_FILE: &str = "thresholds.json";

/// Create `out` (refusing to write into the dataset being read) and echo
/// the configuration.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    let data = cfg.get("data");
    if !data.is_empty() && Path::new(data).exists() && out.exists() {
        let (a, b) = (fs::canonicalize(data)?, fs::canonicalize(&out)?);
        ensure!(a != b, "output directory {} is the input dataset", out.display());
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_ECHO), cfg.render())?;
    Ok(out)
}

fn num_classes(cfg: &RunConfig) -> usize {
    cfg.usize("synth.classes")
}

fn split_of(name: &str) -> Option<Split> {
    match name {
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "test" => Some(Split::Test),
        _ => None,
    }
}

/// Every image of the dataset at `data` that passes the quality filter.
fn load_all(cfg: &RunConfig, quality: &QualityConfig) -> Result<Vec<ImageSample>> {
    let dir = cfg.path("data")?;
    ensure!(dir.is_dir(), "dataset directory {} does not exist", dir.display());
    Ok(load_dataset(&dir, quality, num_classes(cfg))?.samples)
}

/// Samples of one split of a preprocessed dataset. Without a split
/// manifest the whole dataset is used.
pub fn load_split(cfg: &RunConfig, which: &str) -> Result<Vec<ImageSample>> {
    let all = load_all(
        cfg,
        &QualityConfig {
            min_side: 0,
            min_variance: 0.0,
            max_saturated_fraction: 1.0,
        },
    )?;
    let dir = cfg.path("data")?;
    match split_of(which) {
        Some(s) if dir.join(SPLIT_FILE).exists() => Ok(select_split(&all, &read_split(&dir)?, s)),
        _ => Ok(all),
    }
}

/// `n` samples spread evenly over `samples` (all when `n` is 0 or larger).
pub fn spread(samples: &[ImageSample], n: usize) -> Vec<ImageSample> {
    if n == 0 || n >= samples.len() {
        return samples.to_vec();
    }
    (0..n).map(|i| samples[i * samples.len() / n].clone()).collect()
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let sc = SynthConfig {
        num_classes: num_classes(cfg),
        majority: cfg.usize("synth.majority"),
        imbalance: cfg.float("synth.imbalance"),
        seed: stage_seed(cfg.int("seed"), "synth"),
        ..SynthConfig::default()
    };
    ensure!(
        sc.num_classes >= 2 && sc.majority >= 1,
        "synth needs at least 2 classes and 1 image per class"
    );
    ensure!(sc.imbalance >= 1.0, "synth.imbalance must be >= 1");
    let items = generate_synthetic(&sc);
    let format = if cfg.get("synth.format") == "png" {
        ImageFormat::Png
    } else {
        ImageFormat::Raw
    };
    write_dataset(&out, &items, format)?;
    let mut counts = vec![0usize; sc.num_classes];
    for (_, _, y) in &items {
        counts[*y] += 1;
    }
    let rows: Vec<Vec<String>> = counts
        .iter()
        .enumerate()
        .map(|(c, n)| vec![c.to_string(), n.to_string()])
        .collect();
    Ok(format!(
        "wrote {} images to {}\n{}",
        items.len(),
        out.display(),
        text_table(&["class", "images"], &rows)
    ))
}

#[derive(Serialize)]
struct PreprocessReport {
    kept: usize,
    rejected: Vec<(String, String)>,
    split_counts: [usize; 3],
    train_counts_before: Vec<usize>,
    train_counts_after: Vec<usize>,
    synthetic: usize,
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let k = num_classes(cfg);
    let quality = QualityConfig {
        min_side: cfg.usize("quality.min_side"),
        min_variance: cfg.float("quality.min_variance"),
        max_saturated_fraction: cfg.float("quality.max_saturated"),
    };
    let dir = cfg.path("data")?;
    ensure!(dir.is_dir(), "dataset directory {} does not exist", dir.display());
    let loaded = load_dataset(&dir, &quality, k)?;
    let samples = loaded.samples;
    let (val, test) = (cfg.float("split.val"), cfg.float("split.test"));
    ensure!(
        val >= 0.0 && test >= 0.0 && val + test < 1.0,
        "split fractions must be >= 0 and sum below 1"
    );
    let mut entries = stratified_split(&samples, k, val, test, stage_seed(cfg.int("seed"), "split"));
    let train_set = select_split(&samples, &entries, Split::Train);
    let before = class_counts(&train_set, k);
    let mut written = samples.clone();
    let mut synthetic = 0;
    let mut after = before.clone();
    if cfg.flag("smote.enabled") {
        let sm = SmoteConfig {
            k: cfg.usize("smote.k"),
            seed: stage_seed(cfg.int("seed"), "smote"),
            ..SmoteConfig::default()
        };
        let over = smote_oversample(&train_set, k, &sm)?;
        for (i, s) in over.samples[train_set.len()..].iter().enumerate() {
            let id = format!("smote{i:05}");
            written.push(ImageSample {
                source_id: id.clone(),
                ..s.clone()
            });
            entries.push(SplitEntry {
                source_id: id,
                split: Split::Train,
            });
            synthetic += 1;
        }
        after = class_counts(&over.samples, k);
    }
    write_samples(&out, &written)?;
    write_split(&out, &entries)?;
    let count = |s: Split| entries.iter().filter(|e| e.split == s).count();
    let report = PreprocessReport {
        kept: samples.len(),
        rejected: loaded
            .rejected
            .iter()
            .map(|(id, r)| (id.clone(), r.to_string()))
            .collect(),
        split_counts: [count(Split::Train), count(Split::Val), count(Split::Test)],
        train_counts_before: before.clone(),
        train_counts_after: after.clone(),
        synthetic,
    };
    write_json(&out.join("preprocess.json"), &report)?;
    let rows: Vec<Vec<String>> = (0..k)
        .map(|c| vec![c.to_string(), before[c].to_string(), after[c].to_string()])
        .collect();
    Ok(format!(
        "kept {} images, rejected {}, added {synthetic} synthetic training images\n{}",
        report.kept,
        report.rejected.len(),
        text_table(&["class", "train", "balanced"], &rows)
    ))
}

fn arch_config(cfg: &RunConfig) -> QanaConfig {
    let base = if cfg.get("arch") == "full" {
        QanaConfig::default()
    } else {
        QanaConfig::compact()
    };
    QanaConfig {
        num_classes: num_classes(cfg),
        ..base
    }
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    let seed = cfg.int("seed");
    TrainConfig {
        adam: AdamConfig {
            lr: cfg.float("train.lr"),
            ..AdamConfig::default()
        },
        batch_size: cfg.usize("train.batch"),
        epochs: cfg.usize("train.epochs"),
        seed: stage_seed(seed, "train"),
        augment: cfg.flag("train.augment").then(|| AugmentConfig {
            seed: stage_seed(seed, "augment"),
            ..AugmentConfig::default()
        }),
        refresh_bn: true,
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let samples = load_split(cfg, "train")?;
    ensure!(!samples.is_empty(), "no training images found");
    let mut model = QanaModel::<f32>::new(arch_config(cfg), stage_seed(cfg.int("seed"), "init"))?;
    let tc = train_config(cfg);
    info!("training on {} images for {} epochs", samples.len(), tc.epochs);
    let hist = train(&mut model, &samples, &tc)?;
    let mut file = ModelFile::new(model);
    let last = |v: &[f64]| v.last().map_or(String::new(), |x| format!("{x:.6}"));
    file.metadata = vec![
        ("epochs".into(), tc.epochs.to_string()),
        ("batch_size".into(), tc.batch_size.to_string()),
        ("learning_rate".into(), tc.adam.lr.to_string()),
        ("train_images".into(), samples.len().to_string()),
        ("seed".into(), cfg.int("seed").to_string()),
        ("final_loss".into(), last(&hist.loss)),
        ("final_train_accuracy".into(), last(&hist.accuracy)),
    ];
    save_model(&file, &out.join(MODEL_FILE))?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for (e, (l, a)) in hist.loss.iter().zip(&hist.accuracy).enumerate() {
        csv.push_str(&format!("{},{l:.6},{a:.6}\n", e + 1));
    }
    fs::write(out.join("history.csv"), csv)?;
    Ok(format!(
        "trained {} epochs on {} images: loss {}, train accuracy {}\nmodel written to {}",
        tc.epochs,
        samples.len(),
        last(&hist.loss),
        last(&hist.accuracy),
        out.join(MODEL_FILE).display()
    ))
}

/// Anything that scores a batch of images, one row of class scores each.
pub trait Scorer {
    fn scores(&self, samples: &[ImageSample]) -> Result<Vec<Vec<f64>>>;
    fn num_classes(&self) -> usize;
}

impl Scorer for QanaModel<f32> {
    fn scores(&self, samples: &[ImageSample]) -> Result<Vec<Vec<f64>>> {
        Ok(predict_logits(self, samples, 32)?.iter().map(|r| softmax(r)).collect())
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

pub fn evaluate_scorer(scorer: &dyn Scorer, samples: &[ImageSample]) -> Result<MetricsReport> {
    ensure!(!samples.is_empty(), "no images to evaluate");
    let scores = scorer.scores(samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(report_from_scores(&scores, &labels, scorer.num_classes())?)
}

/// Write `metrics.csv`, `metrics.json` and `metrics.txt`; returns the table.
pub fn write_metrics(out: &Path, report: &MetricsReport) -> Result<String> {
    let table = report.to_table(None);
    fs::write(out.join("metrics.csv"), report.to_csv())?;
    write_json(&out.join("metrics.json"), report)?;
    fs::write(out.join("metrics.txt"), &table)?;
    Ok(table)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let file = load_model(&cfg.path("model")?)?;
    let samples = load_split(cfg, cfg.get("split"))?;
    let report = evaluate_scorer(&file.model, &samples)?;
    write_metrics(&out, &report)
}

pub fn cmd_convert(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let file = load_model(&cfg.path("model")?)?;
    let train_set = load_split(cfg, "train")?;
    let n = cfg.usize("convert.calibration");
    let calib = spread(&train_set, n);
    ensure!(!calib.is_empty(), "no calibration images");
    let conv = convert(&file.model, &calib)?;
    save_snn(&conv.spec, &out.join(SNN_FILE))?;
    let mut w = csv::Writer::from_path(out.join("mapping.csv"))?;
    w.write_record(["layer", "spiking equivalent"])?;
    for m in &conv.spec.mapping {
        w.write_record([&m.source, &m.target])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("calibration.csv"))?;
    w.write_record(["population", "scale", "zero_point"])?;
    for (name, q) in &conv.calibration.entries {
        w.write_record([name.clone(), format!("{:e}", q.scale), q.zero_point.to_string()])?;
    }
    w.flush()?;
    let cost = cost_report(&conv.spec, &calib[..calib.len().min(4)], cfg.usize("T"))?;
    write_json(&out.join("cost.json"), &cost)?;
    let rows = vec![
        vec!["neurons".into(), cost.neurons.to_string()],
        vec!["synapses".into(), cost.synapses.to_string()],
        vec!["weight bytes".into(), cost.weight_bytes.to_string()],
        vec!["gate parameters".into(), cost.gate_parameters.to_string()],
        vec![
            "est. events / image".into(),
            cost.estimated_events_per_inference
                .map_or("-".into(), |v| format!("{v:.0}")),
        ],
    ];
    Ok(format!(
        "converted with {} calibration images; network written to {}\n{}",
        calib.len(),
        out.join(SNN_FILE).display(),
        text_table(&["", "value"], &rows)
    ))
}

pub fn verify_rows(reports: &[VerifyReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            vec![
                r.window.to_string(),
                r.samples.to_string(),
                format!("{:.4}", r.argmax_agreement),
                format!("{:.4}", r.float_agreement),
                format!("{:.4}", r.snn_accuracy),
                format!("{:.4}", r.mean_logit_deviation),
                format!("{:.4}", r.max_logit_deviation),
            ]
        })
        .collect()
}

pub const VERIFY_HEADERS: [&str; 7] = [
    "T",
    "samples",
    "agreement",
    "float agreement",
    "snn accuracy",
    "mean |dz|",
    "max |dz|",
];

pub fn cmd_verify(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let file = load_model(&cfg.path("model")?)?;
    let spec = load_snn(&cfg.path("snn")?)?;
    let probes = spread(&load_split(cfg, cfg.get("split"))?, cfg.usize("verify.samples"));
    ensure!(!probes.is_empty(), "no probe images");
    let folded = fold_batchnorm(&file.model)?;
    let mut windows = cfg.list("verify.windows");
    if windows.is_empty() {
        windows.push(cfg.usize("T"));
    }
    let mut reports = Vec::new();
    for &t in &windows {
        info!("verifying at T = {t} on {} images", probes.len());
        reports.push(verify_conversion(&folded, &spec, &probes, t)?);
    }
    write_json(&out.join("verify.json"), &reports)?;
    let rows = verify_rows(&reports);
    let mut w = csv::Writer::from_path(out.join("verify.csv"))?;
    w.write_record([
        "window",
        "samples",
        "argmax_agreement",
        "float_agreement",
        "snn_accuracy",
        "mean_logit_deviation",
        "max_logit_deviation",
    ])?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    let table = text_table(&VERIFY_HEADERS, &rows);
    fs::write(out.join("verify.txt"), &table)?;
    Ok(table)
}

pub fn predict_config(cfg: &RunConfig, spec: &SpikingNetworkSpec) -> Result<PredictConfig> {
    let t = cfg.usize("T");
    ensure!(t >= 1, "T must be >= 1");
    let alpha = match cfg.get("decode.alpha") {
        "matched" => matched_alpha(spec, t),
        v => v
            .parse::<f64>()
            .with_context(|| format!("decode.alpha must be a number or `matched`, got `{v}`"))?,
    };
    let decode = DecodeConfig {
        alpha,
        beta: cfg.float("decode.beta"),
    };
    decode.validate()?;
    let encoding = match cfg.get("encoding") {
        "poisson" => Encoding::Poisson {
            seed: stage_seed(cfg.int("seed"), "encode"),
        },
        _ => Encoding::Regular,
    };
    Ok(PredictConfig {
        window: t,
        encoding,
        decode,
    })
}

fn for_sample(pc: &PredictConfig, index: usize) -> PredictConfig {
    match pc.encoding {
        Encoding::Poisson { seed } => PredictConfig {
            encoding: Encoding::Poisson {
                seed: seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            },
            ..pc.clone()
        },
        Encoding::Regular => pc.clone(),
    }
}

fn simulate_sample(
    spec: &SpikingNetworkSpec,
    s: &ImageSample,
    pc: &PredictConfig,
    thresholds: Option<&ClassThresholds>,
    trace: bool,
) -> Result<(Prediction, Vec<qana_core::snn::TraceEvent>)> {
    let res = run(spec, s.pixels.data(), pc, &SimOptions { trace })?;
    let p = prediction_from(spec, &res, pc, thresholds)?;
    Ok((p, res.trace))
}

#[derive(Serialize)]
struct ThresholdRow {
    class: usize,
    theta: u64,
    errors: usize,
    members: usize,
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let spec = load_snn(&cfg.path("snn")?)?;
    let mut samples = load_split(cfg, cfg.get("calibrate.split"))?;
    if samples.is_empty() {
        samples = load_split(cfg, "train")?;
    }
    ensure!(!samples.is_empty(), "no images to calibrate thresholds on");
    let pc = predict_config(cfg, &spec)?;
    let mut totals = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        totals.push(simulate_sample(&spec, s, &for_sample(&pc, i), None, false)?.0.totals);
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let k = spec.num_classes();
    let th = calibrate_thresholds(&totals, &labels, k)?;
    write_json(&out.join(THRESHOLDS_FILE), &th)?;
    let rows: Vec<ThresholdRow> = (0..k)
        .map(|c| {
            let counts: Vec<u64> = totals.iter().map(|t| t[c]).collect();
            let member: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            ThresholdRow {
                class: c,
                theta: th.theta[c],
                errors: threshold_errors(&counts, &member, th.theta[c]),
                members: member.iter().filter(|&&m| m).count(),
            }
        })
        .collect();
    write_json(&out.join("threshold_report.json"), &rows)?;
    let table_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.class.to_string(),
                r.theta.to_string(),
                r.errors.to_string(),
                r.members.to_string(),
            ]
        })
        .collect();
    Ok(format!(
        "fitted on {} images at T = {}\n{}",
        samples.len(),
        pc.window,
        text_table(&["class", "threshold", "errors", "members"], &table_rows)
    ))
}

#[derive(Serialize)]
struct InferRecord {
    source_id: String,
    label: Option<usize>,
    class: usize,
    probs: Vec<f64>,
    totals: Vec<u64>,
    stats: SpikeStats,
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<String> {
    let out = prepare_out(cfg)?;
    let spec = load_snn(&cfg.path("snn")?)?;
    let thresholds: Option<ClassThresholds> = match cfg.get("thresholds") {
        "" => None,
        p => Some(
            serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading thresholds {p}"))?)
                .with_context(|| format!("parsing thresholds {p}"))?,
        ),
    };
    if let Some(th) = &thresholds {
        ensure!(
            th.theta.len() == spec.num_classes(),
            "thresholds cover {} classes, network has {}",
            th.theta.len(),
            spec.num_classes()
        );
    }
    let (samples, labelled) = match cfg.get("infer.image") {
        "" => {
            let s = load_split(cfg, cfg.get("split"))?;
            let limit = cfg.usize("infer.limit");
            (
                if limit == 0 {
                    s
                } else {
                    s.into_iter().take(limit).collect()
                },
                true,
            )
        }
        p => {
            let img = load_image(Path::new(p))?;
            (vec![preprocess(&img, 0, p)?], false)
        }
    };
    if samples.is_empty() {
        bail!("no images to classify");
    }
    let pc = predict_config(cfg, &spec)?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let trace = cfg.flag("infer.trace") && i == 0;
        let (p, events) = simulate_sample(&spec, s, &for_sample(&pc, i), thresholds.as_ref(), trace)?;
        if trace {
            let f = fs::File::create(out.join("trace.csv"))?;
            write_trace_csv(&spec, &events, std::io::BufWriter::new(f))?;
        }
        records.push(InferRecord {
            source_id: s.source_id.clone(),
            label: labelled.then_some(s.label),
            class: p.class,
            probs: p.probs,
            totals: p.totals,
            stats: p.stats,
        });
    }
    let k = spec.num_classes();
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    let mut header = vec!["source_id".to_string(), "label".into(), "class".into(), "events".into()];
    header.extend((0..k).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for r in &records {
        let mut row = vec![
            r.source_id.clone(),
            r.label.map_or(String::new(), |l| l.to_string()),
            r.class.to_string(),
            r.stats.total_events.to_string(),
        ];
        row.extend(r.probs.iter().map(|p| format!("{p:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    write_json(&out.join("predictions.json"), &records)?;
    let mut summary = if records.len() == 1 {
        format!("{}: class {}", records[0].source_id, records[0].class)
    } else {
        format!("classified {} images", records.len())
    };
    if labelled {
        let correct = records.iter().filter(|r| r.label == Some(r.class)).count();
        summary.push_str(&format!(", accuracy {:.4}", correct as f64 / records.len() as f64));
    }
    let events: u64 = records.iter().map(|r| r.stats.total_events).sum();
    summary.push_str(&format!(
        ", {:.0} spike events per image at T = {}",
        events as f64 / records.len() as f64,
        pc.window
    ));
    Ok(summary)
}
