//! Cross-entropy training with Adam, evaluation and head-only fine-tuning.

mod metrics;
mod optim;

pub use metrics::{auc_roc, column_means, round_to, ClassMetrics, MetricsReport};
pub use optim::{Adam, AdamConfig};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::{dropout_rng, Grads, QanaModel};
use crate::data::{augment, batch, sample_rng, AugmentConfig, ImageSample};
use crate::error::{QanaError, Result};
use crate::ops::{self, Mode};
use crate::tensor::{Real, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(QanaError::Config(format!("{} labels for a batch of {n}", labels.len())));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut loss = 0.0;
    let inv_n = T::lit(1.0 / n as f64);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(QanaError::Config(format!("label {y} out of range for {k} classes")));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let p = softmax(row);
        loss -= p[y].max(T::min_positive_value()).ln().as_f64();
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for c in 0..k {
            let t = if c == y { T::one() } else { T::zero() };
            g[c] = (p[c] - t) * inv_n;
        }
    }
    Ok((loss / n as f64, grad))
}

pub fn softmax<T: Real>(row: &[T]) -> Vec<T> {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Per-epoch augmentation; `None` trains on the samples as given.
    pub augment: Option<AugmentConfig>,
    /// Re-estimate BN running statistics over the training set after the
    /// last epoch (see [`refresh_bn_stats`]).
    pub refresh_bn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 10,
            seed: 0,
            augment: None,
            refresh_bn: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(QanaError::Config(format!(
                "learning rate must be >= 0, got {}",
                self.adam.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(QanaError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    /// Mean batch loss per epoch.
    pub loss: Vec<f64>,
    /// Training accuracy per epoch, measured on the fly in train mode.
    pub accuracy: Vec<f64>,
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch training. Batch order, dropout masks and augmentation are all
/// derived from `cfg.seed`, so two runs with the same inputs agree bitwise.
pub fn train(model: &mut QanaModel<f32>, samples: &[ImageSample], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(QanaError::EmptyBatch { op: "train" });
    }
    let mut adam = Adam::new(cfg.adam.clone());
    let mut history = History::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = model.config.num_classes;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let owned: Vec<ImageSample>;
            let refs: Vec<&ImageSample> = match &cfg.augment {
                Some(a) => {
                    owned = chunk
                        .iter()
                        .map(|&i| {
                            let stream = (epoch * samples.len() + i) as u64;
                            augment(&samples[i], a, &mut sample_rng(cfg.seed ^ a.seed, stream))
                        })
                        .collect();
                    owned.iter().collect()
                }
                None => chunk.iter().map(|&i| &samples[i]).collect(),
            };
            let (x, labels) = batch(&refs)?;
            let mut drng = dropout_rng(cfg.seed, step);
            let (logits, trace) = model.forward_trace(&x, Mode::Train, Some(&mut drng))?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(QanaError::Diverged {
                    epoch,
                    step: step as usize,
                    loss,
                });
            }
            let grads = model.backward(&trace, &grad)?;
            adam.step(&mut model.params, &grads, |_| true)?;
            model.apply_bn_stats(&trace)?;
            correct += logits
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            loss_sum += loss;
            batches += 1;
            step += 1;
            debug!("epoch {epoch} step {step} loss {loss:.4}");
        }
        let mean = loss_sum / batches as f64;
        let acc = correct as f64 / samples.len() as f64;
        info!("epoch {epoch}: loss {mean:.4}, train accuracy {acc:.3}");
        history.loss.push(mean);
        history.accuracy.push(acc);
    }
    if cfg.refresh_bn && cfg.epochs > 0 {
        refresh_bn_stats(model, samples, cfg.batch_size)?;
    }
    Ok(history)
}

/// Replace every BN layer's running statistics by the pooled batch
/// statistics of a dropout-free train-mode pass over `samples`.
///
/// The moving averages lag behind the weights and, with dropout in front
/// of the attention BN, are measured on a different activation scale than
/// inference sees; this pass removes both effects.
pub fn refresh_bn_stats(model: &mut QanaModel<f32>, samples: &[ImageSample], batch_size: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(QanaError::EmptyBatch { op: "refresh_bn_stats" });
    }
    let mut probe = model.clone();
    probe.config.dropout = 0.0;
    // per BN prefix: element count, Σ n·mean, Σ n·(var + mean²)
    let mut acc: Vec<(String, f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for chunk in samples.chunks(batch_size.max(2)) {
        let refs: Vec<&ImageSample> = chunk.iter().collect();
        let (x, _) = batch(&refs)?;
        let (_, trace) = probe.forward_trace(&x, Mode::Train, None)?;
        for (i, (prefix, st)) in trace.bn_stats.iter().enumerate() {
            if acc.len() <= i {
                let c = st.mean.len();
                acc.push((prefix.clone(), 0.0, vec![0.0; c], vec![0.0; c]));
            }
            let e = &mut acc[i];
            let n = st.count as f64;
            e.1 += n;
            for ((s1, s2), (&m, &v)) in e.2.iter_mut().zip(e.3.iter_mut()).zip(st.mean.iter().zip(&st.var)) {
                let (m, v) = (m as f64, v as f64);
                *s1 += n * m;
                *s2 += n * (v + m * m);
            }
        }
    }
    for (prefix, n, s1, s2) in acc {
        let mean: Vec<f32> = s1.iter().map(|s| (s / n) as f32).collect();
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let var: Vec<f32> = s1
            .iter()
            .zip(&s2)
            .map(|(a, b)| (((b / n) - (a / n).powi(2)).max(0.0) * unbias) as f32)
            .collect();
        let c = mean.len();
        model
            .params
            .set(&format!("{prefix}.mean"), Tensor::new(vec![c], mean)?)?;
        model.params.set(&format!("{prefix}.var"), Tensor::new(vec![c], var)?)?;
    }
    Ok(())
}

/// Infer-mode logits for every sample, in chunks of `chunk`.
pub fn predict_logits<T: Real>(model: &QanaModel<T>, samples: &[ImageSample], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for part in samples.chunks(chunk.max(1)) {
        let refs: Vec<&ImageSample> = part.iter().collect();
        let (x, _) = batch(&refs)?;
        let y = model.forward(&x.cast(), Mode::Infer, None)?;
        let k = y.shape()[1];
        out.extend(y.data().chunks_exact(k).map(|r| r.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(out)
}

/// Metrics from per-sample class scores (logits or probabilities).
pub fn report_from_scores(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<MetricsReport> {
    let preds: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    MetricsReport::new(labels, &preds, Some(scores), num_classes)
}

pub fn evaluate<T: Real>(model: &QanaModel<T>, samples: &[ImageSample]) -> Result<MetricsReport> {
    let logits = predict_logits(model, samples, 32)?;
    let probs: Vec<Vec<f64>> = logits.iter().map(|r| softmax(r)).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    report_from_scores(&probs, &labels, model.config.num_classes)
}

pub const HEAD_PARAMS: [&str; 2] = ["cls.w", "cls.b"];

/// Retrain only the output projection on `samples`; every other tensor is
/// left bitwise untouched. Features are computed once in infer mode.
pub fn incremental_finetune(
    model: &QanaModel<f32>,
    samples: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<QanaModel<f32>> {
    cfg.validate()?;
    let mut out = model.clone();
    if samples.is_empty() || cfg.epochs == 0 {
        return Ok(out);
    }
    let mut feats = Vec::with_capacity(samples.len());
    for part in samples.chunks(32) {
        let refs: Vec<&ImageSample> = part.iter().collect();
        let (x, _) = batch(&refs)?;
        let f = model.features(&x)?;
        let d = f.shape()[1];
        feats.extend(f.data().chunks_exact(d).map(|r| r.to_vec()));
    }
    let d = feats[0].len();
    let mut adam = Adam::new(cfg.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = Tensor::new(
                vec![chunk.len(), d],
                chunk.iter().flat_map(|&i| feats[i].iter().copied()).collect(),
            )?;
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].label).collect();
            let w = out.params.get("cls.w")?;
            let logits = ops::dense(&x, w, Some(out.params.get("cls.b")?))?;
            let (loss, g) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(QanaError::Diverged {
                    epoch: 0,
                    step: 0,
                    loss,
                });
            }
            let dg = ops::dense_backward(&x, w, &g)?;
            let mut grads = Grads::new();
            grads.add("cls.w", dg.weight)?;
            grads.add("cls.b", dg.bias)?;
            adam.step(&mut out.params, &grads, |n| HEAD_PARAMS.contains(&n))?;
        }
    }
    Ok(out)
}
