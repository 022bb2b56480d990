use serde::{Deserialize, Serialize};

use super::sim::SpikeRecord;
use crate::error::{QanaError, Result};

/// `p̂_c = softmax_c(α·Σ_t w_t·S_c(t))` with `w_t = exp(−β(T−t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub alpha: f64,
    /// Temporal decay; 0 gives uniform weights.
    pub beta: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(QanaError::Config(format!(
                "decode needs alpha > 0 and beta >= 0, got alpha {} beta {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// `w_t` for `t = 1..=T`.
    pub fn weights(&self, t: usize) -> Vec<f64> {
        (1..=t).map(|s| (-self.beta * (t - s) as f64).exp()).collect()
    }
}

/// `Σ_t w_t·S_c(t)` per class.
pub fn weighted_sums(record: &SpikeRecord, cfg: &DecodeConfig) -> Vec<f64> {
    let k = record.totals.len();
    let w = cfg.weights(record.window());
    let mut out = vec![0.0; k];
    for (row, wt) in record.per_step.iter().zip(&w) {
        for (o, &s) in out.iter_mut().zip(row) {
            *o += wt * s as f64;
        }
    }
    out
}

pub fn softmax_f64(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn probs_from_sums(sums: &[f64], alpha: f64) -> Vec<f64> {
    let z: Vec<f64> = sums.iter().map(|s| alpha * s).collect();
    softmax_f64(&z)
}

pub fn decode_probs(record: &SpikeRecord, cfg: &DecodeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(probs_from_sums(&weighted_sums(record, cfg), cfg.alpha))
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub theta: Vec<u64>,
}

/// Misclassifications of the one-vs-rest rule `S > θ` against membership.
pub fn threshold_errors(counts: &[u64], member: &[bool], theta: u64) -> usize {
    counts.iter().zip(member).filter(|(&s, &m)| (s > theta) != m).count()
}

/// Per class, the candidate θ (observed totals and 0) with the fewest
/// errors; ties go to the smallest θ. `totals[i]` holds sample `i`'s
/// per-class spike totals.
pub fn calibrate_thresholds(totals: &[Vec<u64>], labels: &[usize], num_classes: usize) -> Result<ClassThresholds> {
    if totals.len() != labels.len() || totals.is_empty() {
        return Err(QanaError::Config(format!(
            "{} records vs {} labels",
            totals.len(),
            labels.len()
        )));
    }
    if totals.iter().any(|t| t.len() != num_classes) || labels.iter().any(|&y| y >= num_classes) {
        return Err(QanaError::Config("record width or label out of range".into()));
    }
    let mut theta = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let counts: Vec<u64> = totals.iter().map(|t| t[c]).collect();
        let member: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        // sort once and sweep: errors(θ) = positives ≤ θ + negatives > θ
        let mut pairs: Vec<(u64, bool)> = counts.iter().copied().zip(member.iter().copied()).collect();
        pairs.sort_unstable();
        let mut cands: Vec<u64> = counts.clone();
        cands.push(0);
        cands.sort_unstable();
        cands.dedup();
        let total_neg = member.iter().filter(|&&m| !m).count();
        let (mut pos_le, mut neg_le, mut i) = (0usize, 0usize, 0usize);
        let mut best = (usize::MAX, 0u64);
        for &th in &cands {
            while i < pairs.len() && pairs[i].0 <= th {
                if pairs[i].1 {
                    pos_le += 1;
                } else {
                    neg_le += 1;
                }
                i += 1;
            }
            let err = pos_le + (total_neg - neg_le);
            if err < best.0 {
                best = (err, th);
            }
        }
        theta.push(best.1);
    }
    Ok(ClassThresholds { theta })
}

/// Argmax over classes passing `S_c > θ_c`; plain argmax when none pass.
pub fn thresholded_argmax(probs: &[f64], totals: &[u64], thresholds: &ClassThresholds) -> usize {
    let mut best: Option<usize> = None;
    for c in 0..probs.len() {
        if totals[c] > thresholds.theta[c] && best.is_none_or(|b| probs[c] > probs[b]) {
            best = Some(c);
        }
    }
    best.unwrap_or_else(|| argmax(probs))
}
