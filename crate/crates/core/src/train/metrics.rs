//! Confusion-matrix metrics and one-vs-rest AUC.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{QanaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Reported as the class recall.
    pub accuracy: f64,
    pub support: usize,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub top1_accuracy: f64,
    /// Mean over classes with a defined AUC.
    pub macro_auc: Option<f64>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Area under the ROC curve via the Mann–Whitney statistic with average
/// ranks for ties, which equals the trapezoidal ROC area.
pub fn auc_roc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

impl MetricsReport {
    /// `scores[i]` holds one score per class for sample `i` (probabilities
    /// or logits; only the ordering matters for AUC).
    pub fn new(labels: &[usize], preds: &[usize], scores: Option<&[Vec<f64>]>, num_classes: usize) -> Result<Self> {
        if labels.len() != preds.len() || labels.is_empty() {
            return Err(QanaError::Config(format!(
                "{} labels vs {} predictions",
                labels.len(),
                preds.len()
            )));
        }
        if labels.iter().chain(preds).any(|&c| c >= num_classes) {
            return Err(QanaError::Config("class id out of range".into()));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(preds) {
            confusion[y][p] += 1;
        }
        let mut per_class = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let auc = scores.and_then(|s| {
                let col: Vec<f64> = s.iter().map(|row| row[c]).collect();
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                auc_roc(&col, &pos)
            });
            per_class.push(ClassMetrics {
                precision,
                recall,
                f1,
                accuracy: recall,
                support,
                auc,
            });
        }
        let k = num_classes as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
        let aucs: Vec<f64> = per_class.iter().filter_map(|m| m.auc).collect();
        let trace: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            top1_accuracy: ratio(trace, labels.len()),
            macro_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            confusion,
            per_class,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,accuracy,support,auc\n");
        for (c, m) in self.per_class.iter().enumerate() {
            let auc = m.auc.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{c},{:.6},{:.6},{:.6},{:.6},{},{auc}",
                m.precision, m.recall, m.f1, m.accuracy, m.support
            );
        }
        let auc = self.macro_auc.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "average,{:.6},{:.6},{:.6},{:.6},{},{auc}",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.macro_recall,
            self.per_class.iter().map(|m| m.support).sum::<usize>()
        );
        s
    }

    /// Aligned text table with precision/recall/F1/accuracy columns.
    pub fn to_table(&self, class_names: Option<&[&str]>) -> String {
        let mut s = format!(
            "{:<10} {:>9} {:>9} {:>9} {:>9}\n",
            "Class", "Precision", "Recall", "F1", "Accuracy"
        );
        for (c, m) in self.per_class.iter().enumerate() {
            let name = class_names
                .and_then(|n| n.get(c).copied())
                .map(str::to_string)
                .unwrap_or(c.to_string());
            let _ = writeln!(
                s,
                "{name:<10} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                m.precision, m.recall, m.f1, m.accuracy
            );
        }
        let _ = writeln!(
            s,
            "{:<10} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            "Average", self.macro_precision, self.macro_recall, self.macro_f1, self.macro_recall
        );
        let _ = write!(s, "top-1 accuracy {:.3}", self.top1_accuracy);
        if let Some(a) = self.macro_auc {
            let _ = write!(s, ", macro AUC-ROC {a:.3}");
        }
        s.push('\n');
        s
    }
}

/// Unweighted column means of per-class rows.
pub fn column_means<const N: usize>(rows: &[[f64; N]]) -> [f64; N] {
    let mut out = [0.0; N];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= rows.len().max(1) as f64;
    }
    out
}

/// Round half away from zero to `places` decimals.
pub fn round_to(v: f64, places: i32) -> f64 {
    let p = 10f64.powi(places);
    // nudge by a relative epsilon so values like 0.9095 are not lost to
    // binary representation
    (v * p * (1.0 + 4.0 * f64::EPSILON)).round() / p
}
