//! Sorting/enumeration oracles for statistics used across the pipeline.

/// Nearest-rank percentile via a full sort: `sorted[ceil(p/100·n) - 1]`.
pub fn percentile_sorted(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// All indices other than `query`, sorted by (distance, index), first `k`.
pub fn knn_sorted(points: &[Vec<f64>], query: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, p)| {
            let s: f64 = p.iter().zip(&points[query]).map(|(a, b)| (a - b) * (a - b)).sum();
            (s.sqrt(), i)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn auc_pairwise(scores: &[f64], positive: &[bool]) -> f64 {
    let mut good = 0.0;
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            total += 1.0;
            if si > sj {
                good += 1.0;
            } else if si == sj {
                good += 0.5;
            }
        }
    }
    good / total
}

/// Misclassifications of `count > theta` against binary membership.
pub fn threshold_errors(counts: &[u64], member: &[bool], theta: u64) -> usize {
    counts.iter().zip(member).filter(|(&c, &m)| (c > theta) != m).count()
}

/// Minimum error over every integer threshold from 0 to max(count).
pub fn best_threshold_errors(counts: &[u64], member: &[bool]) -> usize {
    let hi = counts.iter().copied().max().unwrap_or(0);
    (0..=hi).map(|t| threshold_errors(counts, member, t)).min().unwrap_or(0)
}
