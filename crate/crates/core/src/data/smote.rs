//! SMOTE oversampling in flattened pixel space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::ImageSample;
use crate::error::{QanaError, Result};

/// Indices of the `k` nearest points to `points[query]` (Euclidean), nearest
/// first, ties going to the lower index. The query itself is excluded.
pub fn knn<P: AsRef<[f32]>>(points: &[P], query: usize, k: usize) -> Result<Vec<usize>> {
    if query >= points.len() {
        return Err(QanaError::Config(format!("query {query} out of range")));
    }
    if k == 0 || k >= points.len() {
        return Err(QanaError::Config(format!(
            "k = {k} needs 1 <= k < {} points",
            points.len()
        )));
    }
    let q = points[query].as_ref();
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(i, p)| {
            let s: f64 = p
                .as_ref()
                .iter()
                .zip(q)
                .map(|(&a, &b)| {
                    let t = a as f64 - b as f64;
                    t * t
                })
                .sum();
            (s, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(d.into_iter().take(k).map(|(_, i)| i).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// An independent λ for every coordinate.
    PerDimension,
    /// One λ per synthetic sample (classic SMOTE).
    Canonical,
}

/// `x + λ ⊙ (neighbor − x)` with λ drawn from U(0,1). Returns the new point
/// and the λ values used (one per coordinate, or a single one).
pub fn smote_generate<R: Rng + ?Sized>(
    x: &[f32],
    neighbor: &[f32],
    mode: Interpolation,
    rng: &mut R,
) -> (Vec<f32>, Vec<f32>) {
    let lambdas: Vec<f32> = match mode {
        Interpolation::PerDimension => (0..x.len()).map(|_| rng.gen::<f32>()).collect(),
        Interpolation::Canonical => vec![rng.gen::<f32>()],
    };
    (interpolate(x, neighbor, &lambdas), lambdas)
}

/// `x + λ ⊙ (neighbor − x)`; a single λ is broadcast.
pub fn interpolate(x: &[f32], neighbor: &[f32], lambdas: &[f32]) -> Vec<f32> {
    x.iter()
        .zip(neighbor)
        .enumerate()
        .map(|(d, (&a, &b))| {
            let l = if lambdas.len() == 1 { lambdas[0] } else { lambdas[d] } as f64;
            // the weighted form is exact at both ends; the clamp keeps the
            // rounded value inside the parents' envelope
            let v = (1.0 - l) * a as f64 + l * b as f64;
            (v as f32).clamp(a.min(b), a.max(b))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteConfig {
    pub k: usize,
    /// Desired count per class; `None` raises every class to the largest one.
    pub targets: Option<Vec<usize>>,
    pub interpolation: Interpolation,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k: 5,
            targets: None,
            interpolation: Interpolation::PerDimension,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Oversampled {
    /// Originals first, unchanged and in input order, then synthetics.
    pub samples: Vec<ImageSample>,
    /// For each synthetic (in order), the input indices of its two parents.
    pub parents: Vec<(usize, usize)>,
}

pub fn class_counts(samples: &[ImageSample], num_classes: usize) -> Vec<usize> {
    let mut c = vec![0; num_classes];
    for s in samples {
        c[s.label] += 1;
    }
    c
}

/// Raise each class to its target by interpolating between a member and one
/// of its `k` nearest same-class neighbours. Bases are taken round-robin;
/// classes already at or above target are left alone.
pub fn smote_oversample(samples: &[ImageSample], num_classes: usize, cfg: &SmoteConfig) -> Result<Oversampled> {
    if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
        return Err(QanaError::Config(format!("label {} out of range", s.label)));
    }
    let counts = class_counts(samples, num_classes);
    let targets = match &cfg.targets {
        Some(t) if t.len() != num_classes => {
            return Err(QanaError::Config(format!(
                "{} targets for {num_classes} classes",
                t.len()
            )))
        }
        Some(t) => t.clone(),
        None => vec![counts.iter().copied().max().unwrap_or(0); num_classes],
    };
    let short: Vec<usize> = (0..num_classes)
        .filter(|&c| targets[c] > counts[c] && counts[c] < cfg.k + 1)
        .collect();
    if !short.is_empty() {
        return Err(QanaError::ClassTooSmall {
            classes: short,
            needed: cfg.k + 1,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = samples.to_vec();
    let mut parents = Vec::new();
    for c in 0..num_classes {
        let need = targets[c].saturating_sub(counts[c]);
        if need == 0 {
            continue;
        }
        let members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == c).collect();
        let points: Vec<&[f32]> = members.iter().map(|&i| samples[i].pixels.data()).collect();
        let mut neighbours: Vec<Option<Vec<usize>>> = vec![None; members.len()];
        for j in 0..need {
            let b = j % members.len();
            if neighbours[b].is_none() {
                neighbours[b] = Some(knn(&points, b, cfg.k)?);
            }
            let nb = neighbours[b].as_ref().unwrap()[rng.gen_range(0..cfg.k)];
            let (px, _) = smote_generate(points[b], points[nb], cfg.interpolation, &mut rng);
            let (i, n) = (members[b], members[nb]);
            let mut s = samples[i].clone();
            s.pixels.data_mut().copy_from_slice(&px);
            for v in s.pixels.data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            s.source_id = format!("smote-{c}-{j}");
            s.synthetic = true;
            out.push(s);
            parents.push((i, n));
        }
    }
    Ok(Oversampled { samples: out, parents })
}
