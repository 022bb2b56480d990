//! Batch normalization over the last (channel) axis.

use super::Mode;
use crate::error::{shape_err, QanaError, Result};
use crate::tensor::{Real, Tensor};

/// Per-channel batch statistics (biased variance) from a train-mode pass.
#[derive(Debug, Clone)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    /// Normalized with running statistics, so the input gradient does not
    /// flow through the batch mean/variance.
    frozen: bool,
}

fn channels<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err("batch_norm", "rank 0 input"))?;
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err(
            "batch_norm",
            format!("{c} channels but gamma/beta have {}/{}", gamma.len(), beta.len()),
        ));
    }
    Ok(c)
}

pub fn batch_norm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>, BnStats<T>)> {
    let c = channels(x, gamma, beta)?;
    if x.shape()[0] == 0 || x.len() < c {
        return Err(QanaError::EmptyBatch { op: "batch_norm" });
    }
    let m = x.len() / c;
    let mf = T::lit(m as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (s, &v) in mean.iter_mut().zip(row) {
            *s += v;
        }
    }
    for s in &mut mean {
        *s /= mf;
    }
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((s, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= mf;
    }
    let eps = T::lit(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let mut xhat = x.clone();
    let mut out = x.clone();
    let (g, b) = (gamma.data(), beta.data());
    for (hrow, orow) in xhat
        .data_mut()
        .chunks_exact_mut(c)
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let h = (hrow[ch] - mean[ch]) * inv_std[ch];
            hrow[ch] = h;
            orow[ch] = g[ch] * h + b[ch];
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            gamma: g.to_vec(),
            frozen: false,
        },
        BnStats { mean, var, count: m },
    ))
}

pub fn batch_norm_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = channels(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(shape_err(
            "batch_norm",
            "running statistics length differs from channels",
        ));
    }
    let eps = T::lit(eps);
    let scale: Vec<T> = gamma
        .data()
        .iter()
        .zip(running_var.data())
        .map(|(&g, &v)| g / (v + eps).sqrt())
        .collect();
    let shift: Vec<T> = beta
        .data()
        .iter()
        .zip(running_mean.data())
        .zip(&scale)
        .map(|((&b, &m), &s)| b - m * s)
        .collect();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            row[ch] = row[ch] * scale[ch] + shift[ch];
        }
    }
    Ok(out)
}

/// Infer-mode normalization that also keeps what the backward pass needs.
pub fn batch_norm_infer_cached<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let c = channels(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(shape_err(
            "batch_norm",
            "running statistics length differs from channels",
        ));
    }
    let e = T::lit(eps);
    let inv_std: Vec<T> = running_var.data().iter().map(|&v| (v + e).sqrt().recip()).collect();
    let mut xhat = x.clone();
    let mut out = x.clone();
    let (g, b, m) = (gamma.data(), beta.data(), running_mean.data());
    for (hrow, orow) in xhat
        .data_mut()
        .chunks_exact_mut(c)
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let h = (hrow[ch] - m[ch]) * inv_std[ch];
            hrow[ch] = h;
            orow[ch] = g[ch] * h + b[ch];
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            gamma: g.to_vec(),
            frozen: true,
        },
    ))
}

/// Exponential moving average with `momentum` weight on the new batch; the
/// variance uses the unbiased batch estimate.
pub fn update_running<T: Real>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    stats: &BnStats<T>,
    momentum: f64,
) {
    let mo = T::lit(momentum);
    let keep = T::one() - mo;
    let unbias = if stats.count > 1 {
        T::lit(stats.count as f64 / (stats.count - 1) as f64)
    } else {
        T::one()
    };
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = keep * *r + mo * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&stats.var) {
        *r = keep * *r + mo * v * unbias;
    }
}

/// Single entry point in either mode. In train mode the running statistics
/// are updated in place.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    if eps <= 0.0 {
        return Err(QanaError::Config(format!("batch-norm epsilon must be > 0, got {eps}")));
    }
    match mode {
        Mode::Infer => batch_norm_infer(x, gamma, beta, running_mean, running_var, eps),
        Mode::Train => {
            let (out, _, stats) = batch_norm_train(x, gamma, beta, eps)?;
            update_running(running_mean, running_var, &stats, momentum);
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batch_norm_backward<T: Real>(cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
    cache.xhat.expect_same_shape(grad_out, "batch_norm_backward")?;
    let c = cache.gamma.len();
    let m = T::lit((grad_out.len() / c) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (grow, hrow) in grad_out.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] += grow[ch];
            dgamma[ch] += grow[ch] * hrow[ch];
        }
    }
    let mut dx = grad_out.clone();
    if cache.frozen {
        for drow in dx.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                drow[ch] *= cache.gamma[ch] * cache.inv_std[ch];
            }
        }
        return Ok(BnGrads {
            input: dx,
            gamma: Tensor::new(vec![c], dgamma)?,
            beta: Tensor::new(vec![c], dbeta)?,
        });
    }
    // dx = γ·inv_std/m · (m·g − Σg − x̂·Σ(g·x̂))
    for (drow, hrow) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
        for ch in 0..c {
            let k = cache.gamma[ch] * cache.inv_std[ch] / m;
            drow[ch] = k * (m * drow[ch] - dbeta[ch] - hrow[ch] * dgamma[ch]);
        }
    }
    Ok(BnGrads {
        input: dx,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}
