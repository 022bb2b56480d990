//! Central finite differences.

use qana_core::Tensor;

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Numeric gradient of scalar `f` at `x` for the listed flat indices.
pub fn numeric_grad(f: &mut dyn FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, indices: &[usize], eps: f64) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            (f(&xp) - f(&xm)) / (2.0 * eps)
        })
        .collect()
}

/// Max relative error of `analytic` against central differences over every
/// element (or an evenly strided subset of at most `max_probes`).
pub fn check(
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    max_probes: usize,
    floor: f64,
) -> f64 {
    let n = x.len();
    let step = (n / max_probes.max(1)).max(1);
    let idx: Vec<usize> = (0..n).step_by(step).collect();
    let num = numeric_grad(f, x, &idx, eps);
    idx.iter()
        .zip(num)
        .map(|(&i, g)| rel_err(analytic.data()[i], g, floor))
        .fold(0.0, f64::max)
}

/// `Σ out ⊙ weights`, the scalar used to seed backward passes with `weights`.
pub fn weighted_sum(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}
