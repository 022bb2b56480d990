//! 8-bit affine quantization.

use serde::Serialize;

use crate::error::{QanaError, Result};
use crate::tensor::{Real, Tensor};

/// `x ≈ scale · (q − zero_point)` with `q ∈ [0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    pub const LEVELS: f64 = 255.0;

    pub fn new(scale: f64, zero_point: i32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !(0..=255).contains(&zero_point) {
            return Err(QanaError::Config(format!(
                "invalid quantization parameters: scale {scale}, zero point {zero_point}"
            )));
        }
        Ok(Self { scale, zero_point })
    }

    /// Covers `[0, hi]` with a zero point of 0. A zero range falls back to
    /// a scale of 1/255.
    pub fn unsigned(hi: f64) -> Self {
        let scale = if hi > 0.0 {
            hi / Self::LEVELS
        } else {
            1.0 / Self::LEVELS
        };
        Self { scale, zero_point: 0 }
    }

    /// Covers `[lo, hi]` widened to include 0, so that 0 is exactly
    /// representable.
    pub fn asymmetric(lo: f64, hi: f64) -> Self {
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        if hi - lo <= 0.0 {
            return Self::unsigned(0.0);
        }
        let scale = (hi - lo) / Self::LEVELS;
        let zero_point = (-lo / scale).round().clamp(0.0, Self::LEVELS) as i32;
        Self { scale, zero_point }
    }

    /// Largest representable value.
    pub fn max_value(&self) -> f64 {
        (Self::LEVELS - self.zero_point as f64) * self.scale
    }

    pub fn min_value(&self) -> f64 {
        -(self.zero_point as f64) * self.scale
    }

    pub fn quantize(&self, x: f64) -> u8 {
        // f64::round rounds half away from zero
        ((x / self.scale).round() + self.zero_point as f64).clamp(0.0, Self::LEVELS) as u8
    }

    pub fn dequantize(&self, q: u8) -> f64 {
        (q as f64 - self.zero_point as f64) * self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
    pub params: QuantParams,
}

pub fn quantize_tensor<T: Real>(x: &Tensor<T>, qp: QuantParams) -> QuantizedTensor {
    QuantizedTensor {
        shape: x.shape().to_vec(),
        data: x.data().iter().map(|v| qp.quantize(v.as_f64())).collect(),
        params: qp,
    }
}

pub fn dequantize(qt: &QuantizedTensor) -> Tensor<f64> {
    let data = qt.data.iter().map(|&q| qt.params.dequantize(q)).collect();
    Tensor::new(qt.shape.clone(), data).expect("shape preserved")
}

/// Symmetric per-tensor int8: `q = round(x / s)` with `s = max|x| / 127`.
pub fn quantize_symmetric(x: &[f64]) -> (Vec<i8>, f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let s = if m > 0.0 { m / 127.0 } else { 1.0 };
    (
        x.iter().map(|v| (v / s).round().clamp(-127.0, 127.0) as i8).collect(),
        s,
    )
}

/// Nearest-rank percentile (`p` in percent). Reorders `values`.
pub fn percentile(values: &mut [f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(QanaError::EmptyCalibration);
    }
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil().clamp(1.0, n as f64) as usize;
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Ok(*v)
}
