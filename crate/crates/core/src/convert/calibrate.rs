use serde::Serialize;

use super::fold::FoldedModel;
use super::quant::{percentile, QuantParams};
use crate::data::{batch, ImageSample};
use crate::error::{QanaError, Result};

pub const CALIBRATION_PERCENTILE: f64 = 99.9;

/// Activation quantization per spiking population, keyed by population
/// name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub entries: Vec<(String, QuantParams)>,
}

impl Calibration {
    pub fn get(&self, name: &str) -> Result<QuantParams> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|e| e.1)
            .ok_or_else(|| QanaError::Config(format!("no calibration entry for `{name}`")))
    }
}

/// `[0, p-th percentile]` for non-negative activations.
pub fn unsigned_range(values: &mut [f64], p: f64) -> Result<QuantParams> {
    Ok(QuantParams::unsigned(percentile(values, p)?))
}

/// `[(100−p)-th, p-th percentile]` widened to include 0, for signed
/// activations.
pub fn signed_range(values: &mut [f64], p: f64) -> Result<QuantParams> {
    let hi = percentile(values, p)?;
    let lo = percentile(values, 100.0 - p)?;
    Ok(QuantParams::asymmetric(lo, hi))
}

pub fn calibrate(model: &FoldedModel, samples: &[ImageSample], p: f64) -> Result<Calibration> {
    if samples.is_empty() {
        return Err(QanaError::EmptyCalibration);
    }
    let nb = model.blocks.len();
    let mut d: Vec<Vec<f64>> = vec![Vec::new(); nb];
    let mut r: Vec<Vec<f64>> = vec![Vec::new(); nb];
    let (mut head, mut logits) = (Vec::new(), Vec::new());
    for part in samples.chunks(8) {
        let refs: Vec<&ImageSample> = part.iter().collect();
        let (x, _) = batch(&refs)?;
        let acts = model.forward_all(&x.cast())?;
        for l in 0..nb {
            d[l].extend_from_slice(acts.d[l].data());
            r[l].extend_from_slice(acts.r[l].data());
        }
        head.extend_from_slice(acts.head.data());
        logits.extend_from_slice(acts.logits.data());
    }
    let mut entries = Vec::new();
    for l in 0..nb {
        entries.push((format!("block{}.d", l + 1), unsigned_range(&mut d[l], p)?));
        entries.push((format!("block{}.r", l + 1), signed_range(&mut r[l], p)?));
    }
    entries.push(("head".into(), unsigned_range(&mut head, p)?));
    entries.push(("logits".into(), signed_range(&mut logits, p)?));
    Ok(Calibration { entries })
}
