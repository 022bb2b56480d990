//! Fake-quantized float network built from the folded weights and the
//! population ranges of a converted spec.
//!
//! Weights go through the same int8 rounding as the mapper, gates through
//! the same u8 rounding, and every activation is clipped to the range its
//! population can represent. Thresholds and biases are not read from the
//! spec, so a damaged spec shows up as a disagreement with this network.

use super::fold::{FoldedConv, FoldedModel};
use super::map::{joint_scale, quantize_weight};
use super::quant::QuantParams;
use crate::error::{QanaError, Result};
use crate::ops;
use crate::snn::{PopulationKind, SpikingNetworkSpec, UNIT_GAIN};
use crate::tensor::Tensor;

fn quant_of(spec: &SpikingNetworkSpec, name: &str) -> Result<(QuantParams, Option<u32>)> {
    let i = spec
        .find(name)
        .ok_or_else(|| QanaError::Config(format!("spec has no population `{name}`")))?;
    let p = &spec.populations[i];
    let cap = match &p.kind {
        PopulationKind::Integrate(l) => l.cap,
        _ => None,
    };
    Ok((p.quant, cap))
}

/// Representable `[lo, hi]` of a population: levels `0..=min(255, cap)`.
fn bounds(q: QuantParams, cap: Option<u32>) -> (f64, f64) {
    let top = cap.map_or(255.0, |c| (c as f64).min(255.0));
    (-(q.zero_point as f64) * q.scale, (top - q.zero_point as f64) * q.scale)
}

/// Round each weight group to the int8 grid it gets in the spiking network.
/// `groups` pairs the weights with their source scale.
fn fake_quant(groups: &[(&[f64], f64)]) -> Vec<Vec<f64>> {
    let eff: Vec<Vec<f64>> = groups
        .iter()
        .map(|(w, s)| w.iter().map(|v| v * 255.0 * s).collect())
        .collect();
    let s_e = joint_scale(eff.iter().map(|e| e.as_slice()));
    eff.iter()
        .zip(groups)
        .map(|(e, (_, s))| {
            let a = 255.0 * s;
            e.iter().map(|&v| quantize_weight(v, s_e) as f64 * s_e / a).collect()
        })
        .collect()
}

fn with_kernel(conv: &FoldedConv, data: Vec<f64>) -> Result<FoldedConv> {
    Ok(FoldedConv {
        kernel: Tensor::new(conv.kernel.shape().to_vec(), data)?,
        bias: conv.bias.clone(),
    })
}

fn clip(t: &Tensor<f64>, (lo, hi): (f64, f64)) -> Tensor<f64> {
    t.map(|v| v.clamp(lo, hi))
}

fn gain(v: f64) -> f64 {
    (ops::sigmoid_scalar(v) * UNIT_GAIN as f64).round() / UNIT_GAIN as f64
}

/// Logits of the dequantized network for one image in `[0, 1]`.
pub fn dequantized_forward(model: &FoldedModel, spec: &SpikingNetworkSpec, pixels: &[f32]) -> Result<Vec<f64>> {
    let shape = model.config.input_shape();
    let x: Vec<f64> = pixels.iter().map(|&v| v as f64).collect();
    let mut cur = Tensor::new(vec![1, shape[0], shape[1], shape[2]], x)?;
    let mut s_prev = 1.0 / 255.0;
    for (i, blk) in model.blocks.iter().enumerate() {
        let l = i + 1;
        let (dq, dcap) = quant_of(spec, &format!("block{l}.d"))?;
        let (rq, rcap) = quant_of(spec, &format!("block{l}.r"))?;
        let ghost = with_kernel(&blk.ghost, fake_quant(&[(blk.ghost.kernel.data(), s_prev)]).remove(0))?;
        let d = clip(&ghost.forward(&cur)?, bounds(dq, dcap));
        let g = blk.gate.forward(&d)?.map(gain);
        let c = blk.alpha.len();
        let identity = vec![1.0; c];
        let skip_w = blk.proj.as_ref().map_or(identity.as_slice(), |p| p.kernel.data());
        let mut fq = fake_quant(&[(&blk.alpha, dq.scale), (skip_w, s_prev)]);
        let skip_q = fq.pop().unwrap_or_default();
        let alpha_q = fq.pop().unwrap_or_default();
        let main = g.mul(&d)?.mul_channels(&alpha_q)?;
        let skip = match &blk.proj {
            Some(p) => with_kernel(p, skip_q)?.forward(&cur)?,
            None => cur.mul_channels(&skip_q)?,
        };
        let r = clip(&main.add(&skip)?, bounds(rq, rcap));
        cur = ops::maxpool2d(&r, 2)?.0;
        s_prev = rq.scale;
    }
    let (hq, hcap) = quant_of(spec, "head")?;
    let head = with_kernel(&model.head, fake_quant(&[(model.head.kernel.data(), s_prev)]).remove(0))?;
    let f = clip(&head.forward(&cur)?, bounds(hq, hcap));
    let (_, h, w, c) = f.dims4("dequantized_head")?;
    let means = ops::spatial_mean(&f)?;
    let s: Vec<f64> = model
        .se
        .gate(means.data())
        .iter()
        .map(|&v| (v * UNIT_GAIN as f64).round() / UNIT_GAIN as f64)
        .collect();
    let gated = f.mul_channels(&s)?.reshape(&[1, h * w * c])?;
    let (oq, ocap) = quant_of(spec, "logits")?;
    let cls = fake_quant(&[(model.cls_w.data(), hq.scale)]).remove(0);
    let cls = Tensor::new(model.cls_w.shape().to_vec(), cls)?;
    let b = Tensor::new(vec![model.cls_b.len()], model.cls_b.clone())?;
    let logits = ops::dense(&gated, &cls, Some(&b))?;
    Ok(clip(&logits, bounds(oq, ocap)).into_data())
}
