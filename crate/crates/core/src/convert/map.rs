//! Operator mapping from the folded network to integer IF populations.
//!
//! For a population with quantization `(s_out, zp_out)` fed by sources with
//! `(s_i, zp_i)`, each real weight `w` becomes `q = round(w·255·s_i / s_e)`
//! with one `s_e` shared by all of the population's projections, and
//!
//! ```text
//! θ = 255²·s_out / s_e
//! β = θ·(b / (255·s_out) + zp_out / 255) − Σ q·zp_i
//! ```
//!
//! so that the firing rate `(Σ 255·q·r_i + β) / θ` equals the output level
//! over 255. Gated projections charge `q·g` with the gate's u8 gain `g`
//! in place of 255; their sources must have a zero point of 0.

use serde::Serialize;

use super::calibrate::Calibration;
use super::fold::{FoldedConv, FoldedModel};
use super::quant::QuantParams;
use crate::arch::{LayerDesc, LayerKind, ModelSpec, HEAD_SIDE};
use crate::data::ImageSample;
use crate::error::{QanaError, Result};
use crate::snn::{
    reference_forward, GateKind, GateNode, IfLayer, MappingEntry, Population, PopulationKind, Projection,
    ProjectionKind, SpikingNetworkSpec,
};

struct FloatProjection {
    source: usize,
    kind: ProjectionKind,
    weights: Vec<f64>,
    gate: Option<usize>,
}

fn block_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn mapping_target(layer: &LayerDesc, spec: &SpikingNetworkSpec) -> Result<String> {
    let b = block_of(&layer.name);
    let cap_of = |pop: &str| -> String {
        spec.find(pop)
            .and_then(|i| match &spec.populations[i].kind {
                PopulationKind::Integrate(l) => l.cap,
                _ => None,
            })
            .map_or("none".into(), |c| c.to_string())
    };
    Ok(match &layer.kind {
        LayerKind::Ghost => format!("{b}.d: fused conv"),
        LayerKind::BatchNorm if b == "head" => "head: folded into conv".into(),
        LayerKind::BatchNorm => format!("{b}.d: folded into conv"),
        LayerKind::Relu6 => format!("{b}.d: saturation cap {} levels", cap_of(&format!("{b}.d"))),
        LayerKind::Dropout => "removed: identity at inference".into(),
        LayerKind::SaEca => format!("{b}.eca: rate-domain gain on {b}.d -> {b}.r"),
        LayerKind::Residual { .. } => format!("{b}.r: integrate-and-fire"),
        LayerKind::MaxPool => format!("{b}.x: spike-domain max"),
        LayerKind::SeparableConv => "head: fused conv".into(),
        LayerKind::SpikeAffine => "head: folded into conv".into(),
        LayerKind::BoundedUnit => format!("head: saturation cap {} levels", cap_of("head")),
        LayerKind::SqueezeExcite => "se: rate-domain gain on head -> logits".into(),
        LayerKind::Flatten => "logits: index remap".into(),
        LayerKind::Dense => "logits: integrate-and-fire".into(),
        LayerKind::Custom(_) => {
            return Err(QanaError::UnsupportedLayer {
                name: layer.name.clone(),
                kind: layer.kind.to_string(),
            })
        }
    })
}

/// Shared int8 step for all effective weights (`w·255·s_in`) feeding one
/// population.
pub(crate) fn joint_scale<'a>(effective: impl Iterator<Item = &'a [f64]>) -> f64 {
    let m = effective.flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        m / 127.0
    } else {
        1.0
    }
}

pub(crate) fn quantize_weight(e: f64, s_e: f64) -> i8 {
    (e / s_e).round().clamp(-127.0, 127.0) as i8
}

fn in_bounds_taps(pos: usize, len: usize, k: usize) -> impl Iterator<Item = usize> {
    let pad = k / 2;
    (0..k).filter(move |&t| pos + t >= pad && pos + t - pad < len)
}

fn build_if(
    pops: &[Population],
    shape: [usize; 3],
    quant: QuantParams,
    projections: Vec<FloatProjection>,
    bias: &[f64],
    cap: Option<u32>,
    name: &str,
) -> Result<IfLayer> {
    let [h, w, c] = shape;
    let effective: Vec<Vec<f64>> = projections
        .iter()
        .map(|p| {
            let a = 255.0 * pops[p.source].quant.scale;
            p.weights.iter().map(|v| v * a).collect()
        })
        .collect();
    let s_e = joint_scale(effective.iter().map(|e| e.as_slice()));
    let theta_f = 255.0 * 255.0 * quant.scale / s_e;
    if !(theta_f.round() >= 1.0 && theta_f.round() <= i32::MAX as f64) {
        return Err(QanaError::Config(format!(
            "population `{name}`: threshold {theta_f:.3e} does not fit a 32-bit integer"
        )));
    }
    let theta = theta_f.round() as i32;
    let th = theta as f64;
    let mut bias_n: Vec<f64> = (0..h * w * c)
        .map(|i| th * (bias[i % c] / (255.0 * quant.scale) + quant.zero_point as f64 / 255.0))
        .collect();
    let mut out = Vec::with_capacity(projections.len());
    for (p, e) in projections.into_iter().zip(effective) {
        let q: Vec<i8> = e.iter().map(|&v| quantize_weight(v, s_e)).collect();
        let src = &pops[p.source];
        let zp = src.quant.zero_point as f64;
        if p.gate.is_some() && src.quant.zero_point != 0 {
            return Err(QanaError::Config(format!(
                "gated source `{}` must have zero point 0",
                src.name
            )));
        }
        if zp != 0.0 {
            match p.kind {
                ProjectionKind::Conv { kernel } => {
                    let cin = src.channels();
                    let mut tap = vec![0.0; kernel * kernel * c];
                    for t in 0..kernel * kernel {
                        for ci in 0..cin {
                            for co in 0..c {
                                tap[t * c + co] += q[(t * cin + ci) * c + co] as f64;
                            }
                        }
                    }
                    for y in 0..h {
                        for x in 0..w {
                            for ky in in_bounds_taps(y, h, kernel) {
                                for kx in in_bounds_taps(x, w, kernel) {
                                    for co in 0..c {
                                        bias_n[(y * w + x) * c + co] -= zp * tap[(ky * kernel + kx) * c + co];
                                    }
                                }
                            }
                        }
                    }
                }
                ProjectionKind::Dense => {
                    let n_in = src.len();
                    for (o, b) in bias_n.iter_mut().enumerate() {
                        *b -= zp * q[o * n_in..(o + 1) * n_in].iter().map(|&v| v as f64).sum::<f64>();
                    }
                }
                ProjectionKind::Channelwise => {
                    for (i, b) in bias_n.iter_mut().enumerate() {
                        *b -= zp * q[i % c] as f64;
                    }
                }
            }
        }
        out.push(Projection {
            source: p.source,
            kind: p.kind,
            weights: q,
            gate: p.gate,
        });
    }
    let bias = bias_n
        .iter()
        .map(|b| {
            let r = b.round();
            if r.abs() > i32::MAX as f64 {
                Err(QanaError::Config(format!(
                    "population `{name}`: bias {r:.3e} overflows 32 bits"
                )))
            } else {
                Ok(r as i32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IfLayer {
        threshold: vec![theta; c],
        // start half way up so counts round to nearest instead of down
        initial: vec![theta / 2; c],
        bias,
        cap,
        projections: out,
    })
}

fn conv_projection(source: usize, conv: &FoldedConv) -> FloatProjection {
    FloatProjection {
        source,
        kind: ProjectionKind::Conv {
            kernel: conv.kernel_size(),
        },
        weights: conv.kernel.data().to_vec(),
        gate: None,
    }
}

fn cap_levels(limit: f64, q: QuantParams) -> u32 {
    (limit / q.scale).round().min(u32::MAX as f64) as u32
}

/// Build the spiking network. Every layer of `source` must be a supported
/// kind; each appears exactly once in the mapping table.
pub fn map_operators(model: &FoldedModel, source: &ModelSpec, calib: &Calibration) -> Result<SpikingNetworkSpec> {
    for layer in &source.layers {
        if !layer.kind.is_supported() {
            return Err(QanaError::UnsupportedLayer {
                name: layer.name.clone(),
                kind: layer.kind.to_string(),
            });
        }
    }
    let cfg = &model.config;
    let mut pops = vec![Population {
        name: "input".into(),
        shape: cfg.input_shape(),
        quant: QuantParams::unsigned(1.0),
        kind: PopulationKind::Input,
    }];
    let mut gates = Vec::new();
    let mut prev = 0usize;
    let mut side = cfg.input_shape()[0];
    for (i, blk) in model.blocks.iter().enumerate() {
        let l = i + 1;
        let c = blk.ghost.out_channels();
        let shape = [side, side, c];

        let dq = calib.get(&format!("block{l}.d"))?;
        let d = build_if(
            &pops,
            shape,
            dq,
            vec![conv_projection(prev, &blk.ghost)],
            &blk.ghost.bias,
            Some(cap_levels(6.0, dq)),
            &format!("block{l}.d"),
        )?;
        pops.push(Population {
            name: format!("block{l}.d"),
            shape,
            quant: dq,
            kind: PopulationKind::Integrate(d),
        });
        let d_idx = pops.len() - 1;

        gates.push(GateNode {
            name: format!("block{l}.eca"),
            source: d_idx,
            kind: GateKind::Conv {
                kernel: blk.gate.kernel_size(),
                weights: blk.gate.kernel.data().to_vec(),
                bias: blk.gate.bias.clone(),
            },
        });
        let rq = calib.get(&format!("block{l}.r"))?;
        let mut projs = vec![FloatProjection {
            source: d_idx,
            kind: ProjectionKind::Channelwise,
            weights: blk.alpha.clone(),
            gate: Some(gates.len() - 1),
        }];
        let skip_bias = match &blk.proj {
            Some(p) => {
                projs.push(conv_projection(prev, p));
                p.bias.clone()
            }
            None => {
                projs.push(FloatProjection {
                    source: prev,
                    kind: ProjectionKind::Channelwise,
                    weights: vec![1.0; c],
                    gate: None,
                });
                vec![0.0; c]
            }
        };
        let r = build_if(&pops, shape, rq, projs, &skip_bias, None, &format!("block{l}.r"))?;
        pops.push(Population {
            name: format!("block{l}.r"),
            shape,
            quant: rq,
            kind: PopulationKind::Integrate(r),
        });
        side /= 2;
        pops.push(Population {
            name: format!("block{l}.x"),
            shape: [side, side, c],
            quant: rq,
            kind: PopulationKind::MaxPool {
                source: pops.len() - 1,
                window: 2,
            },
        });
        prev = pops.len() - 1;
    }

    let hq = calib.get("head")?;
    let hc = model.head.out_channels();
    let head_shape = [HEAD_SIDE, HEAD_SIDE, hc];
    let head = build_if(
        &pops,
        head_shape,
        hq,
        vec![conv_projection(prev, &model.head)],
        &model.head.bias,
        Some(cap_levels(1.0, hq)),
        "head",
    )?;
    pops.push(Population {
        name: "head".into(),
        shape: head_shape,
        quant: hq,
        kind: PopulationKind::Integrate(head),
    });
    let head_idx = pops.len() - 1;
    gates.push(GateNode {
        name: "se".into(),
        source: head_idx,
        kind: GateKind::Excite {
            hidden: model.se.w1.shape()[0],
            w1: model.se.w1.data().to_vec(),
            b1: model.se.b1.clone(),
            w2: model.se.w2.data().to_vec(),
            b2: model.se.b2.clone(),
        },
    });
    let oq = calib.get("logits")?;
    let k = model.cls_b.len();
    let out = build_if(
        &pops,
        [1, 1, k],
        oq,
        vec![FloatProjection {
            source: head_idx,
            kind: ProjectionKind::Dense,
            weights: model.cls_w.data().to_vec(),
            gate: Some(gates.len() - 1),
        }],
        &model.cls_b,
        None,
        "logits",
    )?;
    pops.push(Population {
        name: "logits".into(),
        shape: [1, 1, k],
        quant: oq,
        kind: PopulationKind::Integrate(out),
    });
    let output = pops.len() - 1;
    let mut spec = SpikingNetworkSpec {
        populations: pops,
        gates,
        mapping: Vec::new(),
        output,
    };
    let mut mapping = Vec::with_capacity(source.layers.len());
    for layer in &source.layers {
        mapping.push(MappingEntry {
            source: layer.name.clone(),
            target: mapping_target(layer, &spec)?,
        });
    }
    spec.mapping = mapping;
    spec.validate()?;
    Ok(spec)
}

/// Static resource summary of a converted network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub neurons: u64,
    pub synapses: u64,
    pub weight_bytes: u64,
    pub gate_parameters: u64,
    pub populations: Vec<(String, usize)>,
    pub window: usize,
    /// Mean over the probe samples of Σ rate·T, from the rate-domain
    /// reference; `None` without probes.
    pub estimated_events_per_inference: Option<f64>,
}

pub fn cost_report(spec: &SpikingNetworkSpec, probes: &[ImageSample], window: usize) -> Result<CostReport> {
    let mut weight_bytes = 0u64;
    for p in &spec.populations {
        if let PopulationKind::Integrate(l) = &p.kind {
            weight_bytes += l.projections.iter().map(|pr| pr.weights.len() as u64).sum::<u64>();
        }
    }
    let gate_parameters = spec
        .gates
        .iter()
        .map(|g| match &g.kind {
            GateKind::Conv { weights, bias, .. } => (weights.len() + bias.len()) as u64,
            GateKind::Excite { w1, b1, w2, b2, .. } => (w1.len() + b1.len() + w2.len() + b2.len()) as u64,
        })
        .sum();
    let estimated = if probes.is_empty() {
        None
    } else {
        let mut total = 0.0;
        for s in probes {
            let r = reference_forward(spec, s.pixels.data())?;
            total += r.rates.iter().flatten().sum::<f64>() * window as f64;
        }
        Some(total / probes.len() as f64)
    };
    Ok(CostReport {
        neurons: spec.neurons(),
        synapses: spec.synapses(),
        weight_bytes,
        gate_parameters,
        populations: spec.populations.iter().map(|p| (p.name.clone(), p.len())).collect(),
        window,
        estimated_events_per_inference: estimated,
    })
}
