//! Rate-domain evaluation of a spiking network spec.
//!
//! Uses exactly the integer weights, biases, thresholds and caps of the
//! spec but replaces spike counts by real rates:
//! `r = clamp((Σ w·g·r_in + b) / θ, 0, min(1, cap/255))`. This is the
//! dequantized CNN the simulator converges to as `T` grows.

use super::network::{gate_gains, PopulationKind, ProjectionKind, SpikingNetworkSpec, UNIT_GAIN};
use crate::error::{QanaError, Result};

pub struct ReferenceOutput {
    /// Rate of every neuron, per population.
    pub rates: Vec<Vec<f64>>,
    /// Decoded output values.
    pub logits: Vec<f64>,
}

pub fn reference_forward(spec: &SpikingNetworkSpec, input: &[f32]) -> Result<ReferenceOutput> {
    spec.validate()?;
    if input.len() != spec.input().len() {
        return Err(QanaError::Shape {
            op: "reference_forward",
            detail: format!(
                "input has {} values, network expects {}",
                input.len(),
                spec.input().len()
            ),
        });
    }
    let mut rates: Vec<Vec<f64>> = Vec::with_capacity(spec.populations.len());
    for (i, p) in spec.populations.iter().enumerate() {
        let r = match &p.kind {
            PopulationKind::Input => input.iter().map(|&v| v as f64).collect(),
            PopulationKind::MaxPool { source, window } => {
                let [_, sw, sc] = spec.populations[*source].shape;
                let [ph, pw, c] = p.shape;
                let src = &rates[*source];
                let mut out = vec![f64::NEG_INFINITY; p.len()];
                for y in 0..ph * window {
                    for x in 0..pw * window {
                        for ch in 0..c {
                            let o = ((y / window) * pw + x / window) * c + ch;
                            out[o] = out[o].max(src[(y * sw + x) * sc + ch]);
                        }
                    }
                }
                out
            }
            PopulationKind::Integrate(layer) => {
                let [h, w, c] = p.shape;
                let mut acc: Vec<f64> = layer.bias.iter().map(|&b| b as f64).collect();
                for pr in &layer.projections {
                    let s = &spec.populations[pr.source];
                    let src = &rates[pr.source];
                    let gains: Vec<f64> = match pr.gate {
                        Some(g) => {
                            let g8 = gate_gains(spec, g, &rates[spec.gates[g].source]);
                            let per = if g8.len() == s.len() { 1 } else { s.channels() };
                            (0..s.len())
                                .map(|j| g8[if per == 1 { j } else { j % per }] as f64)
                                .collect()
                        }
                        None => vec![UNIT_GAIN as f64; s.len()],
                    };
                    let x: Vec<f64> = src.iter().zip(&gains).map(|(r, g)| r * g).collect();
                    match pr.kind {
                        ProjectionKind::Conv { kernel } => {
                            let pad = kernel / 2;
                            let cin = s.channels();
                            for y in 0..h {
                                for xx in 0..w {
                                    let o = &mut acc[(y * w + xx) * c..][..c];
                                    for ky in 0..kernel {
                                        let iy = (y + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kernel {
                                            let ix = (xx + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let xin = &x[(iy as usize * w + ix as usize) * cin..][..cin];
                                            for (ci, &xv) in xin.iter().enumerate() {
                                                if xv == 0.0 {
                                                    continue;
                                                }
                                                let wr = &pr.weights[((ky * kernel + kx) * cin + ci) * c..][..c];
                                                for (a, &wv) in o.iter_mut().zip(wr) {
                                                    *a += xv * wv as f64;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        ProjectionKind::Dense => {
                            let n_in = s.len();
                            for (o, a) in acc.iter_mut().enumerate() {
                                let wr = &pr.weights[o * n_in..(o + 1) * n_in];
                                *a += wr.iter().zip(&x).map(|(&wv, xv)| wv as f64 * xv).sum::<f64>();
                            }
                        }
                        ProjectionKind::Channelwise => {
                            for (j, a) in acc.iter_mut().enumerate() {
                                *a += pr.weights[j % c] as f64 * x[j];
                            }
                        }
                    }
                }
                let hi = layer.cap.map_or(1.0, |cap| (cap as f64 / 255.0).min(1.0));
                acc.iter()
                    .enumerate()
                    .map(|(j, a)| (a / layer.threshold[j % c] as f64).clamp(0.0, hi))
                    .collect()
            }
        };
        debug_assert_eq!(r.len(), p.len(), "population {i}");
        rates.push(r);
    }
    let q = spec.output_population().quant;
    let logits = rates[spec.output]
        .iter()
        .map(|r| (r * 255.0 - q.zero_point as f64) * q.scale)
        .collect();
    Ok(ReferenceOutput { rates, logits })
}
