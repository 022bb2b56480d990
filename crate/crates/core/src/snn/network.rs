//! Integer spiking network description.
//!
//! Populations are listed in evaluation order; every projection and gate
//! reads from an earlier population. A neuron's rate `r = count / T`
//! encodes the value `(255·r − zero_point)·scale` of its population's
//! [`QuantParams`].

use serde::Serialize;

use crate::convert::QuantParams;
use crate::error::{QanaError, Result};
use crate::ops::sigmoid_scalar;

/// Full-scale gain; ungated projections charge `255·w` per event.
pub const UNIT_GAIN: i64 = 255;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ProjectionKind {
    /// Stride-1 same-padded `k×k` convolution, weights `[k, k, cin, cout]`.
    Conv { kernel: usize },
    /// Weights `[out, in]` over the NHWC-flattened source.
    Dense,
    /// One weight per channel, source and target of equal shape.
    Channelwise,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub source: usize,
    pub kind: ProjectionKind,
    pub weights: Vec<i8>,
    /// Gate whose u8 gain replaces [`UNIT_GAIN`] for each source neuron.
    pub gate: Option<usize>,
}

/// Integrate-and-fire population with reset by subtraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IfLayer {
    /// Per channel, > 0.
    pub threshold: Vec<i32>,
    /// Membrane potential at step 0, per channel.
    pub initial: Vec<i32>,
    /// Charge added every step, per neuron.
    pub bias: Vec<i32>,
    /// Saturation in rate levels (255 = one spike per step); the count cap
    /// for a window of `T` steps is `floor(cap·T/255)`.
    pub cap: Option<u32>,
    pub projections: Vec<Projection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PopulationKind {
    Input,
    Integrate(IfLayer),
    /// Spikes whenever the largest running count in its window grows.
    MaxPool {
        source: usize,
        window: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population {
    pub name: String,
    /// `[H, W, C]`
    pub shape: [usize; 3],
    pub quant: QuantParams,
    pub kind: PopulationKind,
}

impl Population {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.shape[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GateKind {
    /// `σ(conv(x) + b)` with weights `[k, k, C, C]`, one gain per neuron.
    Conv {
        kernel: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    /// `σ(W2·relu(W1·mean(x) + b1) + b2)` with `W1 [r, C]`, `W2 [C, r]`,
    /// one gain per channel.
    Excite {
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    },
}

/// Multiplicative gain computed once per window from the decoded values of
/// its source population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateNode {
    pub name: String,
    pub source: usize,
    pub kind: GateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingEntry {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikingNetworkSpec {
    pub populations: Vec<Population>,
    pub gates: Vec<GateNode>,
    /// Source CNN layer → spiking element, one entry per source layer.
    pub mapping: Vec<MappingEntry>,
    pub output: usize,
}

impl GateNode {
    /// Gains in `[0, 255]` from real-valued source activations laid out
    /// `[H, W, C]`.
    pub fn evaluate(&self, values: &[f64], shape: [usize; 3]) -> Vec<u8> {
        let [h, w, c] = shape;
        let to_gain = |v: f64| (sigmoid_scalar(v) * 255.0).round().clamp(0.0, 255.0) as u8;
        match &self.kind {
            GateKind::Conv { kernel, weights, bias } => {
                let k = *kernel;
                let pad = k / 2;
                let mut out = Vec::with_capacity(values.len());
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = bias.clone();
                        for ky in 0..k {
                            let iy = (y + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (x + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let src = &values[(iy as usize * w + ix as usize) * c..][..c];
                                let wt = &weights[(ky * k + kx) * c * c..][..c * c];
                                for (ci, &v) in src.iter().enumerate() {
                                    if v == 0.0 {
                                        continue;
                                    }
                                    for (a, &wv) in acc.iter_mut().zip(&wt[ci * c..(ci + 1) * c]) {
                                        *a += v * wv;
                                    }
                                }
                            }
                        }
                        out.extend(acc.into_iter().map(to_gain));
                    }
                }
                out
            }
            GateKind::Excite { hidden, w1, b1, w2, b2 } => {
                let r = *hidden;
                let mut mean = vec![0.0; c];
                for row in values.chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= (h * w) as f64);
                let hid: Vec<f64> = (0..r)
                    .map(|j| {
                        (w1[j * c..(j + 1) * c]
                            .iter()
                            .zip(&mean)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + b1[j])
                            .max(0.0)
                    })
                    .collect();
                (0..c)
                    .map(|o| to_gain(w2[o * r..(o + 1) * r].iter().zip(&hid).map(|(a, b)| a * b).sum::<f64>() + b2[o]))
                    .collect()
            }
        }
    }

    /// Number of gains produced for a source of `shape`.
    pub fn output_len(&self, shape: [usize; 3]) -> usize {
        match self.kind {
            GateKind::Conv { .. } => shape.iter().product(),
            GateKind::Excite { .. } => shape[2],
        }
    }
}

fn invalid(msg: String) -> QanaError {
    QanaError::Config(format!("invalid spiking network: {msg}"))
}

impl SpikingNetworkSpec {
    pub fn input(&self) -> &Population {
        &self.populations[0]
    }

    pub fn output_population(&self) -> &Population {
        &self.populations[self.output]
    }

    pub fn num_classes(&self) -> usize {
        self.output_population().len()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.populations.iter().position(|p| p.name == name)
    }

    /// Structural checks: ordering, shapes, weight counts, positive
    /// thresholds.
    pub fn validate(&self) -> Result<()> {
        if self.populations.is_empty() || !matches!(self.populations[0].kind, PopulationKind::Input) {
            return Err(invalid("population 0 must be the input".into()));
        }
        if self.output >= self.populations.len() {
            return Err(invalid(format!("output index {} out of range", self.output)));
        }
        for (gi, g) in self.gates.iter().enumerate() {
            if g.source >= self.populations.len() {
                return Err(invalid(format!("gate {gi} reads missing population {}", g.source)));
            }
            let c = self.populations[g.source].channels();
            let ok = match &g.kind {
                GateKind::Conv { kernel, weights, bias } => {
                    kernel % 2 == 1 && weights.len() == kernel * kernel * c * c && bias.len() == c
                }
                GateKind::Excite { hidden, w1, b1, w2, b2 } => {
                    w1.len() == hidden * c && b1.len() == *hidden && w2.len() == c * hidden && b2.len() == c
                }
            };
            if !ok {
                return Err(invalid(format!("gate `{}` has inconsistent parameter sizes", g.name)));
            }
        }
        for (i, p) in self.populations.iter().enumerate() {
            if p.is_empty() {
                return Err(invalid(format!("population `{}` is empty", p.name)));
            }
            match &p.kind {
                PopulationKind::Input => {
                    if i != 0 {
                        return Err(invalid(format!("second input population `{}`", p.name)));
                    }
                }
                PopulationKind::MaxPool { source, window } => {
                    let s = self.populations.get(*source).filter(|_| *source < i);
                    let ok = s.is_some_and(|s| {
                        *window > 0
                            && s.shape[2] == p.shape[2]
                            && s.shape[0] / window == p.shape[0]
                            && s.shape[1] / window == p.shape[1]
                    });
                    if !ok {
                        return Err(invalid(format!("pool `{}` does not match its source", p.name)));
                    }
                }
                PopulationKind::Integrate(layer) => {
                    let c = p.channels();
                    if layer.threshold.len() != c || layer.initial.len() != c || layer.bias.len() != p.len() {
                        return Err(invalid(format!("`{}` has wrong threshold/initial/bias sizes", p.name)));
                    }
                    if layer.threshold.iter().any(|&t| t <= 0) {
                        return Err(invalid(format!("`{}` has a non-positive threshold", p.name)));
                    }
                    for pr in &layer.projections {
                        if pr.source >= i {
                            return Err(invalid(format!("`{}` reads a later population", p.name)));
                        }
                        let s = &self.populations[pr.source];
                        let need = match pr.kind {
                            ProjectionKind::Conv { kernel } => {
                                if kernel % 2 == 0 || s.shape[0] != p.shape[0] || s.shape[1] != p.shape[1] {
                                    return Err(invalid(format!(
                                        "conv into `{}` needs odd kernel and equal H, W",
                                        p.name
                                    )));
                                }
                                kernel * kernel * s.shape[2] * c
                            }
                            ProjectionKind::Dense => s.len() * p.len(),
                            ProjectionKind::Channelwise => {
                                if s.shape != p.shape {
                                    return Err(invalid(format!("channelwise into `{}` needs equal shapes", p.name)));
                                }
                                c
                            }
                        };
                        if pr.weights.len() != need {
                            return Err(invalid(format!(
                                "projection into `{}` has {} weights, expected {need}",
                                p.name,
                                pr.weights.len()
                            )));
                        }
                        if let Some(g) = pr.gate {
                            let gate = self.gates.get(g).ok_or_else(|| invalid(format!("missing gate {g}")))?;
                            if gate.source >= i {
                                return Err(invalid(format!("gate `{}` is evaluated after `{}`", gate.name, p.name)));
                            }
                            let gs = self.populations[gate.source].shape;
                            let fits = match gate.kind {
                                GateKind::Conv { .. } => gs == s.shape,
                                GateKind::Excite { .. } => gs[2] == s.shape[2],
                            };
                            if !fits {
                                return Err(invalid(format!("gate `{}` does not fit its projection", gate.name)));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Real value encoded by `count` spikes of population `pop` over `t`
    /// steps.
    pub fn decode_value(&self, pop: usize, count: f64, t: usize) -> f64 {
        let q = self.populations[pop].quant;
        (count * 255.0 / t as f64 - q.zero_point as f64) * q.scale
    }

    /// Gain index used for neuron `j` of a source population of `shape`.
    pub fn gain_index(gate: &GateNode, j: usize, shape: [usize; 3]) -> usize {
        match gate.kind {
            GateKind::Conv { .. } => j,
            GateKind::Excite { .. } => j % shape[2],
        }
    }

    /// Total synapse count (source→target weight uses).
    pub fn synapses(&self) -> u64 {
        let mut n = 0u64;
        for p in &self.populations {
            if let PopulationKind::Integrate(l) = &p.kind {
                for pr in &l.projections {
                    let s = &self.populations[pr.source];
                    n += match pr.kind {
                        ProjectionKind::Conv { kernel } => {
                            let [h, w, cin] = s.shape;
                            let pad = kernel / 2;
                            let valid = |len: usize| -> u64 {
                                (0..len)
                                    .map(|o| {
                                        (0..kernel).filter(|&k| (o + k) >= pad && o + k - pad < len).count() as u64
                                    })
                                    .sum()
                            };
                            valid(h) * valid(w) * (cin * p.channels()) as u64
                        }
                        ProjectionKind::Dense => (s.len() * p.len()) as u64,
                        ProjectionKind::Channelwise => p.len() as u64,
                    };
                }
            }
        }
        n
    }

    pub fn neurons(&self) -> u64 {
        self.populations.iter().map(|p| p.len() as u64).sum()
    }
}

/// Gate outputs evaluated at window end from `counts` of the gate source.
pub(crate) fn gate_gains(spec: &SpikingNetworkSpec, gate: usize, rates: &[f64]) -> Vec<u8> {
    let g = &spec.gates[gate];
    let pop = &spec.populations[g.source];
    let values: Vec<f64> = rates
        .iter()
        .map(|&r| (r * 255.0 - pop.quant.zero_point as f64) * pop.quant.scale)
        .collect();
    g.evaluate(&values, pop.shape)
}
