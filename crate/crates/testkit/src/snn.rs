//! Dense per-step simulation of a spiking network spec, and random tiny
//! networks to feed it.
//!
//! Every projection is expanded into a full `[targets × sources]` integer
//! matrix (gathered per output, not scattered per event) and every neuron
//! is updated every step.

use qana_core::convert::QuantParams;
use qana_core::snn::{
    GateKind, GateNode, IfLayer, Population, PopulationKind, Projection, ProjectionKind, SpikingNetworkSpec,
};
use rand::Rng;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn gain(v: f64) -> i64 {
    (sigmoid(v) * 255.0).round().clamp(0.0, 255.0) as i64
}

/// Gains for every source neuron of `src_shape`, from source values.
fn gate_gains(g: &GateNode, values: &[f64], shape: [usize; 3]) -> Vec<i64> {
    let [h, w, c] = shape;
    match &g.kind {
        GateKind::Conv { kernel, weights, bias } => {
            let k = *kernel as isize;
            let pad = k / 2;
            let mut out = vec![0; h * w * c];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    for co in 0..c {
                        let mut a = bias[co];
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (y + ky - pad, x + kx - pad);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    let wv = weights[(((ky * k + kx) as usize) * c + ci) * c + co];
                                    a += wv * values[(iy as usize * w + ix as usize) * c + ci];
                                }
                            }
                        }
                        out[(y as usize * w + x as usize) * c + co] = gain(a);
                    }
                }
            }
            out
        }
        GateKind::Excite { hidden, w1, b1, w2, b2 } => {
            let mean: Vec<f64> = (0..c)
                .map(|ch| (0..h * w).map(|s| values[s * c + ch]).sum::<f64>() / (h * w) as f64)
                .collect();
            let hid: Vec<f64> = (0..*hidden)
                .map(|j| ((0..c).map(|ch| w1[j * c + ch] * mean[ch]).sum::<f64>() + b1[j]).max(0.0))
                .collect();
            let per_channel: Vec<i64> = (0..c)
                .map(|o| gain((0..*hidden).map(|j| w2[o * hidden + j] * hid[j]).sum::<f64>() + b2[o]))
                .collect();
            (0..h * w * c).map(|i| per_channel[i % c]).collect()
        }
    }
}

/// `m[i][j]`: weight from source neuron `j` to target neuron `i`.
fn dense_matrix(pr: &Projection, src: [usize; 3], dst: [usize; 3]) -> Vec<Vec<i64>> {
    let n_src: usize = src.iter().product();
    let n_dst: usize = dst.iter().product();
    let mut m = vec![vec![0i64; n_src]; n_dst];
    match pr.kind {
        ProjectionKind::Conv { kernel } => {
            let [h, w, cin] = src;
            let cout = dst[2];
            let pad = (kernel / 2) as isize;
            for y in 0..h {
                for x in 0..w {
                    for co in 0..cout {
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let iy = y as isize + ky as isize - pad;
                                let ix = x as isize + kx as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let j = (iy as usize * w + ix as usize) * cin + ci;
                                    m[(y * w + x) * cout + co][j] +=
                                        pr.weights[((ky * kernel + kx) * cin + ci) * cout + co] as i64;
                                }
                            }
                        }
                    }
                }
            }
        }
        ProjectionKind::Dense => {
            for (i, row) in m.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = pr.weights[i * n_src + j] as i64;
                }
            }
        }
        ProjectionKind::Channelwise => {
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = pr.weights[i % dst[2]] as i64;
            }
        }
    }
    m
}

pub struct DenseResult {
    /// `spikes[p][t]`: per-neuron 0/1 at step `t` for population `p`.
    pub spikes: Vec<Vec<Vec<u8>>>,
    pub counts: Vec<Vec<u32>>,
}

/// `input[t][j]` = 1 when input neuron `j` spikes at step `t + 1`.
pub fn dense_simulate(spec: &SpikingNetworkSpec, input: &[Vec<u8>]) -> DenseResult {
    let t_len = input.len();
    let mut spikes: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut counts: Vec<Vec<u32>> = Vec::new();
    for p in &spec.populations {
        let n = p.len();
        let trains: Vec<Vec<u8>> = match &p.kind {
            PopulationKind::Input => input.to_vec(),
            PopulationKind::MaxPool { source, window } => {
                let s = &spec.populations[*source];
                let [_, sw, sc] = s.shape;
                let [ph, pw, c] = p.shape;
                let mut run = vec![0u32; s.len()];
                let mut prev = vec![0u32; n];
                let mut out = Vec::new();
                for t in 0..t_len {
                    for (r, &b) in run.iter_mut().zip(&spikes[*source][t]) {
                        *r += b as u32;
                    }
                    let mut row = vec![0u8; n];
                    for y in 0..ph {
                        for x in 0..pw {
                            for ch in 0..c {
                                let mut m = 0;
                                for dy in 0..*window {
                                    for dx in 0..*window {
                                        m = m.max(run[((y * window + dy) * sw + x * window + dx) * sc + ch]);
                                    }
                                }
                                let o = (y * pw + x) * c + ch;
                                if m > prev[o] {
                                    row[o] = 1;
                                    prev[o] = m;
                                }
                            }
                        }
                    }
                    out.push(row);
                }
                out
            }
            PopulationKind::Integrate(l) => simulate_if(spec, p, l, &spikes, &counts, t_len),
        };
        let mut cnt = vec![0u32; n];
        for row in &trains {
            for (c, &b) in cnt.iter_mut().zip(row) {
                *c += b as u32;
            }
        }
        counts.push(cnt);
        spikes.push(trains);
    }
    DenseResult { spikes, counts }
}

fn simulate_if(
    spec: &SpikingNetworkSpec,
    p: &Population,
    l: &IfLayer,
    spikes: &[Vec<Vec<u8>>],
    counts: &[Vec<u32>],
    t_len: usize,
) -> Vec<Vec<u8>> {
    let n = p.len();
    let c = p.channels();
    let mats: Vec<(usize, Vec<Vec<i64>>, Vec<i64>)> = l
        .projections
        .iter()
        .map(|pr| {
            let s = &spec.populations[pr.source];
            let gains = match pr.gate {
                Some(g) => {
                    let gate = &spec.gates[g];
                    let gs = &spec.populations[gate.source];
                    let q = gs.quant;
                    let values: Vec<f64> = counts[gate.source]
                        .iter()
                        .map(|&k| (k as f64 / t_len as f64 * 255.0 - q.zero_point as f64) * q.scale)
                        .collect();
                    let g = gate_gains(gate, &values, gs.shape);
                    match gate.kind {
                        GateKind::Conv { .. } => g,
                        GateKind::Excite { .. } => (0..s.len()).map(|j| g[j % s.channels()]).collect(),
                    }
                }
                None => vec![255; s.len()],
            };
            (pr.source, dense_matrix(pr, s.shape, p.shape), gains)
        })
        .collect();
    let cap = l.cap.map_or(u64::MAX, |cap| cap as u64 * t_len as u64 / 255);
    let mut v: Vec<i64> = (0..n).map(|i| l.initial[i % c] as i64).collect();
    let mut cnt = vec![0u64; n];
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut row = vec![0u8; n];
        for i in 0..n {
            let mut charge = l.bias[i] as i64;
            for (src, m, g) in &mats {
                for (j, &s) in spikes[*src][t].iter().enumerate() {
                    if s == 1 {
                        charge += m[i][j] * g[j];
                    }
                }
            }
            v[i] += charge;
            let th = l.threshold[i % c] as i64;
            if v[i] >= th && cnt[i] < cap {
                v[i] -= th;
                cnt[i] += 1;
                row[i] = 1;
            }
        }
        out.push(row);
    }
    out
}

fn rand_i8s<R: Rng>(r: &mut R, n: usize) -> Vec<i8> {
    (0..n).map(|_| r.gen_range(-127..=127)).collect()
}

fn rand_f64s<R: Rng>(r: &mut R, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-a..a)).collect()
}

/// Random valid network with at most `max_neurons` neurons in total,
/// mixing conv, dense, channelwise, pool and gated projections.
pub fn random_network<R: Rng>(r: &mut R, max_neurons: usize) -> SpikingNetworkSpec {
    let side = r.gen_range(1..=4usize);
    let c0 = r.gen_range(1..=3usize);
    let mut pops = vec![Population {
        name: "input".into(),
        shape: [side, side, c0],
        quant: QuantParams::unsigned(1.0),
        kind: PopulationKind::Input,
    }];
    let mut gates: Vec<GateNode> = Vec::new();
    let mut total = side * side * c0;
    let layers = r.gen_range(1..=4);
    for li in 0..layers {
        let prev = pops.len() - 1;
        let ps = pops[prev].shape;
        let remaining = max_neurons.saturating_sub(total);
        if remaining == 0 {
            break;
        }
        let choice = r.gen_range(0..4);
        let quant = QuantParams::asymmetric(-r.gen_range(0.0..2.0), r.gen_range(0.1..3.0));
        let name = format!("p{li}");
        if choice == 3 && ps[0] >= 2 && ps[1] >= 2 {
            let shape = [ps[0] / 2, ps[1] / 2, ps[2]];
            total += shape.iter().product::<usize>();
            pops.push(Population {
                name,
                shape,
                quant: pops[prev].quant,
                kind: PopulationKind::MaxPool {
                    source: prev,
                    window: 2,
                },
            });
            continue;
        }
        let (shape, kind) = match choice {
            0 => {
                let cout = r.gen_range(1..=3);
                (
                    [ps[0], ps[1], cout],
                    ProjectionKind::Conv {
                        kernel: [1, 3][r.gen_range(0..2)],
                    },
                )
            }
            1 => ([1, 1, r.gen_range(1..=6)], ProjectionKind::Dense),
            _ => (ps, ProjectionKind::Channelwise),
        };
        let n: usize = shape.iter().product();
        if n > remaining {
            break;
        }
        total += n;
        let weights_for = |kind: &ProjectionKind, src: [usize; 3], r: &mut R| match kind {
            ProjectionKind::Conv { kernel } => rand_i8s(r, kernel * kernel * src[2] * shape[2]),
            ProjectionKind::Dense => rand_i8s(r, src.iter().product::<usize>() * n),
            ProjectionKind::Channelwise => rand_i8s(r, shape[2]),
        };
        let gate = if r.gen_bool(0.3) {
            let ch = ps[2];
            let kind = if r.gen_bool(0.5) {
                let k = [1, 3][r.gen_range(0..2)];
                GateKind::Conv {
                    kernel: k,
                    weights: rand_f64s(r, k * k * ch * ch, 2.0),
                    bias: rand_f64s(r, ch, 1.0),
                }
            } else {
                let hidden = r.gen_range(1..=3);
                GateKind::Excite {
                    hidden,
                    w1: rand_f64s(r, hidden * ch, 2.0),
                    b1: rand_f64s(r, hidden, 1.0),
                    w2: rand_f64s(r, ch * hidden, 2.0),
                    b2: rand_f64s(r, ch, 1.0),
                }
            };
            gates.push(GateNode {
                name: format!("g{li}"),
                source: prev,
                kind,
            });
            Some(gates.len() - 1)
        } else {
            None
        };
        let mut projections = vec![Projection {
            source: prev,
            weights: weights_for(&kind, ps, r),
            kind: kind.clone(),
            gate,
        }];
        // occasional second projection straight from the input
        if prev != 0 && r.gen_bool(0.4) {
            let src = pops[0].shape;
            let k2 = match kind {
                ProjectionKind::Conv { .. } if src[0] == shape[0] && src[1] == shape[1] => Some(kind.clone()),
                ProjectionKind::Dense => Some(ProjectionKind::Dense),
                ProjectionKind::Channelwise if src == shape => Some(ProjectionKind::Channelwise),
                _ => None,
            };
            if let Some(k2) = k2 {
                projections.push(Projection {
                    source: 0,
                    weights: weights_for(&k2, src, r),
                    kind: k2,
                    gate: None,
                });
            }
        }
        let c = shape[2];
        let threshold: Vec<i32> = (0..c).map(|_| r.gen_range(1..40_000)).collect();
        let initial = threshold.iter().map(|&t| r.gen_range(-t..=t)).collect();
        let bias = (0..n)
            .map(|_| {
                if r.gen_bool(0.5) {
                    0
                } else {
                    r.gen_range(-20_000..20_000)
                }
            })
            .collect();
        let cap = r.gen_bool(0.3).then(|| r.gen_range(0..300));
        pops.push(Population {
            name,
            shape,
            quant,
            kind: PopulationKind::Integrate(IfLayer {
                threshold,
                initial,
                bias,
                cap,
                projections,
            }),
        });
    }
    let output = pops.len() - 1;
    SpikingNetworkSpec {
        populations: pops,
        gates,
        mapping: Vec::new(),
        output,
    }
}

/// Bernoulli input spikes, `[t][neuron]`.
pub fn random_input<R: Rng>(r: &mut R, neurons: usize, t: usize) -> Vec<Vec<u8>> {
    let rates: Vec<f64> = (0..neurons).map(|_| r.gen_range(0.0..1.0)).collect();
    (0..t)
        .map(|_| rates.iter().map(|&p| r.gen_bool(p) as u8).collect())
        .collect()
}
