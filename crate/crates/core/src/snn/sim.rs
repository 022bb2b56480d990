//! Event-driven, layer-sequential simulation.
//!
//! Each population is run over the whole window before the next one, so a
//! gate can read its source's final counts before any gated projection
//! fires. Within a step only the sites (spatial positions) that received a
//! charge, carry a bias, or still sit above threshold are visited.

use std::io::Write;

use serde::Serialize;

use super::network::{gate_gains, GateKind, IfLayer, PopulationKind, ProjectionKind, SpikingNetworkSpec, UNIT_GAIN};
use crate::error::{QanaError, Result};

/// Spike events per step: `steps[t]` lists the neurons firing at step
/// `t + 1`, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpikeTrains {
    pub neurons: usize,
    pub steps: Vec<Vec<u32>>,
}

impl SpikeTrains {
    pub fn window(&self) -> usize {
        self.steps.len()
    }

    pub fn counts(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.neurons];
        for s in &self.steps {
            for &i in s {
                c[i as usize] += 1;
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.steps.iter().map(|s| s.len() as u64).sum()
    }
}

/// Output-class spike counts per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpikeRecord {
    /// `per_step[t][c]` = S_c(t+1)
    pub per_step: Vec<Vec<u32>>,
    pub totals: Vec<u64>,
}

impl SpikeRecord {
    pub fn from_trains(trains: &SpikeTrains) -> Self {
        let mut per_step = Vec::with_capacity(trains.window());
        let mut totals = vec![0u64; trains.neurons];
        for s in &trains.steps {
            let mut row = vec![0u32; trains.neurons];
            for &i in s {
                row[i as usize] += 1;
                totals[i as usize] += 1;
            }
            per_step.push(row);
        }
        Self { per_step, totals }
    }

    pub fn window(&self) -> usize {
        self.per_step.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub step: u32,
    pub layer: u32,
    pub neuron: u32,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Keep every spike event for a CSV dump.
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub record: SpikeRecord,
    /// Final spike count of every neuron, per population.
    pub counts: Vec<Vec<u32>>,
    /// Events emitted per population.
    pub events: Vec<u64>,
    pub trace: Vec<TraceEvent>,
}

impl SimResult {
    pub fn total_events(&self) -> u64 {
        self.events.iter().sum()
    }
}

/// `step,layer,neuron,event` rows, one per spike.
pub fn write_trace_csv<W: Write>(spec: &SpikingNetworkSpec, trace: &[TraceEvent], mut out: W) -> Result<()> {
    writeln!(out, "step,layer,neuron,event")?;
    for e in trace {
        writeln!(
            out,
            "{},{},{},spike",
            e.step, spec.populations[e.layer as usize].name, e.neuron
        )?;
    }
    Ok(())
}

/// Weights widened and laid out for fan-out from a single source spike.
enum Fanout {
    /// `w[((ky·k + kx)·cin + ci)·cout + co]`
    Conv {
        k: usize,
        w: Vec<i64>,
    },
    /// `w[j·out + o]`
    Dense {
        w: Vec<i64>,
    },
    Channelwise {
        w: Vec<i64>,
    },
}

struct Prepared {
    source: usize,
    fanout: Fanout,
    /// Gains and the stride mapping a source neuron to its gain (one per
    /// neuron or one per channel); `None` means [`UNIT_GAIN`], already
    /// folded into the weights.
    gains: Option<(Vec<i64>, usize)>,
}

/// Count cap for a window of `t` steps.
pub fn count_cap(cap_levels: Option<u32>, t: usize) -> u32 {
    match cap_levels {
        Some(c) => ((c as u64 * t as u64) / 255).min(u32::MAX as u64) as u32,
        None => u32::MAX,
    }
}

fn prepare(spec: &SpikingNetworkSpec, layer: &IfLayer, counts: &[Vec<u32>], t: usize) -> Vec<Prepared> {
    layer
        .projections
        .iter()
        .map(|pr| {
            let src = &spec.populations[pr.source];
            let gains = pr.gate.map(|g| {
                let gs = spec.gates[g].source;
                let rates: Vec<f64> = counts[gs].iter().map(|&c| c as f64 / t as f64).collect();
                let g8 = gate_gains(spec, g, &rates);
                let stride = match spec.gates[g].kind {
                    GateKind::Conv { .. } => usize::MAX,
                    GateKind::Excite { .. } => src.channels(),
                };
                (g8.into_iter().map(i64::from).collect::<Vec<_>>(), stride)
            });
            let unit = if gains.is_some() { 1 } else { UNIT_GAIN };
            let widen = |w: &[i8]| w.iter().map(|&v| v as i64 * unit).collect::<Vec<i64>>();
            let fanout = match pr.kind {
                ProjectionKind::Conv { kernel } => Fanout::Conv {
                    k: kernel,
                    w: widen(&pr.weights),
                },
                ProjectionKind::Dense => {
                    let (n_in, n_out) = (src.len(), pr.weights.len() / src.len());
                    let mut w = vec![0i64; n_in * n_out];
                    for o in 0..n_out {
                        for j in 0..n_in {
                            w[j * n_out + o] = pr.weights[o * n_in + j] as i64 * unit;
                        }
                    }
                    Fanout::Dense { w }
                }
                ProjectionKind::Channelwise => Fanout::Channelwise { w: widen(&pr.weights) },
            };
            Prepared {
                source: pr.source,
                fanout,
                gains,
            }
        })
        .collect()
}

/// Fail with [`QanaError::Overflow`] when some membrane could leave the
/// i64 range within `t` steps: `|v| ≤ θ + |v0| + t·(max step charge)`.
pub fn check_headroom(spec: &SpikingNetworkSpec, t: usize) -> Result<()> {
    for (i, p) in spec.populations.iter().enumerate() {
        let PopulationKind::Integrate(layer) = &p.kind else {
            continue;
        };
        let mut step: i128 = layer.bias.iter().map(|&b| (b as i128).abs()).max().unwrap_or(0);
        for pr in &layer.projections {
            let src = &spec.populations[pr.source];
            let fan_in = match pr.kind {
                ProjectionKind::Conv { kernel } => kernel * kernel * src.channels(),
                ProjectionKind::Dense => src.len(),
                ProjectionKind::Channelwise => 1,
            };
            let max_w = pr.weights.iter().map(|&v| (v as i128).abs()).max().unwrap_or(0);
            step += max_w * UNIT_GAIN as i128 * fan_in as i128;
        }
        let th = layer.threshold.iter().map(|&v| v as i128).max().unwrap_or(0);
        let v0 = layer.initial.iter().map(|&v| (v as i128).abs()).max().unwrap_or(0);
        if th + v0 + step * t as i128 >= i64::MAX as i128 {
            return Err(QanaError::Overflow {
                population: i,
                window: t,
            });
        }
    }
    Ok(())
}

struct Sites {
    stamp: Vec<u32>,
    list: Vec<u32>,
}

impl Sites {
    fn mark(&mut self, s: usize, tag: u32) {
        if self.stamp[s] != tag {
            self.stamp[s] = tag;
            self.list.push(s as u32);
        }
    }
}

fn run_if(
    spec: &SpikingNetworkSpec,
    pop: usize,
    layer: &IfLayer,
    trains: &[Option<SpikeTrains>],
    counts: &[Vec<u32>],
    t: usize,
) -> Result<SpikeTrains> {
    let p = &spec.populations[pop];
    let [h, w, c] = p.shape;
    let n = p.len();
    let prepared = prepare(spec, layer, counts, t);
    let cap = count_cap(layer.cap, t);
    let theta: Vec<i64> = layer.threshold.iter().map(|&v| v as i64).collect();
    let mut v: Vec<i64> = (0..n).map(|i| layer.initial[i % c] as i64).collect();
    let bias: Vec<i64> = layer.bias.iter().map(|&b| b as i64).collect();
    let mut count = vec![0u32; n];
    let biased: Vec<u32> = (0..h * w)
        .filter(|&s| bias[s * c..(s + 1) * c].iter().any(|&b| b != 0))
        .map(|s| s as u32)
        .collect();
    let mut pending: Vec<u32> = (0..h * w)
        .filter(|&s| (0..c).any(|ch| v[s * c + ch] >= theta[ch] && cap > 0))
        .map(|s| s as u32)
        .collect();
    let mut sites = Sites {
        stamp: vec![u32::MAX; h * w],
        list: Vec::new(),
    };
    let mut out = SpikeTrains {
        neurons: n,
        steps: Vec::with_capacity(t),
    };

    for step in 0..t {
        let tag = step as u32;
        sites.list.clear();
        for pr in &prepared {
            let src = &spec.populations[pr.source];
            let [sh, sw, sc] = src.shape;
            let events = &trains[pr.source].as_ref().expect("source trains retained").steps[step];
            for &j in events {
                let j = j as usize;
                let g = pr.gains.as_ref().map_or(1, |(g, stride)| g[j % stride]);
                if g == 0 {
                    continue;
                }
                match &pr.fanout {
                    Fanout::Conv { k, w: wt } => {
                        let (iy, ix, ci) = (j / (sw * sc), (j / sc) % sw, j % sc);
                        let pad = k / 2;
                        for ky in 0..*k {
                            // output row oy sees input row oy + ky − pad
                            let oy = iy as isize + pad as isize - ky as isize;
                            if oy < 0 || oy >= sh as isize {
                                continue;
                            }
                            for kx in 0..*k {
                                let ox = ix as isize + pad as isize - kx as isize;
                                if ox < 0 || ox >= sw as isize {
                                    continue;
                                }
                                let site = oy as usize * w + ox as usize;
                                let row = &wt[((ky * k + kx) * sc + ci) * c..][..c];
                                for (vv, &wv) in v[site * c..(site + 1) * c].iter_mut().zip(row) {
                                    *vv += wv * g;
                                }
                                sites.mark(site, tag);
                            }
                        }
                    }
                    Fanout::Dense { w: wt } => {
                        let row = &wt[j * n..(j + 1) * n];
                        for (vv, &wv) in v.iter_mut().zip(row) {
                            *vv += wv * g;
                        }
                        for s in 0..h * w {
                            sites.mark(s, tag);
                        }
                    }
                    Fanout::Channelwise { w: wt } => {
                        v[j] += wt[j % c] * g;
                        sites.mark(j / c, tag);
                    }
                }
            }
        }
        for &s in &biased {
            let s = s as usize;
            for (vv, &b) in v[s * c..(s + 1) * c].iter_mut().zip(&bias[s * c..(s + 1) * c]) {
                *vv += b;
            }
            sites.mark(s, tag);
        }
        for &s in &pending {
            sites.mark(s as usize, tag);
        }
        pending.clear();
        let mut fired = Vec::new();
        for &s in &sites.list {
            let s = s as usize;
            let mut still = false;
            for ch in 0..c {
                let i = s * c + ch;
                if v[i] >= theta[ch] && count[i] < cap {
                    v[i] -= theta[ch];
                    count[i] += 1;
                    fired.push(i as u32);
                    still |= v[i] >= theta[ch] && count[i] < cap;
                }
            }
            if still {
                pending.push(s as u32);
            }
        }
        fired.sort_unstable();
        out.steps.push(fired);
    }
    Ok(out)
}

fn run_pool(
    spec: &SpikingNetworkSpec,
    pop: usize,
    source: usize,
    window: usize,
    trains: &[Option<SpikeTrains>],
) -> SpikeTrains {
    let p = &spec.populations[pop];
    let [_, sw, sc] = spec.populations[source].shape;
    let [ph, pw, _] = p.shape;
    let src = trains[source].as_ref().expect("source trains retained");
    let mut running = vec![0u32; src.neurons];
    let mut best = vec![0u32; p.len()];
    let mut out = SpikeTrains {
        neurons: p.len(),
        steps: Vec::with_capacity(src.window()),
    };
    for events in &src.steps {
        let mut fired = Vec::new();
        for &j in events {
            let j = j as usize;
            running[j] += 1;
            let (y, x, ch) = (j / (sw * sc) / window, (j / sc) % sw / window, j % sc);
            // rows/columns beyond the last full window are dropped
            if y >= ph || x >= pw {
                continue;
            }
            let o = (y * pw + x) * sc + ch;
            if running[j] > best[o] {
                best[o] = running[j];
                fired.push(o as u32);
            }
        }
        fired.sort_unstable();
        out.steps.push(fired);
    }
    out
}

/// Run `spec` on input spike trains; the window length is
/// `input.window()`.
pub fn simulate(spec: &SpikingNetworkSpec, input: &SpikeTrains, opts: &SimOptions) -> Result<SimResult> {
    spec.validate()?;
    let t = input.window();
    if t == 0 {
        return Err(QanaError::Config("simulation window T must be >= 1".into()));
    }
    if t > u32::MAX as usize {
        return Err(QanaError::Config(format!("window {t} too long")));
    }
    check_headroom(spec, t)?;
    if input.neurons != spec.input().len() {
        return Err(QanaError::Shape {
            op: "simulate",
            detail: format!(
                "input has {} neurons, network expects {}",
                input.neurons,
                spec.input().len()
            ),
        });
    }
    let np = spec.populations.len();
    // last population that reads each population's spikes
    let mut last_use = vec![0usize; np];
    for (i, p) in spec.populations.iter().enumerate() {
        match &p.kind {
            PopulationKind::Integrate(l) => {
                for pr in &l.projections {
                    last_use[pr.source] = last_use[pr.source].max(i);
                }
            }
            PopulationKind::MaxPool { source, .. } => last_use[*source] = last_use[*source].max(i),
            PopulationKind::Input => {}
        }
    }
    let mut trains: Vec<Option<SpikeTrains>> = vec![None; np];
    let mut counts: Vec<Vec<u32>> = Vec::with_capacity(np);
    let mut events = Vec::with_capacity(np);
    let mut trace = Vec::new();
    let mut output = None;
    for i in 0..np {
        let tr = match &spec.populations[i].kind {
            PopulationKind::Input => input.clone(),
            PopulationKind::Integrate(l) => run_if(spec, i, l, &trains, &counts, t)?,
            PopulationKind::MaxPool { source, window } => run_pool(spec, i, *source, *window, &trains),
        };
        if opts.trace {
            for (s, ev) in tr.steps.iter().enumerate() {
                trace.extend(ev.iter().map(|&n| TraceEvent {
                    step: s as u32 + 1,
                    layer: i as u32,
                    neuron: n,
                }));
            }
        }
        counts.push(tr.counts());
        events.push(tr.total());
        if i == spec.output {
            output = Some(SpikeRecord::from_trains(&tr));
        }
        trains[i] = Some(tr);
        for (j, slot) in trains.iter_mut().enumerate().take(i + 1) {
            if last_use[j] <= i && j != i {
                *slot = None;
            }
        }
    }
    Ok(SimResult {
        record: output.expect("output population simulated"),
        counts,
        events,
        trace,
    })
}
