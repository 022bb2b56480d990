//! Binary container for [`SpikingNetworkSpec`].
//!
//! ```text
//! "QSNN" | version u32 | population count u32 | gate count u32 | output u32
//! population*: name | kind u8 | H W C u32 | scale f64 | zero point i32 | body
//! gate*:       name | source u32 | kind u8 | body
//! mapping:     count u64 | (source, target)*
//! ```
//!
//! All integers little-endian; strings and blobs carry a u64 length.

use std::path::Path;

use super::quant::QuantParams;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{QanaError, Result};
use crate::snn::{
    GateKind, GateNode, IfLayer, MappingEntry, Population, PopulationKind, Projection, ProjectionKind,
    SpikingNetworkSpec,
};

pub const SNN_MAGIC: &[u8; 4] = b"QSNN";
pub const SNN_VERSION: u32 = 1;

const POP_INPUT: u8 = 0;
const POP_IF: u8 = 1;
const POP_POOL: u8 = 2;
const PROJ_CONV: u8 = 0;
const PROJ_DENSE: u8 = 1;
const PROJ_CHANNEL: u8 = 2;
const GATE_CONV: u8 = 0;
const GATE_EXCITE: u8 = 1;
const NO_CAP: u32 = u32::MAX;
const NO_GATE: u32 = u32::MAX;

pub fn encode_snn(spec: &SpikingNetworkSpec) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(SNN_MAGIC);
    w.u32(SNN_VERSION);
    w.u32(spec.populations.len() as u32);
    w.u32(spec.gates.len() as u32);
    w.u32(spec.output as u32);
    for p in &spec.populations {
        w.str(&p.name);
        let tag = match p.kind {
            PopulationKind::Input => POP_INPUT,
            PopulationKind::Integrate(_) => POP_IF,
            PopulationKind::MaxPool { .. } => POP_POOL,
        };
        w.u8(tag);
        for d in p.shape {
            w.u32(d as u32);
        }
        w.f64(p.quant.scale);
        w.i32(p.quant.zero_point);
        match &p.kind {
            PopulationKind::Input => {}
            PopulationKind::MaxPool { source, window } => {
                w.u32(*source as u32);
                w.u32(*window as u32);
            }
            PopulationKind::Integrate(l) => {
                w.i32s(&l.threshold);
                w.i32s(&l.initial);
                w.i32s(&l.bias);
                w.u32(l.cap.unwrap_or(NO_CAP));
                w.u32(l.projections.len() as u32);
                for pr in &l.projections {
                    w.u32(pr.source as u32);
                    match pr.kind {
                        ProjectionKind::Conv { kernel } => {
                            w.u8(PROJ_CONV);
                            w.u32(kernel as u32);
                        }
                        ProjectionKind::Dense => w.u8(PROJ_DENSE),
                        ProjectionKind::Channelwise => w.u8(PROJ_CHANNEL),
                    }
                    w.u32(pr.gate.map_or(NO_GATE, |g| g as u32));
                    w.i8s(&pr.weights);
                }
            }
        }
    }
    for g in &spec.gates {
        w.str(&g.name);
        w.u32(g.source as u32);
        match &g.kind {
            GateKind::Conv { kernel, weights, bias } => {
                w.u8(GATE_CONV);
                w.u32(*kernel as u32);
                w.f64s(weights);
                w.f64s(bias);
            }
            GateKind::Excite { hidden, w1, b1, w2, b2 } => {
                w.u8(GATE_EXCITE);
                w.u32(*hidden as u32);
                for v in [w1, b1, w2, b2] {
                    w.f64s(v);
                }
            }
        }
    }
    w.len_prefixed(spec.mapping.len());
    for m in &spec.mapping {
        w.str(&m.source);
        w.str(&m.target);
    }
    w.into_bytes()
}

fn bad_tag(what: &str, tag: u8) -> QanaError {
    QanaError::Corrupt(format!("unknown {what} tag {tag}"))
}

pub fn decode_snn(bytes: &[u8]) -> Result<SpikingNetworkSpec> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != SNN_MAGIC {
        return Err(QanaError::Corrupt("not an SNN file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != SNN_VERSION {
        return Err(QanaError::Version {
            found: version,
            expected: SNN_VERSION,
        });
    }
    let (np, ng, output) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let mut populations = Vec::with_capacity(np.min(1024));
    for _ in 0..np {
        let name = r.str()?;
        let tag = r.u8()?;
        let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let quant = QuantParams::new(r.f64()?, r.i32()?).map_err(|e| QanaError::Corrupt(e.to_string()))?;
        let kind = match tag {
            POP_INPUT => PopulationKind::Input,
            POP_POOL => PopulationKind::MaxPool {
                source: r.u32()? as usize,
                window: r.u32()? as usize,
            },
            POP_IF => {
                let threshold = r.i32s()?;
                let initial = r.i32s()?;
                let bias = r.i32s()?;
                let cap = Some(r.u32()?).filter(|&c| c != NO_CAP);
                let n = r.u32()? as usize;
                let mut projections = Vec::with_capacity(n.min(64));
                for _ in 0..n {
                    let source = r.u32()? as usize;
                    let kind = match r.u8()? {
                        PROJ_CONV => ProjectionKind::Conv {
                            kernel: r.u32()? as usize,
                        },
                        PROJ_DENSE => ProjectionKind::Dense,
                        PROJ_CHANNEL => ProjectionKind::Channelwise,
                        t => return Err(bad_tag("projection", t)),
                    };
                    let gate = Some(r.u32()?).filter(|&g| g != NO_GATE).map(|g| g as usize);
                    projections.push(Projection {
                        source,
                        kind,
                        weights: r.i8s()?,
                        gate,
                    });
                }
                PopulationKind::Integrate(IfLayer {
                    threshold,
                    initial,
                    bias,
                    cap,
                    projections,
                })
            }
            t => return Err(bad_tag("population", t)),
        };
        populations.push(Population {
            name,
            shape,
            quant,
            kind,
        });
    }
    let mut gates = Vec::with_capacity(ng.min(64));
    for _ in 0..ng {
        let name = r.str()?;
        let source = r.u32()? as usize;
        let kind = match r.u8()? {
            GATE_CONV => GateKind::Conv {
                kernel: r.u32()? as usize,
                weights: r.f64s()?,
                bias: r.f64s()?,
            },
            GATE_EXCITE => GateKind::Excite {
                hidden: r.u32()? as usize,
                w1: r.f64s()?,
                b1: r.f64s()?,
                w2: r.f64s()?,
                b2: r.f64s()?,
            },
            t => return Err(bad_tag("gate", t)),
        };
        gates.push(GateNode { name, source, kind });
    }
    let nm = r.len_prefixed(16)?;
    let mut mapping = Vec::with_capacity(nm);
    for _ in 0..nm {
        mapping.push(MappingEntry {
            source: r.str()?,
            target: r.str()?,
        });
    }
    if !r.is_at_end() {
        return Err(QanaError::Corrupt("trailing bytes after SNN spec".into()));
    }
    let spec = SpikingNetworkSpec {
        populations,
        gates,
        mapping,
        output,
    };
    spec.validate().map_err(|e| QanaError::Corrupt(e.to_string()))?;
    Ok(spec)
}

pub fn save_snn(spec: &SpikingNetworkSpec, path: &Path) -> Result<()> {
    std::fs::write(path, encode_snn(spec))?;
    Ok(())
}

pub fn load_snn(path: &Path) -> Result<SpikingNetworkSpec> {
    decode_snn(&std::fs::read(path)?)
}
