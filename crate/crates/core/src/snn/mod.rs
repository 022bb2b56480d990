//! Converted spiking network: description, rate coding, event-driven
//! simulation, spike-count decoding and per-class threshold calibration.

mod decode;
mod encode;
mod network;
mod reference;
mod sim;

pub use decode::{
    argmax, calibrate_thresholds, decode_probs, probs_from_sums, softmax_f64, threshold_errors, thresholded_argmax,
    weighted_sums, ClassThresholds, DecodeConfig,
};
pub use encode::{encode, rate_encode, Encoding};
pub use network::{
    GateKind, GateNode, IfLayer, MappingEntry, Population, PopulationKind, Projection, ProjectionKind,
    SpikingNetworkSpec, UNIT_GAIN,
};
pub use reference::{reference_forward, ReferenceOutput};
pub use sim::{
    check_headroom, count_cap, simulate, write_trace_csv, SimOptions, SimResult, SpikeRecord, SpikeTrains, TraceEvent,
};

use serde::Serialize;

use crate::error::Result;

pub const DEFAULT_WINDOW: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerEvents {
    pub layer: String,
    pub neurons: usize,
    pub events: u64,
    /// Events per neuron per step.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeStats {
    pub window: usize,
    pub total_events: u64,
    pub per_layer: Vec<LayerEvents>,
}

impl SpikeStats {
    pub fn from_result(spec: &SpikingNetworkSpec, res: &SimResult, t: usize) -> Self {
        let per_layer = spec
            .populations
            .iter()
            .zip(&res.events)
            .map(|(p, &e)| LayerEvents {
                layer: p.name.clone(),
                neurons: p.len(),
                events: e,
                rate: e as f64 / (p.len() * t) as f64,
            })
            .collect();
        Self {
            window: t,
            total_events: res.total_events(),
            per_layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
    /// Output values decoded from spike counts through the output
    /// population's quantization.
    pub logits: Vec<f64>,
    pub totals: Vec<u64>,
    pub stats: SpikeStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub window: usize,
    pub encoding: Encoding,
    pub decode: DecodeConfig,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            encoding: Encoding::Regular,
            decode: DecodeConfig::default(),
        }
    }
}

/// Output values decoded from final counts.
pub fn decode_logits(spec: &SpikingNetworkSpec, record: &SpikeRecord) -> Vec<f64> {
    let t = record.window();
    record
        .totals
        .iter()
        .map(|&c| spec.decode_value(spec.output, c as f64, t))
        .collect()
}

/// `α` under which the decoded probabilities equal the softmax of the
/// decoded output values: the zero-point offset is common to all classes
/// and cancels.
pub fn matched_alpha(spec: &SpikingNetworkSpec, t: usize) -> f64 {
    255.0 * spec.output_population().quant.scale / t as f64
}

pub fn run(spec: &SpikingNetworkSpec, pixels: &[f32], cfg: &PredictConfig, opts: &SimOptions) -> Result<SimResult> {
    let input = encode(pixels, cfg.window, cfg.encoding)?;
    simulate(spec, &input, opts)
}

pub fn predict(
    spec: &SpikingNetworkSpec,
    pixels: &[f32],
    cfg: &PredictConfig,
    thresholds: Option<&ClassThresholds>,
) -> Result<Prediction> {
    let res = run(spec, pixels, cfg, &SimOptions::default())?;
    prediction_from(spec, &res, cfg, thresholds)
}

pub fn prediction_from(
    spec: &SpikingNetworkSpec,
    res: &SimResult,
    cfg: &PredictConfig,
    thresholds: Option<&ClassThresholds>,
) -> Result<Prediction> {
    let probs = decode_probs(&res.record, &cfg.decode)?;
    let totals = res.record.totals.clone();
    let class = match thresholds {
        Some(th) => thresholded_argmax(&probs, &totals, th),
        None => argmax(&probs),
    };
    Ok(Prediction {
        class,
        logits: decode_logits(spec, &res.record),
        probs,
        totals,
        stats: SpikeStats::from_result(spec, res, cfg.window),
    })
}
