use serde::Serialize;

use super::dequant::dequantized_forward;
use super::fold::FoldedModel;
use crate::data::ImageSample;
use crate::error::{QanaError, Result};
use crate::snn::{argmax, decode_logits, rate_encode, simulate, SimOptions, SpikingNetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub window: usize,
    pub samples: usize,
    /// Per sample, max over classes of |SNN logit − reference logit|.
    pub logit_deviation: Vec<f64>,
    pub max_logit_deviation: f64,
    pub mean_logit_deviation: f64,
    /// SNN argmax equal to the dequantized reference argmax.
    pub argmax_agreement: f64,
    /// SNN argmax equal to the float (folded) network argmax.
    pub float_agreement: f64,
    /// Dequantized reference argmax equal to the float argmax.
    pub reference_float_agreement: f64,
    /// SNN accuracy against the probe labels.
    pub snn_accuracy: f64,
}

/// Run the float network, the dequantized reference and the simulator on
/// every probe sample with a window of `t` steps.
pub fn verify_conversion(
    model: &FoldedModel,
    spec: &SpikingNetworkSpec,
    probes: &[ImageSample],
    t: usize,
) -> Result<VerifyReport> {
    if probes.is_empty() {
        return Err(QanaError::EmptyBatch {
            op: "verify_conversion",
        });
    }
    let mut dev = Vec::with_capacity(probes.len());
    let (mut agree, mut agree_float, mut ref_float, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for s in probes {
        let x = s.pixels.cast::<f64>().reshape(&[1, 64, 64, 3])?;
        let float = model.forward(&x)?;
        let reference = dequantized_forward(model, spec, s.pixels.data())?;
        let input = rate_encode(s.pixels.data(), t)?;
        let res = simulate(spec, &input, &SimOptions::default())?;
        let snn = decode_logits(spec, &res.record);
        dev.push(
            snn.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        let (a_snn, a_ref, a_float) = (argmax(&snn), argmax(&reference), argmax(float.data()));
        agree += (a_snn == a_ref) as usize;
        agree_float += (a_snn == a_float) as usize;
        ref_float += (a_ref == a_float) as usize;
        correct += (a_snn == s.label) as usize;
    }
    let n = probes.len() as f64;
    Ok(VerifyReport {
        window: t,
        samples: probes.len(),
        max_logit_deviation: dev.iter().copied().fold(0.0, f64::max),
        mean_logit_deviation: dev.iter().sum::<f64>() / n,
        logit_deviation: dev,
        argmax_agreement: agree as f64 / n,
        float_agreement: agree_float as f64 / n,
        reference_float_agreement: ref_float as f64 / n,
        snn_accuracy: correct as f64 / n,
    })
}
