//! CNN-to-SNN conversion: BN folding, activation calibration, 8-bit
//! quantization, operator mapping and conversion checks.

mod calibrate;
mod dequant;
mod file;
mod fold;
mod map;
mod quant;
mod verify;

pub use calibrate::{calibrate, signed_range, unsigned_range, Calibration, CALIBRATION_PERCENTILE};
pub use dequant::dequantized_forward;
pub use file::{decode_snn, encode_snn, load_snn, save_snn, SNN_MAGIC, SNN_VERSION};
pub use fold::{fold_batchnorm, fold_conv_bn, FoldedActivations, FoldedBlock, FoldedConv, FoldedModel, SeWeights};
pub use map::{cost_report, map_operators, CostReport};
pub use quant::{dequantize, percentile, quantize_symmetric, quantize_tensor, QuantParams, QuantizedTensor};
pub use verify::{verify_conversion, VerifyReport};

use crate::arch::QanaModel;
use crate::data::ImageSample;
use crate::error::Result;
use crate::snn::SpikingNetworkSpec;
use crate::tensor::Real;

pub struct Conversion {
    pub folded: FoldedModel,
    pub calibration: Calibration,
    pub spec: SpikingNetworkSpec,
}

/// Fold, calibrate on `calibration_set` and map in one go.
pub fn convert<T: Real>(model: &QanaModel<T>, calibration_set: &[ImageSample]) -> Result<Conversion> {
    let folded = fold_batchnorm(model)?;
    let calibration = calibrate(&folded, calibration_set, CALIBRATION_PERCENTILE)?;
    let spec = map_operators(&folded, &model.spec(), &calibration)?;
    Ok(Conversion {
        folded,
        calibration,
        spec,
    })
}
