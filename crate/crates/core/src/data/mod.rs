//! Ingestion, quality filtering, preprocessing, augmentation and SMOTE.

mod augment;
mod image;
mod io;
mod smote;
mod synth;

pub use augment::{augment, augment_all, hsv_to_rgb, rgb_to_hsv, sample_rng, AugmentConfig};
pub use image::{
    preprocess, quality_filter, resize_bilinear, saturated_fraction, ImageSample, QualityConfig, RawImage,
    RejectReason, Verdict,
};
pub use io::{
    decode_raw, encode_raw, load_dataset, load_image, read_labels, read_split, select_split, stratified_split,
    write_dataset, write_samples, write_split, ImageFormat, LabelRecord, LoadedDataset, Split, SplitEntry, IMAGES_DIR,
    LABELS_FILE, SPLIT_FILE,
};
pub use smote::{
    class_counts, interpolate, knn, smote_generate, smote_oversample, Interpolation, Oversampled, SmoteConfig,
};
pub use synth::{class_sizes, generate as generate_synthetic, render as render_synthetic, SynthConfig};

use crate::error::Result;
use crate::tensor::Tensor;

/// Stack samples into a `[N, 64, 64, 3]` batch and their labels.
pub fn batch(samples: &[&ImageSample]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let px: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.pixels).collect();
    Ok((Tensor::stack(&px)?, samples.iter().map(|s| s.label).collect()))
}
