//! Raw images, quality checks and resizing to the network input.

use std::fmt;

use crate::arch::{INPUT_CHANNELS, INPUT_SIDE};
use crate::error::{shape_err, QanaError, Result};
use crate::tensor::Tensor;

/// An RGB image on the 0..=255 scale, HWC row-major, before any resizing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * INPUT_CHANNELS {
            return Err(shape_err(
                "raw_image",
                format!(
                    "{height}x{width}x3 needs {} values, got {}",
                    height * width * 3,
                    data.len()
                ),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * INPUT_CHANNELS],
        }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("dimensions match")
    }
}

/// A network-ready sample: `[64, 64, 3]` pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Tensor<f32>,
    pub label: usize,
    pub source_id: String,
    /// Produced by oversampling rather than read from disk.
    pub synthetic: bool,
}

impl ImageSample {
    pub fn new(pixels: Tensor<f32>, label: usize, source_id: impl Into<String>) -> Result<Self> {
        if pixels.shape() != [INPUT_SIDE, INPUT_SIDE, INPUT_CHANNELS] {
            return Err(shape_err(
                "image_sample",
                format!("expected [64,64,3], got {:?}", pixels.shape()),
            ));
        }
        if pixels.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(QanaError::Config("sample pixels must lie in [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            label,
            source_id: source_id.into(),
            synthetic: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityConfig {
    pub min_side: usize,
    /// On the unit scale, over all channel values.
    pub min_variance: f64,
    pub max_saturated_fraction: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            min_side: 32,
            min_variance: 1e-4,
            max_saturated_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    LowResolution,
    LowVariance,
    Saturated,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LowResolution => "low_resolution",
            Self::LowVariance => "low_variance",
            Self::Saturated => "saturated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Reject(RejectReason),
}

/// A pixel counts as saturated when every channel is clipped at 0 or every
/// channel is clipped at 255.
pub fn saturated_fraction(img: &RawImage) -> f64 {
    let n = img.height * img.width;
    let clipped = img
        .data
        .chunks_exact(INPUT_CHANNELS)
        .filter(|px| px.iter().all(|&v| v >= 255.0) || px.iter().all(|&v| v <= 0.0))
        .count();
    clipped as f64 / n as f64
}

pub fn quality_filter(img: &RawImage, cfg: &QualityConfig) -> Verdict {
    if img.height.min(img.width) < cfg.min_side {
        return Verdict::Reject(RejectReason::LowResolution);
    }
    let n = img.data.len() as f64;
    let mean = img.data.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / n;
    let var = img.data.iter().map(|&v| (v as f64 / 255.0 - mean).powi(2)).sum::<f64>() / n;
    if var < cfg.min_variance {
        return Verdict::Reject(RejectReason::LowVariance);
    }
    if saturated_fraction(img) > cfg.max_saturated_fraction {
        return Verdict::Reject(RejectReason::Saturated);
    }
    Verdict::Keep
}

/// Bilinear resize with half-pixel centers (`src = (dst + 0.5)·in/out − 0.5`,
/// clamped to the border). Same-size resizing is the identity.
pub fn resize_bilinear(img: &RawImage, out_h: usize, out_w: usize) -> RawImage {
    let c = INPUT_CHANNELS;
    let axis = |len_in: usize, len_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = len_in as f64 / len_out as f64;
        (0..len_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(img.height, out_h);
    let xs = axis(img.width, out_w);
    let mut data = vec![0.0f32; out_h * out_w * c];
    let at = |y: usize, x: usize, ch: usize| img.data[(y * img.width + x) * c + ch];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                let bot = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                data[(oy * out_w + ox) * c + ch] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    RawImage {
        height: out_h,
        width: out_w,
        data,
    }
}

/// Resize to 64×64 and scale to `[0, 1]`.
pub fn preprocess(img: &RawImage, label: usize, source_id: &str) -> Result<ImageSample> {
    let resized = if img.height == INPUT_SIDE && img.width == INPUT_SIDE {
        img.clone()
    } else {
        resize_bilinear(img, INPUT_SIDE, INPUT_SIDE)
    };
    let px = resized.data.iter().map(|&v| (v / 255.0).clamp(0.0, 1.0)).collect();
    ImageSample::new(
        Tensor::new(vec![INPUT_SIDE, INPUT_SIDE, INPUT_CHANNELS], px)?,
        label,
        source_id,
    )
}
