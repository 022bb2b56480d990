//! Seeded photometric and geometric augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::ImageSample;
use crate::arch::{INPUT_CHANNELS, INPUT_SIDE};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    /// Hue shift in units of a full turn.
    pub hue_shift: (f32, f32),
    pub saturation: (f32, f32),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: (0.7, 1.3),
            contrast: (0.8, 1.2),
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            hue_shift: (-0.08, 0.08),
            saturation: (0.85, 1.15),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            hue_shift: (0.0, 0.0),
            saturation: (1.0, 1.0),
            seed: 0,
        }
    }
}

/// RNG stream for the `index`-th sample, independent of processing order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f32, f32)) -> f32 {
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Brightness, contrast, flips, then hue and saturation in HSV. Each
/// photometric step clamps to `[0, 1]`; the label is untouched.
pub fn augment<R: Rng + ?Sized>(sample: &ImageSample, cfg: &AugmentConfig, rng: &mut R) -> ImageSample {
    let brightness = draw(rng, cfg.brightness);
    let contrast = draw(rng, cfg.contrast);
    let flip_h = rng.gen_bool(cfg.flip_horizontal.clamp(0.0, 1.0));
    let flip_v = rng.gen_bool(cfg.flip_vertical.clamp(0.0, 1.0));
    let hue = draw(rng, cfg.hue_shift);
    let sat = draw(rng, cfg.saturation);

    let mut px: Vec<f32> = sample.pixels.data().to_vec();
    if brightness != 1.0 {
        for v in &mut px {
            *v = (*v * brightness).clamp(0.0, 1.0);
        }
    }
    if contrast != 1.0 {
        let mean = px.iter().sum::<f32>() / px.len() as f32;
        for v in &mut px {
            *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0);
        }
    }
    let (s, c) = (INPUT_SIDE, INPUT_CHANNELS);
    if flip_h || flip_v {
        let src = px.clone();
        for y in 0..s {
            for x in 0..s {
                let sy = if flip_v { s - 1 - y } else { y };
                let sx = if flip_h { s - 1 - x } else { x };
                px[(y * s + x) * c..(y * s + x + 1) * c]
                    .copy_from_slice(&src[(sy * s + sx) * c..(sy * s + sx + 1) * c]);
            }
        }
    }
    if hue != 0.0 || sat != 1.0 {
        for p in px.chunks_exact_mut(c) {
            let (h, sv, v) = rgb_to_hsv(p[0], p[1], p[2]);
            let (r, g, b) = hsv_to_rgb(h + hue, (sv * sat).clamp(0.0, 1.0), v);
            p[0] = r.clamp(0.0, 1.0);
            p[1] = g.clamp(0.0, 1.0);
            p[2] = b.clamp(0.0, 1.0);
        }
    }
    let mut out = sample.clone();
    out.pixels.data_mut().copy_from_slice(&px);
    out
}

/// Augment every sample with its own index-derived stream.
pub fn augment_all(samples: &[ImageSample], cfg: &AugmentConfig) -> Vec<ImageSample> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| augment(s, cfg, &mut sample_rng(cfg.seed, i as u64)))
        .collect()
}
