//! Synthetic seven-class dermatoscopy-like images: a skin-toned noisy
//! background with one lesion whose colour and shape depend on the class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::hsv_to_rgb;
use super::image::RawImage;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Count of the largest class (class 0).
    pub majority: usize,
    /// majority : minority count ratio, spread geometrically over classes.
    pub imbalance: f64,
    pub side: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 7,
            majority: 60,
            imbalance: 1.0,
            side: 64,
            seed: 0,
        }
    }
}

/// `round(majority · imbalance^(−c/(K−1)))`, at least 1.
pub fn class_sizes(cfg: &SynthConfig) -> Vec<usize> {
    let k = cfg.num_classes;
    (0..k)
        .map(|c| {
            let e = if k > 1 { c as f64 / (k - 1) as f64 } else { 0.0 };
            ((cfg.majority as f64 * cfg.imbalance.powf(-e)).round() as usize).max(1)
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Shape {
    Disc,
    Ring,
    Stripes,
}

/// One image of class `label`.
pub fn render<R: Rng + ?Sized>(label: usize, num_classes: usize, side: usize, rng: &mut R) -> RawImage {
    let hue = label as f32 / num_classes as f32 + rng.gen_range(-0.015..0.015);
    let shape = [Shape::Disc, Shape::Ring, Shape::Stripes][label % 3];
    let (lr, lg, lb) = hsv_to_rgb(hue, rng.gen_range(0.65..0.85), rng.gen_range(0.45..0.75));
    let bg_v = rng.gen_range(0.75..0.88);
    let (br, bgc, bb) = hsv_to_rgb(0.06, rng.gen_range(0.2..0.35), bg_v);
    let s = side as f32;
    let cx = s * rng.gen_range(0.4..0.6);
    let cy = s * rng.gen_range(0.4..0.6);
    let radius = s * rng.gen_range(0.25..0.33);
    let freq = rng.gen_range(0.35..0.5);
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let r = (dx * dx + dy * dy).sqrt() / radius;
            let inside = match shape {
                Shape::Disc => r < 1.0,
                Shape::Ring => (0.55..1.0).contains(&r),
                Shape::Stripes => r < 1.0 && ((x as f32 + y as f32) * freq).sin() > -0.3,
            };
            let noise = rng.gen_range(-0.04..0.04);
            let px = if inside { [lr, lg, lb] } else { [br, bgc, bb] };
            for v in px {
                data.push(((v + noise).clamp(0.0, 1.0) * 255.0).round());
            }
        }
    }
    RawImage {
        height: side,
        width: side,
        data,
    }
}

/// `(source_id, image, label)` for every synthetic sample, class by class.
pub fn generate(cfg: &SynthConfig) -> Vec<(String, RawImage, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (c, &n) in class_sizes(cfg).iter().enumerate() {
        for i in 0..n {
            let img = render(c, cfg.num_classes, cfg.side, &mut rng);
            out.push((format!("c{c}_{i:05}"), img, c));
        }
    }
    out
}
