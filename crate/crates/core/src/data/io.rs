//! Dataset directories: `images/` (PNG or `.raw` tiles), `labels.csv` and an
//! optional `split.csv`.
//!
//! A `.raw` tile is three little-endian `u32` (height, width, channels = 3)
//! followed by `height·width·3` little-endian `f32` values on the 0..=255
//! scale, HWC order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{preprocess, quality_filter, ImageSample, QualityConfig, RawImage, RejectReason, Verdict};
use crate::arch::INPUT_CHANNELS;
use crate::error::{QanaError, Result};

pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const IMAGES_DIR: &str = "images";

pub fn encode_raw(img: &RawImage) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + img.data.len() * 4);
    for d in [img.height, img.width, INPUT_CHANNELS] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_raw(bytes: &[u8]) -> std::result::Result<RawImage, String> {
    if bytes.len() < 12 {
        return Err("header truncated".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (word(0), word(1), word(2));
    if c != INPUT_CHANNELS {
        return Err(format!("{c} channels, expected 3"));
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or("dimension overflow")?;
    if bytes.len() != 12 + n * 4 {
        return Err(format!("expected {} payload bytes, found {}", n * 4, bytes.len() - 12));
    }
    let data: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err("non-finite pixel".into());
    }
    RawImage::new(h, w, data).map_err(|e| e.to_string())
}

/// Reads a `.raw` tile or any format the `image` crate decodes.
pub fn load_image(path: &Path) -> Result<RawImage> {
    let decode_err = |reason: String| QanaError::Decode {
        path: path.display().to_string(),
        reason,
    };
    if path.extension().is_some_and(|e| e == "raw") {
        let bytes = fs::read(path)?;
        decode_raw(&bytes).map_err(decode_err)
    } else {
        let img = image::open(path).map_err(|e| decode_err(e.to_string()))?;
        Ok(RawImage::from_rgb8(&img.to_rgb8()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub source_id: String,
    pub filename: String,
    pub label: usize,
}

pub fn read_labels(dir: &Path) -> Result<Vec<LabelRecord>> {
    let mut rdr = csv::Reader::from_path(dir.join(LABELS_FILE))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `images/` and `labels.csv`. Existing files are overwritten.
pub fn write_dataset(dir: &Path, items: &[(String, RawImage, usize)], format: ImageFormat) -> Result<()> {
    let img_dir = dir.join(IMAGES_DIR);
    fs::create_dir_all(&img_dir)?;
    let mut labels = Vec::with_capacity(items.len());
    for (id, img, label) in items {
        let filename = match format {
            ImageFormat::Png => format!("{id}.png"),
            ImageFormat::Raw => format!("{id}.raw"),
        };
        let path = img_dir.join(&filename);
        match format {
            ImageFormat::Png => img
                .to_rgb8()
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| QanaError::Io(std::io::Error::other(e)))?,
            ImageFormat::Raw => fs::File::create(&path)?.write_all(&encode_raw(img))?,
        }
        labels.push(LabelRecord {
            source_id: id.clone(),
            filename,
            label: *label,
        });
    }
    write_csv(&dir.join(LABELS_FILE), &labels)
}

pub fn write_samples(dir: &Path, samples: &[ImageSample]) -> Result<()> {
    let items: Vec<(String, RawImage, usize)> = samples
        .iter()
        .map(|s| {
            let (h, w) = (s.pixels.shape()[0], s.pixels.shape()[1]);
            let data = s.pixels.data().iter().map(|v| v * 255.0).collect();
            (
                s.source_id.clone(),
                RawImage {
                    height: h,
                    width: w,
                    data,
                },
                s.label,
            )
        })
        .collect();
    write_dataset(dir, &items, ImageFormat::Raw)
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub samples: Vec<ImageSample>,
    pub rejected: Vec<(String, RejectReason)>,
}

/// Load, quality-filter and preprocess every image listed in `labels.csv`.
/// Undecodable files are errors, not rejections.
pub fn load_dataset(dir: &Path, quality: &QualityConfig, num_classes: usize) -> Result<LoadedDataset> {
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for rec in read_labels(dir)? {
        if rec.label >= num_classes {
            return Err(QanaError::Config(format!(
                "{}: label {} outside 0..{num_classes}",
                rec.source_id, rec.label
            )));
        }
        let img = load_image(&dir.join(IMAGES_DIR).join(&rec.filename))?;
        match quality_filter(&img, quality) {
            Verdict::Keep => samples.push(preprocess(&img, rec.label, &rec.source_id)?),
            Verdict::Reject(r) => rejected.push((rec.source_id, r)),
        }
    }
    Ok(LoadedDataset { samples, rejected })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub source_id: String,
    pub split: Split,
}

/// Per-class shuffled split; each class contributes `round(n·val)` and
/// `round(n·test)` samples to validation and test.
pub fn stratified_split(
    samples: &[ImageSample],
    num_classes: usize,
    val: f64,
    test: f64,
    seed: u64,
) -> Vec<SplitEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![Split::Train; samples.len()];
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let nt = (n * test).round() as usize;
        let nv = ((n * val).round() as usize).min(idx.len() - nt);
        for &i in &idx[..nt] {
            assign[i] = Split::Test;
        }
        for &i in &idx[nt..nt + nv] {
            assign[i] = Split::Val;
        }
    }
    samples
        .iter()
        .zip(assign)
        .map(|(s, split)| SplitEntry {
            source_id: s.source_id.clone(),
            split,
        })
        .collect()
}

pub fn write_split(dir: &Path, entries: &[SplitEntry]) -> Result<()> {
    write_csv(&dir.join(SPLIT_FILE), entries)
}

pub fn read_split(dir: &Path) -> Result<Vec<SplitEntry>> {
    let mut rdr = csv::Reader::from_path(dir.join(SPLIT_FILE))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Samples whose id the manifest assigns to `which`, in dataset order.
pub fn select_split(samples: &[ImageSample], entries: &[SplitEntry], which: Split) -> Vec<ImageSample> {
    let wanted: std::collections::HashSet<&str> = entries
        .iter()
        .filter(|e| e.split == which)
        .map(|e| e.source_id.as_str())
        .collect();
    samples
        .iter()
        .filter(|s| wanted.contains(s.source_id.as_str()))
        .cloned()
        .collect()
}
