//! Run configuration: a flat `key = value` file, `#` starts a comment.
//!
//! Every key has a type and a default; unknown keys and malformed values
//! are rejected with the offending line. Command-line flags are applied on
//! top with [`RunConfig::set`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Text,
    Choice(&'static [&'static str]),
    /// Comma-separated positive integers, possibly empty.
    IntList,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
    help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        kind,
        default,
        help,
    }
}

const KEYS: &[Key] = &[
    key(
        "seed",
        Kind::Int,
        "0",
        "root seed; every stage derives its own stream from it",
    ),
    key("out", Kind::Text, "out", "output directory"),
    key("data", Kind::Text, "", "dataset directory read by the command"),
    key("model", Kind::Text, "", "trained model file (.qana)"),
    key("snn", Kind::Text, "", "converted spiking network (.qsnn)"),
    key(
        "thresholds",
        Kind::Text,
        "",
        "per-class spike-count thresholds (JSON); empty disables",
    ),
    key(
        "split",
        Kind::Choice(&["train", "val", "test", "all"]),
        "test",
        "split read by eval, verify and infer",
    ),
    key("synth.classes", Kind::Int, "7", "number of synthetic classes"),
    key("synth.majority", Kind::Int, "60", "images in the largest class"),
    key("synth.imbalance", Kind::Float, "1.0", "largest : smallest class size"),
    key(
        "synth.format",
        Kind::Choice(&["raw", "png"]),
        "raw",
        "image file format",
    ),
    key("quality.min_side", Kind::Int, "32", "reject images with a shorter side"),
    key(
        "quality.min_variance",
        Kind::Float,
        "0.0001",
        "reject images with lower pixel variance",
    ),
    key(
        "quality.max_saturated",
        Kind::Float,
        "0.05",
        "reject images with a larger clipped fraction",
    ),
    key("split.val", Kind::Float, "0.1", "validation fraction per class"),
    key("split.test", Kind::Float, "0.2", "test fraction per class"),
    key(
        "smote.enabled",
        Kind::Bool,
        "true",
        "balance the training split with SMOTE",
    ),
    key("smote.k", Kind::Int, "5", "SMOTE neighbours"),
    key("arch", Kind::Choice(&["compact", "full"]), "compact", "network width"),
    key("train.epochs", Kind::Int, "8", "training epochs"),
    key("train.batch", Kind::Int, "16", "mini-batch size"),
    key("train.lr", Kind::Float, "0.003", "Adam learning rate"),
    key("train.augment", Kind::Bool, "false", "augment every epoch"),
    key(
        "convert.calibration",
        Kind::Int,
        "32",
        "training images used for activation ranges",
    ),
    key("T", Kind::Int, "64", "simulation window in time steps"),
    key(
        "encoding",
        Kind::Choice(&["regular", "poisson"]),
        "regular",
        "input spike code",
    ),
    key(
        "decode.alpha",
        Kind::Text,
        "matched",
        "softmax scale: a number or `matched`",
    ),
    key("decode.beta", Kind::Float, "0", "temporal decay of spike weights"),
    key("verify.windows", Kind::IntList, "", "windows to verify; empty uses T"),
    key(
        "verify.samples",
        Kind::Int,
        "0",
        "probe images (spread over the split); 0 uses all",
    ),
    key(
        "calibrate.split",
        Kind::Choice(&["train", "val", "test", "all"]),
        "val",
        "split used to fit thresholds",
    ),
    key(
        "infer.image",
        Kind::Text,
        "",
        "single image to classify instead of a dataset split",
    ),
    key(
        "infer.limit",
        Kind::Int,
        "0",
        "classify at most this many images; 0 for all",
    ),
    key(
        "infer.trace",
        Kind::Bool,
        "false",
        "write every spike of the first image to trace.csv",
    ),
];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn check(k: &Key, value: &str) -> Result<()> {
    let ok = match k.kind {
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Text => true,
        Kind::Choice(opts) => opts.contains(&value),
        Kind::IntList => value.is_empty() || value.split(',').all(|v| v.trim().parse::<usize>().is_ok_and(|n| n > 0)),
    };
    if !ok {
        let expected = match k.kind {
            Kind::Int => "a non-negative integer".to_string(),
            Kind::Float => "a finite number".to_string(),
            Kind::Bool => "true or false".to_string(),
            Kind::Text => unreachable!(),
            Kind::Choice(opts) => format!("one of {}", opts.join(", ")),
            Kind::IntList => "comma-separated positive integers".to_string(),
        };
        bail!("`{}` must be {expected}, got `{value}`", k.name);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| k.default.to_string()).collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected `key = value`, got `{raw}`", n + 1))?;
            let k = k.trim();
            if seen.contains(&k) {
                bail!("line {}: `{k}` set twice", n + 1);
            }
            cfg.set(k, v.trim()).with_context(|| format!("line {}", n + 1))?;
            seen.push(k);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let Some(i) = KEYS.iter().position(|k| k.name == name) else {
            bail!("unknown config key `{name}`");
        };
        check(&KEYS[i], value)?;
        self.values[i] = value.to_string();
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("override `{pair}` is not key=value"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, name: &str) -> &str {
        let i = KEYS
            .iter()
            .position(|k| k.name == name)
            .unwrap_or_else(|| panic!("config key `{name}` is not declared"));
        &self.values[i]
    }

    pub fn int(&self, name: &str) -> u64 {
        debug_assert_eq!(lookup(name).map(|k| k.kind), Some(Kind::Int));
        self.get(name).parse().expect("validated on set")
    }

    pub fn usize(&self, name: &str) -> usize {
        self.int(name) as usize
    }

    pub fn float(&self, name: &str) -> f64 {
        self.get(name).parse().expect("validated on set")
    }

    pub fn flag(&self, name: &str) -> bool {
        self.get(name) == "true"
    }

    pub fn list(&self, name: &str) -> Vec<usize> {
        let v = self.get(name);
        if v.is_empty() {
            return Vec::new();
        }
        v.split(',')
            .map(|s| s.trim().parse().expect("validated on set"))
            .collect()
    }

    /// A path-valued key; errors when it is empty.
    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let v = self.get(name);
        if v.is_empty() {
            bail!("`{name}` is not set (config file or --set {name}=...)");
        }
        Ok(PathBuf::from(v))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    /// Effective configuration in the file format, one key per line in
    /// declaration order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(&self.values) {
            let _ = writeln!(s, "{} = {v}", k.name);
        }
        s
    }

    /// Every key with its default and description, for `--help` style
    /// listings.
    pub fn documentation() -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "# {}\n{} = {}", k.help, k.name, k.default);
        }
        s
    }
}

/// Seed for one pipeline stage, derived from the root seed and the stage
/// name (SplitMix64 finalizer over an FNV-1a hash of the name).
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let mut z = root ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
