#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qana_cli::commands::*;
use qana_cli::RunConfig;

pub struct Pipeline {
    pub root: PathBuf,
    pub summaries: Vec<(&'static str, String)>,
}

impl Pipeline {
    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }
}

fn config(root: &Path, settings: &[(&str, &str)], data: &str, out: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in settings {
        cfg.set(k, v).unwrap();
    }
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    if !data.is_empty() {
        cfg.set("data", &p(data)).unwrap();
    }
    cfg.set("out", &p(out)).unwrap();
    cfg.set("model", &p("model/model.qana")).unwrap();
    cfg.set("snn", &p("snn/network.qsnn")).unwrap();
    cfg
}

/// synth, preprocess, train, eval, convert, verify, calibrate, infer, each
/// stage writing into its own directory under `root`.
pub fn run_pipeline(root: &Path, settings: &[(&str, &str)]) -> Pipeline {
    let mut summaries = Vec::new();
    let mut step = |name: &'static str, data: &str, out: &str, f: fn(&RunConfig) -> anyhow::Result<String>| {
        let cfg = config(root, settings, data, out);
        let s = f(&cfg).unwrap_or_else(|e| panic!("{name}: {e:#}"));
        summaries.push((name, s));
    };
    step("synth", "", "raw", cmd_synth);
    step("preprocess", "raw", "pre", cmd_preprocess);
    step("train", "pre", "model", cmd_train);
    step("eval", "pre", "eval", cmd_eval);
    step("convert", "pre", "snn", cmd_convert);
    step("verify", "pre", "verify", cmd_verify);
    step("calibrate", "pre", "cal", cmd_calibrate);
    let mut infer_cfg = config(root, settings, "pre", "infer");
    infer_cfg
        .set("thresholds", &root.join("cal").join(THRESHOLDS_FILE).to_string_lossy())
        .unwrap();
    summaries.push((
        "infer",
        cmd_infer(&infer_cfg).unwrap_or_else(|e| panic!("infer: {e:#}")),
    ));
    Pipeline {
        root: root.to_path_buf(),
        summaries,
    }
}

/// Every file under `root` by relative path, with the root itself masked
/// out of the contents so two runs in different places compare equal.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mask = root.to_string_lossy().into_owned();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&p).unwrap();
            if rel.ends_with(CONFIG_ECHO) {
                bytes = String::from_utf8(bytes).unwrap().replace(&mask, "<root>").into_bytes();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

/// Names of the files that differ between two snapshots.
pub fn differences(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
