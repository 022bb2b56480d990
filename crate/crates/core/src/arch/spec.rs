//! Layer graph descriptor for the QANA network.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{QanaConfig, NUM_BLOCKS};
use super::params::ParamStore;
use crate::error::{QanaError, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Ghost,
    BatchNorm,
    Relu6,
    Dropout,
    SaEca,
    /// `α ⊙ x_main + P·x_skip`; `projected` when P is a 1×1 conv.
    Residual {
        projected: bool,
    },
    MaxPool,
    SeparableConv,
    /// Per-channel `γ_spk·x + β_spk`.
    SpikeAffine,
    BoundedUnit,
    SqueezeExcite,
    Flatten,
    Dense,
    /// Anything the converter does not know how to map.
    Custom(String),
}

impl LayerKind {
    pub fn is_supported(&self) -> bool {
        !matches!(self, LayerKind::Custom(_))
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Custom(s) => write!(f, "Custom({s})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub params: Vec<String>,
}

/// Ordered chain of layers; residual skips are implicit in `Residual`
/// layers, which read the input of the block they close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerDesc>,
}

pub(crate) fn bn_params(prefix: &str) -> Vec<String> {
    ["gamma", "beta", "mean", "var"]
        .iter()
        .map(|s| format!("{prefix}.{s}"))
        .collect()
}

impl ModelSpec {
    pub fn qana(cfg: &QanaConfig) -> Self {
        let mut layers = Vec::new();
        let mut push = |name: String, kind: LayerKind, params: Vec<String>| {
            layers.push(LayerDesc { name, kind, params });
        };
        for l in 1..=NUM_BLOCKS {
            let p = |s: &str| format!("block{l}.{s}");
            push(
                p("ghost"),
                LayerKind::Ghost,
                vec![p("ghost.base.w"), p("ghost.dw.w"), p("ghost.pw.w"), p("ghost.mask")],
            );
            push(p("bn"), LayerKind::BatchNorm, bn_params(&p("bn")));
            push(p("relu6"), LayerKind::Relu6, vec![]);
            push(p("dropout"), LayerKind::Dropout, vec![]);
            let mut eca = vec![p("eca.dw.w")];
            eca.extend(bn_params(&p("eca.bn")));
            eca.extend([p("eca.pw.w"), p("eca.pw.b")]);
            push(p("eca"), LayerKind::SaEca, eca);
            let projected = cfg.block_in_channels(l - 1) != cfg.block_channels[l - 1];
            let mut res = vec![p("alpha")];
            if projected {
                res.extend([p("proj.w"), p("proj.b")]);
            }
            push(p("residual"), LayerKind::Residual { projected }, res);
            push(p("pool"), LayerKind::MaxPool, vec![]);
        }
        push(
            "head.sepconv".into(),
            LayerKind::SeparableConv,
            vec!["head.dw.w".into(), "head.pw.w".into()],
        );
        push("head.bn".into(), LayerKind::BatchNorm, bn_params("head.bn"));
        push(
            "head.affine".into(),
            LayerKind::SpikeAffine,
            vec!["head.gamma_spk".into(), "head.beta_spk".into()],
        );
        push("head.bounded".into(), LayerKind::BoundedUnit, vec![]);
        push(
            "se".into(),
            LayerKind::SqueezeExcite,
            ["se.w1", "se.b1", "se.w2", "se.b2"].map(String::from).to_vec(),
        );
        push("flatten".into(), LayerKind::Flatten, vec![]);
        push(
            "classifier".into(),
            LayerKind::Dense,
            vec!["cls.w".into(), "cls.b".into()],
        );
        Self { layers }
    }

    /// Unique layer names, every kind supported, and every referenced
    /// parameter present in `params`.
    pub fn validate<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(QanaError::Config(format!("duplicate layer name `{}`", layer.name)));
            }
            if !layer.kind.is_supported() {
                return Err(QanaError::UnsupportedLayer {
                    name: layer.name.clone(),
                    kind: layer.kind.to_string(),
                });
            }
            for p in &layer.params {
                params.get(p)?;
            }
        }
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<&LayerDesc> {
        self.layers.iter().find(|l| l.name == name)
    }
}
