//! Batch-norm folding and operator fusion.
//!
//! Every linear chain in the network collapses into one convolution with a
//! bias: the ghost module (1×1 base plus masked separable branch) becomes a
//! single `k×k` conv, the SA-ECA `pw∘BN∘dw` becomes one `k×k` conv feeding
//! the sigmoid, and the head `affine∘BN∘pw∘dw` becomes one 3×3 conv.

use crate::arch::{LayerKind, ModelSpec, QanaConfig, QanaModel};
use crate::error::{shape_err, Result};
use crate::ops::{self, Padding};
use crate::tensor::{Real, Tensor};

/// Convolution `[k, k, cin, cout]` (stride 1, same padding) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedConv {
    pub kernel: Tensor<f64>,
    pub bias: Vec<f64>,
}

impl FoldedConv {
    pub fn forward(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let b = Tensor::new(vec![self.bias.len()], self.bias.clone())?;
        ops::conv2d(x, &self.kernel, Some(&b), 1, Padding::Same)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }
}

/// `w' = w·γ/√(var+ε)`, `b' = (b − mean)·γ/√(var+ε) + β`, per output
/// channel (last kernel axis).
pub fn fold_conv_bn(
    kernel: &Tensor<f64>,
    bias: Option<&[f64]>,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<FoldedConv> {
    let cout = *kernel.shape().last().unwrap_or(&0);
    if [gamma.len(), beta.len(), mean.len(), var.len()]
        .iter()
        .any(|&n| n != cout)
        || bias.is_some_and(|b| b.len() != cout)
    {
        return Err(shape_err(
            "fold_conv_bn",
            format!("BN vectors must have {cout} entries"),
        ));
    }
    let scale: Vec<f64> = gamma.iter().zip(var).map(|(g, v)| g / (v + eps).sqrt()).collect();
    let mut k = kernel.clone();
    for row in k.data_mut().chunks_exact_mut(cout) {
        for (w, s) in row.iter_mut().zip(&scale) {
            *w *= s;
        }
    }
    let bias = (0..cout)
        .map(|c| (bias.map_or(0.0, |b| b[c]) - mean[c]) * scale[c] + beta[c])
        .collect();
    Ok(FoldedConv { kernel: k, bias })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldedBlock {
    /// Ghost module with its BN; relu6 follows.
    pub ghost: FoldedConv,
    /// Pre-sigmoid SA-ECA logits.
    pub gate: FoldedConv,
    pub alpha: Vec<f64>,
    /// 1×1 projection on the skip path; identity when `None`.
    pub proj: Option<FoldedConv>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeWeights {
    /// `[r, C]`
    pub w1: Tensor<f64>,
    pub b1: Vec<f64>,
    /// `[C, r]`
    pub w2: Tensor<f64>,
    pub b2: Vec<f64>,
}

impl SeWeights {
    /// Per-channel gate from channel means.
    pub fn gate(&self, mean: &[f64]) -> Vec<f64> {
        let (r, c) = (self.w1.shape()[0], self.w1.shape()[1]);
        let hidden: Vec<f64> = (0..r)
            .map(|j| {
                let row = &self.w1.data()[j * c..(j + 1) * c];
                (row.iter().zip(mean).map(|(w, m)| w * m).sum::<f64>() + self.b1[j]).max(0.0)
            })
            .collect();
        (0..c)
            .map(|o| {
                let row = &self.w2.data()[o * r..(o + 1) * r];
                ops::sigmoid_scalar(row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[o])
            })
            .collect()
    }
}

/// BN-free inference network, numerically equal to the source model in
/// infer mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedModel {
    pub config: QanaConfig,
    pub blocks: Vec<FoldedBlock>,
    /// Spike head pre-activation; `clamp01` follows.
    pub head: FoldedConv,
    pub se: SeWeights,
    /// `[K, D]`
    pub cls_w: Tensor<f64>,
    pub cls_b: Vec<f64>,
}

/// Every intermediate the converter calibrates on, for one batch.
#[derive(Debug, Clone)]
pub struct FoldedActivations {
    /// Post-relu6 ghost output per block.
    pub d: Vec<Tensor<f64>>,
    /// Pre-pool residual sum per block.
    pub r: Vec<Tensor<f64>>,
    pub head: Tensor<f64>,
    pub logits: Tensor<f64>,
}

fn vec_of(model: &QanaModel<f64>, name: &str) -> Result<Vec<f64>> {
    Ok(model.params.get(name)?.data().to_vec())
}

fn bn_of(model: &QanaModel<f64>, prefix: &str) -> Result<[Vec<f64>; 4]> {
    Ok([
        vec_of(model, &format!("{prefix}.gamma"))?,
        vec_of(model, &format!("{prefix}.beta"))?,
        vec_of(model, &format!("{prefix}.mean"))?,
        vec_of(model, &format!("{prefix}.var"))?,
    ])
}

/// `dw [k,k,cin,1]` followed by `pw [1,1,cin,cout]` as one `[k,k,cin,cout]`
/// kernel.
fn compose_separable(dw: &Tensor<f64>, pw: &Tensor<f64>) -> Tensor<f64> {
    let (k, cin, cout) = (dw.shape()[0], dw.shape()[2], pw.shape()[3]);
    Tensor::from_fn(&[k, k, cin, cout], |i| {
        let co = i % cout;
        let ci = (i / cout) % cin;
        let tap = i / (cout * cin);
        dw.data()[tap * cin + ci] * pw.data()[ci * cout + co]
    })
}

pub fn fold_batchnorm<T: Real>(model: &QanaModel<T>) -> Result<FoldedModel> {
    let m: QanaModel<f64> = model.cast();
    m.spec().validate(&m.params)?;
    let cfg = m.config.clone();
    let eps = cfg.bn_eps;
    let p = |n: &str| m.params.get(n);
    let mut blocks = Vec::new();
    for l in 1..=cfg.block_channels.len() {
        let b = |s: &str| format!("block{l}.{s}");
        let g = cfg.ghost(l - 1);
        let (cin, c, base) = (cfg.block_in_channels(l - 1), g.out_channels, g.base_channels());
        let k = g.ghost_kernel;
        let base_w = p(&b("ghost.base.w"))?;
        let sep = compose_separable(p(&b("ghost.dw.w"))?, p(&b("ghost.pw.w"))?);
        let mask = p(&b("ghost.mask"))?.data();
        let gc = c - base;
        let centre = k / 2;
        let fused = Tensor::from_fn(&[k, k, cin, c], |i| {
            let co = i % c;
            let ci = (i / c) % cin;
            let tap = i / (c * cin);
            let (ky, kx) = (tap / k, tap % k);
            if co < base {
                if ky == centre && kx == centre {
                    base_w.data()[ci * base + co]
                } else {
                    0.0
                }
            } else {
                let gi = co - base;
                sep.data()[(tap * cin + ci) * gc + gi] * mask[gi]
            }
        });
        let [gm, bt, mn, vr] = bn_of(&m, &b("bn"))?;
        let ghost = fold_conv_bn(&fused, None, &gm, &bt, &mn, &vr, eps)?;

        // ECA: pw(s ⊙ dw(d) + t) + b = (dw∘(s·pw))(d) + (pwᵀt + b)
        let [gm, bt, mn, vr] = bn_of(&m, &b("eca.bn"))?;
        let s: Vec<f64> = gm.iter().zip(&vr).map(|(g, v)| g / (v + eps).sqrt()).collect();
        let t: Vec<f64> = (0..c).map(|i| bt[i] - mn[i] * s[i]).collect();
        let mut pw = p(&b("eca.pw.w"))?.clone();
        for (ci, row) in pw.data_mut().chunks_exact_mut(c).enumerate() {
            for w in row.iter_mut() {
                *w *= s[ci];
            }
        }
        let pw_raw = p(&b("eca.pw.w"))?.data();
        let pb = p(&b("eca.pw.b"))?.data();
        let gate_bias = (0..c)
            .map(|co| pb[co] + (0..c).map(|ci| t[ci] * pw_raw[ci * c + co]).sum::<f64>())
            .collect();
        let gate = FoldedConv {
            kernel: compose_separable(p(&b("eca.dw.w"))?, &pw),
            bias: gate_bias,
        };

        let proj = if m.params.contains(&b("proj.w")) {
            Some(FoldedConv {
                kernel: p(&b("proj.w"))?.clone(),
                bias: vec_of(&m, &b("proj.b"))?,
            })
        } else {
            None
        };
        blocks.push(FoldedBlock {
            ghost,
            gate,
            alpha: vec_of(&m, &b("alpha"))?,
            proj,
        });
    }

    let raw = compose_separable(p("head.dw.w")?, p("head.pw.w")?);
    let [gm, bt, mn, vr] = bn_of(&m, "head.bn")?;
    let bn = fold_conv_bn(&raw, None, &gm, &bt, &mn, &vr, eps)?;
    let gs = vec_of(&m, "head.gamma_spk")?;
    let bs = vec_of(&m, "head.beta_spk")?;
    let head = fold_conv_bn(
        &bn.kernel,
        Some(&bn.bias),
        &gs,
        &bs,
        &vec![0.0; gs.len()],
        &vec![1.0; gs.len()],
        0.0,
    )?;
    Ok(FoldedModel {
        config: cfg,
        blocks,
        head,
        se: SeWeights {
            w1: p("se.w1")?.clone(),
            b1: vec_of(&m, "se.b1")?,
            w2: p("se.w2")?.clone(),
            b2: vec_of(&m, "se.b2")?,
        },
        cls_w: p("cls.w")?.clone(),
        cls_b: vec_of(&m, "cls.b")?,
    })
}

impl FoldedModel {
    /// Source layer graph minus everything folding removed (BN, the head
    /// affine, dropout).
    pub fn spec(&self) -> ModelSpec {
        let mut s = ModelSpec::qana(&self.config);
        s.layers.retain(|l| {
            !matches!(
                l.kind,
                LayerKind::BatchNorm | LayerKind::SpikeAffine | LayerKind::Dropout
            )
        });
        s
    }

    pub fn forward(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.forward_all(x)?.logits)
    }

    pub fn forward_all(&self, x: &Tensor<f64>) -> Result<FoldedActivations> {
        let mut cur = x.clone();
        let (mut ds, mut rs) = (Vec::new(), Vec::new());
        for blk in &self.blocks {
            let d = ops::relu6(&blk.ghost.forward(&cur)?);
            let gate = ops::sigmoid(&blk.gate.forward(&d)?);
            let main = gate.mul(&d)?.mul_channels(&blk.alpha)?;
            let skip = match &blk.proj {
                Some(p) => p.forward(&cur)?,
                None => cur.clone(),
            };
            let r = main.add(&skip)?;
            cur = ops::maxpool2d(&r, 2)?.0;
            ds.push(d);
            rs.push(r);
        }
        let f = ops::bounded_unit(&self.head.forward(&cur)?);
        let (n, h, w, c) = f.dims4("folded_head")?;
        let means = ops::spatial_mean(&f)?;
        let mut g = f.clone();
        for b in 0..n {
            let s = self.se.gate(&means.data()[b * c..(b + 1) * c]);
            for row in g.data_mut()[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
                for (v, sv) in row.iter_mut().zip(&s) {
                    *v *= sv;
                }
            }
        }
        let flat = g.reshape(&[n, h * w * c])?;
        let b = Tensor::new(vec![self.cls_b.len()], self.cls_b.clone())?;
        let logits = ops::dense(&flat, &self.cls_w, Some(&b))?;
        Ok(FoldedActivations {
            d: ds,
            r: rs,
            head: f,
            logits,
        })
    }
}
