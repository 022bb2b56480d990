//! Forward and backward passes of the QANA network.
//!
//! Block `l` (1-based):
//!
//! ```text
//! g = concat(pw(x), sep3x3(x) ⊙ M)         ghost
//! d = dropout(relu6(BN(g)))
//! e = σ(pw(BN(dw(d))) + b) ⊙ d             SA-ECA
//! out = maxpool(α ⊙ e + P·x)
//! ```
//!
//! followed by the spike head `clamp01(γ_spk·BN(sep3x3(x)) + β_spk)`, the SE
//! gate and the flatten + dense classifier.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{GhostConfig, QanaConfig, HEAD_SIDE, NUM_BLOCKS};
use super::params::{Grads, ParamStore};
use super::spec::{bn_params, ModelSpec};
use crate::error::{shape_err, QanaError, Result};
use crate::ops::{self, BnCache, BnStats, Mode, Padding};
use crate::tensor::{Real, Tensor};

fn bp(l: usize, s: &str) -> String {
    format!("block{l}.{s}")
}

fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let a = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

fn glorot<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

fn insert_bn<T: Real>(ps: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<()> {
    let names = bn_params(prefix);
    ps.insert(&names[0], Tensor::full(&[c], T::one()), true)?;
    ps.insert(&names[1], Tensor::zeros(&[c]), true)?;
    ps.insert(&names[2], Tensor::zeros(&[c]), false)?;
    ps.insert(&names[3], Tensor::full(&[c], T::one()), false)?;
    Ok(())
}

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn init_params<T: Real>(cfg: &QanaConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    for l in 1..=NUM_BLOCKS {
        let cin = cfg.block_in_channels(l - 1);
        let g = cfg.ghost(l - 1);
        let (c, b, gc, k) = (g.out_channels, g.base_channels(), g.ghost_channels(), g.ghost_kernel);
        ps.insert(bp(l, "ghost.base.w"), he_uniform(&[1, 1, cin, b], cin, &mut rng), true)?;
        ps.insert(bp(l, "ghost.dw.w"), he_uniform(&[k, k, cin, 1], k * k, &mut rng), true)?;
        ps.insert(bp(l, "ghost.pw.w"), he_uniform(&[1, 1, cin, gc], cin, &mut rng), true)?;
        ps.insert(bp(l, "ghost.mask"), Tensor::full(&[gc], T::one()), false)?;
        insert_bn(&mut ps, &bp(l, "bn"), c)?;
        let ek = cfg.eca_kernel;
        ps.insert(bp(l, "eca.dw.w"), he_uniform(&[ek, ek, c, 1], ek * ek, &mut rng), true)?;
        insert_bn(&mut ps, &bp(l, "eca.bn"), c)?;
        ps.insert(bp(l, "eca.pw.w"), glorot(&[1, 1, c, c], c, c, &mut rng), true)?;
        ps.insert(bp(l, "eca.pw.b"), Tensor::zeros(&[c]), true)?;
        ps.insert(bp(l, "alpha"), Tensor::full(&[c], T::one()), true)?;
        if cin != c {
            ps.insert(bp(l, "proj.w"), glorot(&[1, 1, cin, c], cin, c, &mut rng), true)?;
            ps.insert(bp(l, "proj.b"), Tensor::zeros(&[c]), true)?;
        }
    }
    let c4 = cfg.block_channels[NUM_BLOCKS - 1];
    let hc = cfg.head_channels;
    ps.insert("head.dw.w", he_uniform(&[3, 3, c4, 1], 9, &mut rng), true)?;
    ps.insert("head.pw.w", he_uniform(&[1, 1, c4, hc], c4, &mut rng), true)?;
    insert_bn(&mut ps, "head.bn", hc)?;
    // keep most of the unit interval active at initialization
    ps.insert("head.gamma_spk", Tensor::full(&[hc], T::lit(0.5)), true)?;
    ps.insert("head.beta_spk", Tensor::full(&[hc], T::lit(0.5)), true)?;
    let r = cfg.se_bottleneck();
    ps.insert("se.w1", glorot(&[r, hc], hc, r, &mut rng), true)?;
    ps.insert("se.b1", Tensor::zeros(&[r]), true)?;
    ps.insert("se.w2", glorot(&[hc, r], r, hc, &mut rng), true)?;
    ps.insert("se.b2", Tensor::zeros(&[hc]), true)?;
    let d = cfg.flatten_dim();
    ps.insert(
        "cls.w",
        glorot(&[cfg.num_classes, d], d, cfg.num_classes, &mut rng),
        true,
    )?;
    ps.insert("cls.b", Tensor::zeros(&[cfg.num_classes]), true)?;
    Ok(ps)
}

struct GhostTrace<T: Real> {
    mid: Tensor<T>,
}

struct EcaTrace<T: Real> {
    input: Tensor<T>,
    bn: BnCache<T>,
    m2: Tensor<T>,
    gate: Tensor<T>,
}

struct BlockTrace<T: Real> {
    x: Tensor<T>,
    ghost: GhostTrace<T>,
    bn: BnCache<T>,
    n: Tensor<T>,
    mask: Option<Vec<T>>,
    eca: EcaTrace<T>,
    e: Tensor<T>,
    r_shape: Vec<usize>,
    argmax: Vec<usize>,
}

struct HeadTrace<T: Real> {
    x: Tensor<T>,
    mid: Tensor<T>,
    bn: BnCache<T>,
    n: Tensor<T>,
    u: Tensor<T>,
}

struct SeTrace<T: Real> {
    f: Tensor<T>,
    m: Tensor<T>,
    h1: Tensor<T>,
    r1: Tensor<T>,
    s: Tensor<T>,
}

/// Everything a backward pass needs from one forward pass, plus the batch
/// statistics of every train-mode BN layer.
pub struct Trace<T: Real> {
    blocks: Vec<BlockTrace<T>>,
    head: HeadTrace<T>,
    se: SeTrace<T>,
    flat: Tensor<T>,
    pub bn_stats: Vec<(String, BnStats<T>)>,
}

impl<T: Real> Trace<T> {
    /// Flattened SE output, the classifier's input.
    pub fn features(&self) -> &Tensor<T> {
        &self.flat
    }
}

struct Ctx<'a, 'r, T: Real> {
    params: &'a ParamStore<T>,
    cfg: &'a QanaConfig,
    mode: Mode,
    rng: Option<&'r mut dyn RngCore>,
    stats: Vec<(String, BnStats<T>)>,
}

impl<'a, 'r, T: Real> Ctx<'a, 'r, T> {
    fn new(params: &'a ParamStore<T>, cfg: &'a QanaConfig, mode: Mode, rng: Option<&'r mut dyn RngCore>) -> Self {
        Self {
            params,
            cfg,
            mode,
            rng,
            stats: Vec::new(),
        }
    }

    fn p(&self, name: &str) -> Result<&'a Tensor<T>> {
        self.params.get(name)
    }

    fn bn(&mut self, prefix: &str, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let [g, b, m, v] = [0, 1, 2, 3].map(|i| bn_params(prefix)[i].clone());
        let (gamma, beta) = (self.p(&g)?, self.p(&b)?);
        match self.mode {
            Mode::Train => {
                let (out, cache, stats) = ops::batch_norm_train(x, gamma, beta, self.cfg.bn_eps)?;
                self.stats.push((prefix.to_string(), stats));
                Ok((out, cache))
            }
            Mode::Infer => ops::batch_norm_infer_cached(x, gamma, beta, self.p(&m)?, self.p(&v)?, self.cfg.bn_eps),
        }
    }

    fn ghost(&mut self, l: usize, x: &Tensor<T>) -> Result<(Tensor<T>, GhostTrace<T>)> {
        let base = ops::conv2d(x, self.p(&bp(l, "ghost.base.w"))?, None, 1, Padding::Valid)?;
        let mid = ops::depthwise_conv2d(x, self.p(&bp(l, "ghost.dw.w"))?, None, 1, Padding::Same)?;
        let ghost = ops::conv2d(&mid, self.p(&bp(l, "ghost.pw.w"))?, None, 1, Padding::Valid)?;
        let ghost = ghost.mul_channels(self.p(&bp(l, "ghost.mask"))?.data())?;
        Ok((Tensor::concat_channels(&base, &ghost)?, GhostTrace { mid }))
    }

    fn eca(&mut self, l: usize, d: &Tensor<T>) -> Result<(Tensor<T>, EcaTrace<T>)> {
        let m1 = ops::depthwise_conv2d(d, self.p(&bp(l, "eca.dw.w"))?, None, 1, Padding::Same)?;
        let (m2, bn) = self.bn(&bp(l, "eca.bn"), &m1)?;
        let m3 = ops::conv2d(
            &m2,
            self.p(&bp(l, "eca.pw.w"))?,
            Some(self.p(&bp(l, "eca.pw.b"))?),
            1,
            Padding::Valid,
        )?;
        let gate = ops::sigmoid(&m3);
        let out = gate.mul(d)?;
        Ok((
            out,
            EcaTrace {
                input: d.clone(),
                bn,
                m2,
                gate,
            },
        ))
    }

    fn block(&mut self, l: usize, x: &Tensor<T>) -> Result<(Tensor<T>, BlockTrace<T>)> {
        let cin = self.cfg.block_in_channels(l - 1);
        let (_, _, _, xc) = x.dims4("qana_block")?;
        if xc != cin {
            return Err(shape_err(
                "qana_block",
                format!("block {l} expects {cin} input channels, got {xc}"),
            ));
        }
        let (g, ghost) = self.ghost(l, x)?;
        let (n, bn) = self.bn(&bp(l, "bn"), &g)?;
        let a = ops::relu6(&n);
        let (d, mask) = match self.mode {
            Mode::Train if self.cfg.dropout > 0.0 => {
                let rng = self
                    .rng
                    .as_deref_mut()
                    .ok_or_else(|| QanaError::Config("train-mode dropout needs an RNG".into()))?;
                ops::dropout(&a, self.cfg.dropout, Mode::Train, rng)?
            }
            _ => (a, None),
        };
        let (e, eca) = self.eca(l, &d)?;
        let main = e.mul_channels(self.p(&bp(l, "alpha"))?.data())?;
        let skip = self.skip(l, x)?;
        let r = main.add(&skip)?;
        let (out, argmax) = ops::maxpool2d(&r, 2)?;
        Ok((
            out,
            BlockTrace {
                x: x.clone(),
                ghost,
                bn,
                n,
                mask,
                eca,
                e,
                r_shape: r.shape().to_vec(),
                argmax,
            },
        ))
    }

    fn skip(&self, l: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = bp(l, "proj.w");
        if self.params.contains(&w) {
            ops::conv2d(x, self.p(&w)?, Some(self.p(&bp(l, "proj.b"))?), 1, Padding::Valid)
        } else if self.cfg.block_in_channels(l - 1) == self.cfg.block_channels[l - 1] {
            Ok(x.clone())
        } else {
            Err(shape_err(
                "qana_block",
                format!("block {l} changes width but has no projection P"),
            ))
        }
    }

    fn head(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, HeadTrace<T>)> {
        let mid = ops::depthwise_conv2d(x, self.p("head.dw.w")?, None, 1, Padding::Same)?;
        let z = ops::conv2d(&mid, self.p("head.pw.w")?, None, 1, Padding::Valid)?;
        let (n, bn) = self.bn("head.bn", &z)?;
        let gamma = self.p("head.gamma_spk")?.data();
        let beta = self.p("head.beta_spk")?.data();
        let c = gamma.len();
        let mut u = n.clone();
        for row in u.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = gamma[ch] * row[ch] + beta[ch];
            }
        }
        let f = ops::bounded_unit(&u);
        Ok((
            f,
            HeadTrace {
                x: x.clone(),
                mid,
                bn,
                n,
                u,
            },
        ))
    }

    fn se(&self, f: &Tensor<T>) -> Result<(Tensor<T>, SeTrace<T>)> {
        let (n, h, w, c) = f.dims4("se")?;
        let m = ops::spatial_mean(f)?;
        let h1 = ops::dense(&m, self.p("se.w1")?, Some(self.p("se.b1")?))?;
        let r1 = ops::relu(&h1);
        let h2 = ops::dense(&r1, self.p("se.w2")?, Some(self.p("se.b2")?))?;
        let s = ops::sigmoid(&h2);
        let mut out = f.clone();
        for b in 0..n {
            let srow = &s.data()[b * c..(b + 1) * c];
            for row in out.data_mut()[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
                for (v, &g) in row.iter_mut().zip(srow) {
                    *v *= g;
                }
            }
        }
        Ok((
            out,
            SeTrace {
                f: f.clone(),
                m,
                h1,
                r1,
                s,
            },
        ))
    }

    fn classify(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (n, h, w, c) = x.dims4("classify")?;
        let flat = x.clone().reshape(&[n, h * w * c])?;
        let y = ops::dense(&flat, self.p("cls.w")?, Some(self.p("cls.b")?))?;
        Ok((y, flat))
    }

    fn run(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        let (_, h, w, c) = x.dims4("model_forward")?;
        if [h, w, c] != self.cfg.input_shape() {
            return Err(shape_err(
                "model_forward",
                format!("input must be [N,64,64,3], got {:?}", x.shape()),
            ));
        }
        let mut cur = x.clone();
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for l in 1..=NUM_BLOCKS {
            let (out, t) = self.block(l, &cur)?;
            blocks.push(t);
            cur = out;
        }
        let (f, head) = self.head(&cur)?;
        let (fs, se) = self.se(&f)?;
        let (y, flat) = self.classify(&fs)?;
        if !y.is_finite() {
            return Err(QanaError::NonFinite("model_forward".into()));
        }
        Ok((
            y,
            Trace {
                blocks,
                head,
                se,
                flat,
                bn_stats: std::mem::take(&mut self.stats),
            },
        ))
    }
}

fn add_bn_grads<T: Real>(grads: &mut Grads<T>, prefix: &str, g: &ops::BnGrads<T>) -> Result<()> {
    let names = bn_params(prefix);
    grads.add(&names[0], g.gamma.clone())?;
    grads.add(&names[1], g.beta.clone())
}

fn channel_sums<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let c = *a.shape().last().unwrap();
    let mut out = vec![T::zero(); c];
    for (ra, rb) in a.data().chunks_exact(c).zip(b.data().chunks_exact(c)) {
        for ch in 0..c {
            out[ch] += ra[ch] * rb[ch];
        }
    }
    out
}

fn block_backward<T: Real>(
    params: &ParamStore<T>,
    l: usize,
    t: &BlockTrace<T>,
    gout: &Tensor<T>,
    grads: &mut Grads<T>,
) -> Result<Tensor<T>> {
    let gr = ops::maxpool2d_backward(&t.r_shape, &t.argmax, gout)?;
    let alpha = params.get(&bp(l, "alpha"))?;
    let c = alpha.len();
    grads.add(&bp(l, "alpha"), Tensor::new(vec![c], channel_sums(&gr, &t.e))?)?;
    let ge = gr.mul_channels(alpha.data())?;

    // SA-ECA
    let d = &t.eca.input;
    let dgate = ge.mul(d)?;
    let mut gd = ge.mul(&t.eca.gate)?;
    let dm3 = ops::sigmoid_backward(&t.eca.gate, &dgate)?;
    let pw = ops::conv2d_backward(&t.eca.m2, params.get(&bp(l, "eca.pw.w"))?, 1, Padding::Valid, &dm3)?;
    grads.add(&bp(l, "eca.pw.w"), pw.kernel)?;
    grads.add(&bp(l, "eca.pw.b"), pw.bias)?;
    let bn = ops::batch_norm_backward(&t.eca.bn, &pw.input)?;
    add_bn_grads(grads, &bp(l, "eca.bn"), &bn)?;
    let dw = ops::depthwise_conv2d_backward(d, params.get(&bp(l, "eca.dw.w"))?, 1, Padding::Same, &bn.input)?;
    grads.add(&bp(l, "eca.dw.w"), dw.kernel)?;
    gd.add_assign(&dw.input)?;

    let ga = ops::dropout_backward(t.mask.as_deref(), &gd);
    let gn = ops::relu6_backward(&t.n, &ga)?;
    let bn = ops::batch_norm_backward(&t.bn, &gn)?;
    add_bn_grads(grads, &bp(l, "bn"), &bn)?;

    // ghost
    let mask = params.get(&bp(l, "ghost.mask"))?;
    let base_c = bn.input.shape()[3] - mask.len();
    let (gbase, gghost) = bn.input.split_channels(base_c)?;
    let gghost = gghost.mul_channels(mask.data())?;
    let x = &t.x;
    let base = ops::conv2d_backward(x, params.get(&bp(l, "ghost.base.w"))?, 1, Padding::Valid, &gbase)?;
    grads.add(&bp(l, "ghost.base.w"), base.kernel)?;
    let pw = ops::conv2d_backward(
        &t.ghost.mid,
        params.get(&bp(l, "ghost.pw.w"))?,
        1,
        Padding::Valid,
        &gghost,
    )?;
    grads.add(&bp(l, "ghost.pw.w"), pw.kernel)?;
    let dw = ops::depthwise_conv2d_backward(x, params.get(&bp(l, "ghost.dw.w"))?, 1, Padding::Same, &pw.input)?;
    grads.add(&bp(l, "ghost.dw.w"), dw.kernel)?;
    let mut gx = base.input;
    gx.add_assign(&dw.input)?;

    // skip path
    let pwn = bp(l, "proj.w");
    if params.contains(&pwn) {
        let pg = ops::conv2d_backward(x, params.get(&pwn)?, 1, Padding::Valid, &gr)?;
        grads.add(&pwn, pg.kernel)?;
        grads.add(&bp(l, "proj.b"), pg.bias)?;
        gx.add_assign(&pg.input)?;
    } else {
        gx.add_assign(&gr)?;
    }
    Ok(gx)
}

fn head_backward<T: Real>(
    params: &ParamStore<T>,
    t: &HeadTrace<T>,
    gf: &Tensor<T>,
    grads: &mut Grads<T>,
) -> Result<Tensor<T>> {
    let gu = ops::bounded_unit_backward(&t.u, gf)?;
    let gamma = params.get("head.gamma_spk")?;
    let c = gamma.len();
    grads.add("head.gamma_spk", Tensor::new(vec![c], channel_sums(&gu, &t.n))?)?;
    let ones = Tensor::full(gu.shape(), T::one());
    grads.add("head.beta_spk", Tensor::new(vec![c], channel_sums(&gu, &ones))?)?;
    let gn = gu.mul_channels(gamma.data())?;
    let bn = ops::batch_norm_backward(&t.bn, &gn)?;
    add_bn_grads(grads, "head.bn", &bn)?;
    let pw = ops::conv2d_backward(&t.mid, params.get("head.pw.w")?, 1, Padding::Valid, &bn.input)?;
    grads.add("head.pw.w", pw.kernel)?;
    let dw = ops::depthwise_conv2d_backward(&t.x, params.get("head.dw.w")?, 1, Padding::Same, &pw.input)?;
    grads.add("head.dw.w", dw.kernel)?;
    Ok(dw.input)
}

fn se_backward<T: Real>(
    params: &ParamStore<T>,
    t: &SeTrace<T>,
    gout: &Tensor<T>,
    grads: &mut Grads<T>,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = t.f.dims4("se_backward")?;
    let hw = h * w * c;
    let mut ds = Tensor::zeros(&[n, c]);
    let mut gf = gout.clone();
    for b in 0..n {
        let srow = &t.s.data()[b * c..(b + 1) * c];
        let dsrow = &mut ds.data_mut()[b * c..(b + 1) * c];
        let frows = t.f.data()[b * hw..(b + 1) * hw].chunks_exact(c);
        let grows = gf.data_mut()[b * hw..(b + 1) * hw].chunks_exact_mut(c);
        for (frow, grow) in frows.zip(grows) {
            for ch in 0..c {
                dsrow[ch] += grow[ch] * frow[ch];
                grow[ch] *= srow[ch];
            }
        }
    }
    let dh2 = ops::sigmoid_backward(&t.s, &ds)?;
    let d2 = ops::dense_backward(&t.r1, params.get("se.w2")?, &dh2)?;
    grads.add("se.w2", d2.weight)?;
    grads.add("se.b2", d2.bias)?;
    let dh1 = ops::relu_backward(&t.h1, &d2.input)?;
    let d1 = ops::dense_backward(&t.m, params.get("se.w1")?, &dh1)?;
    grads.add("se.w1", d1.weight)?;
    grads.add("se.b1", d1.bias)?;
    let gm = ops::spatial_mean_backward(t.f.shape(), &d1.input)?;
    gf.add_assign(&gm)?;
    Ok(gf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QanaModel<T: Real = f32> {
    pub config: QanaConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> QanaModel<T> {
    pub fn new(config: QanaConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        let model = Self { config, params };
        model.spec().validate(&model.params)?;
        Ok(model)
    }

    pub fn from_parts(config: QanaConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let model = Self { config, params };
        model.spec().validate(&model.params)?;
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::qana(&self.config)
    }

    pub fn cast<U: Real>(&self) -> QanaModel<U> {
        QanaModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Logits `[N, num_classes]`. Train mode needs `rng` for dropout and
    /// uses batch statistics without touching the running ones.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: Option<&mut dyn RngCore>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(x, mode, rng)?.0)
    }

    pub fn forward_trace(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<T>, Trace<T>)> {
        Ctx::new(&self.params, &self.config, mode, rng).run(x)
    }

    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> Result<Grads<T>> {
        let p = &self.params;
        let mut grads = Grads::new();
        let d = ops::dense_backward(&trace.flat, p.get("cls.w")?, grad_logits)?;
        grads.add("cls.w", d.weight)?;
        grads.add("cls.b", d.bias)?;
        let hc = self.config.head_channels;
        let n = trace.flat.shape()[0];
        let gfs = d.input.reshape(&[n, HEAD_SIDE, HEAD_SIDE, hc])?;
        let gf = se_backward(p, &trace.se, &gfs, &mut grads)?;
        let mut g = head_backward(p, &trace.head, &gf, &mut grads)?;
        for l in (1..=NUM_BLOCKS).rev() {
            g = block_backward(p, l, &trace.blocks[l - 1], &g, &mut grads)?;
        }
        Ok(grads)
    }

    /// Fold a train-mode trace's batch statistics into the running ones.
    pub fn apply_bn_stats(&mut self, trace: &Trace<T>) -> Result<()> {
        let momentum = self.config.bn_momentum;
        for (prefix, stats) in &trace.bn_stats {
            let names = bn_params(prefix);
            let mut mean = self.params.get(&names[2])?.clone();
            let mut var = self.params.get(&names[3])?.clone();
            ops::update_running(&mut mean, &mut var, stats, momentum);
            self.params.set(&names[2], mean)?;
            self.params.set(&names[3], var)?;
        }
        Ok(())
    }

    /// Classifier input (flattened SE output) in infer mode.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, trace) = self.forward_trace(x, Mode::Infer, None)?;
        Ok(trace.flat)
    }
}

/// Ghost module of block `l` (1-based) on its own.
pub fn ghost_forward<T: Real>(x: &Tensor<T>, cfg: &GhostConfig, params: &ParamStore<T>, l: usize) -> Result<Tensor<T>> {
    cfg.validate()?;
    let qcfg = QanaConfig::default();
    let mut ctx = Ctx::new(params, &qcfg, Mode::Infer, None);
    let out = ctx.ghost(l, x)?.0;
    if out.shape()[3] != cfg.out_channels {
        return Err(shape_err(
            "ghost_forward",
            format!("produced {} channels, config says {}", out.shape()[3], cfg.out_channels),
        ));
    }
    Ok(out)
}

/// SA-ECA attention of block `l`; BN uses running statistics unless `mode`
/// is train.
pub fn sa_eca_forward<T: Real>(
    x: &Tensor<T>,
    params: &ParamStore<T>,
    cfg: &QanaConfig,
    l: usize,
    mode: Mode,
) -> Result<Tensor<T>> {
    Ok(Ctx::new(params, cfg, mode, None).eca(l, x)?.0)
}

pub fn qana_block_forward<T: Real>(
    x: &Tensor<T>,
    l: usize,
    params: &ParamStore<T>,
    cfg: &QanaConfig,
    mode: Mode,
    rng: Option<&mut dyn RngCore>,
) -> Result<Tensor<T>> {
    if !(1..=NUM_BLOCKS).contains(&l) {
        return Err(QanaError::Config(format!("block index {l} outside 1..=4")));
    }
    Ok(Ctx::new(params, cfg, mode, rng).block(l, x)?.0)
}

pub fn spike_head_forward<T: Real>(
    x: &Tensor<T>,
    params: &ParamStore<T>,
    cfg: &QanaConfig,
    mode: Mode,
) -> Result<Tensor<T>> {
    Ok(Ctx::new(params, cfg, mode, None).head(x)?.0)
}

pub fn se_forward<T: Real>(x: &Tensor<T>, params: &ParamStore<T>) -> Result<Tensor<T>> {
    let cfg = QanaConfig::default();
    Ok(Ctx::new(params, &cfg, Mode::Infer, None).se(x)?.0)
}

pub fn classify<T: Real>(x: &Tensor<T>, params: &ParamStore<T>) -> Result<Tensor<T>> {
    let cfg = QanaConfig::default();
    Ok(Ctx::new(params, &cfg, Mode::Infer, None).classify(x)?.0)
}

/// Deterministic per-batch RNG for dropout.
pub fn dropout_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}
