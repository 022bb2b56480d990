//! Nested-loop oracles for the tensor primitives (f64, NHWC).

use qana_core::Tensor;

fn same_pad(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(len);
    (out, total / 2)
}

/// Plain 2-D convolution. `same` selects TF-style zero padding.
pub fn conv2d(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&[f64]>, stride: usize, same: bool) -> Tensor<f64> {
    let s = x.shape();
    let (n, h, w, cin) = (s[0], s[1], s[2], s[3]);
    let ks = k.shape();
    let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
    let (oh, pt) = if same {
        same_pad(h, kh, stride)
    } else {
        ((h - kh) / stride + 1, 0)
    };
    let (ow, pl) = if same {
        same_pad(w, kw, stride)
    } else {
        ((w - kw) / stride + 1, 0)
    };
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pt as i64;
                            let ix = (ox * stride + kx) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x.data()[((b * h + iy as usize) * w + ix as usize) * cin + ci];
                                let kv = k.data()[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, cout], out).unwrap()
}

pub fn depthwise(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, same: bool) -> Tensor<f64> {
    let s = x.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = (k.shape()[0], k.shape()[1]);
    let (oh, pt) = if same {
        same_pad(h, kh, stride)
    } else {
        ((h - kh) / stride + 1, 0)
    };
    let (ow, pl) = if same {
        same_pad(w, kw, stride)
    } else {
        ((w - kw) / stride + 1, 0)
    };
    let mut out = vec![0.0; n * oh * ow * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pt as i64;
                            let ix = (ox * stride + kx) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            acc += x.data()[((b * h + iy as usize) * w + ix as usize) * c + ch]
                                * k.data()[(ky * kw + kx) * c + ch];
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * c + ch] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, c], out).unwrap()
}

/// Depthwise (same, stride 1) then pointwise, evaluated as one sum per
/// output element.
pub fn separable(x: &Tensor<f64>, dk: &Tensor<f64>, pk: &Tensor<f64>, bias: Option<&[f64]>) -> Tensor<f64> {
    let s = x.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = (dk.shape()[0], dk.shape()[1]);
    let cout = pk.shape()[3];
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = vec![0.0; n * h * w * cout];
    for b in 0..n {
        for oy in 0..h {
            for ox in 0..w {
                for co in 0..cout {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..c {
                        let mut dsum = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy + ky) as i64 - pt as i64;
                                let ix = (ox + kx) as i64 - pl as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                dsum += x.data()[((b * h + iy as usize) * w + ix as usize) * c + ci]
                                    * dk.data()[(ky * kw + kx) * c + ci];
                            }
                        }
                        acc += dsum * pk.data()[ci * cout + co];
                    }
                    out[((b * h + oy) * w + ox) * cout + co] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, h, w, cout], out).unwrap()
}

pub fn maxpool(x: &Tensor<f64>, window: usize) -> Tensor<f64> {
    let s = x.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / window, w / window);
    let mut out = vec![f64::NEG_INFINITY; n * oh * ow * c];
    for b in 0..n {
        for y in 0..oh * window {
            for xx in 0..ow * window {
                for ch in 0..c {
                    let o = &mut out[((b * oh + y / window) * ow + xx / window) * c + ch];
                    *o = o.max(x.data()[((b * h + y) * w + xx) * c + ch]);
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, c], out).unwrap()
}

/// `x: [N,D]`, `w: [K,D]`.
pub fn dense(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>) -> Tensor<f64> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[0];
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            out[i * k + j] =
                b.map_or(0.0, |b| b[j]) + (0..d).map(|e| x.data()[i * d + e] * w.data()[j * d + e]).sum::<f64>();
        }
    }
    Tensor::new(vec![n, k], out).unwrap()
}

pub fn spatial_mean(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    acc += x.data()[((b * h + y) * w + xx) * c + ch];
                }
            }
            out[b * c + ch] = acc / (h * w) as f64;
        }
    }
    Tensor::new(vec![n, c], out).unwrap()
}

/// Two-pass per-channel mean and biased variance, then the affine map.
pub fn batch_norm_train(x: &Tensor<f64>, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor<f64> {
    let c = gamma.len();
    let rows = x.len() / c;
    let mut out = x.data().to_vec();
    for ch in 0..c {
        let vals: Vec<f64> = (0..rows).map(|r| x.data()[r * c + ch]).collect();
        let mean = vals.iter().sum::<f64>() / rows as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64;
        for r in 0..rows {
            out[r * c + ch] = gamma[ch] * (vals[r] - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}
