//! NHWC convolutions with analytic backward passes.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding with output size `ceil(in / stride)`; odd totals put the
    /// extra row/column at the bottom/right.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

pub fn geometry(in_h: usize, in_w: usize, kh: usize, kw: usize, stride: usize, padding: Padding) -> Result<Geometry> {
    if stride == 0 {
        return Err(shape_err("conv", "stride must be >= 1"));
    }
    match padding {
        Padding::Valid => {
            if in_h < kh || in_w < kw {
                return Err(shape_err(
                    "conv",
                    format!("input {in_h}x{in_w} smaller than kernel {kh}x{kw} with valid padding"),
                ));
            }
            Ok(Geometry {
                out_h: (in_h - kh) / stride + 1,
                out_w: (in_w - kw) / stride + 1,
                pad_top: 0,
                pad_left: 0,
            })
        }
        Padding::Same => {
            let out_h = in_h.div_ceil(stride);
            let out_w = in_w.div_ceil(stride);
            let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
            let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
            Ok(Geometry {
                out_h,
                out_w,
                pad_top: pad_h / 2,
                pad_left: pad_w / 2,
            })
        }
    }
}

#[inline]
fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

fn kernel4<T: Real>(k: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *k.shape() {
        [kh, kw, ci, co] => Ok((kh, kw, ci, co)),
        _ => Err(shape_err(
            op,
            format!("kernel must be [kh,kw,in,out], got {:?}", k.shape()),
        )),
    }
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, c: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != c {
            return Err(shape_err(
                op,
                format!("bias has {} entries, out channels = {c}", b.len()),
            ));
        }
    }
    Ok(())
}

pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, h, w, cin) = input.dims4("conv2d")?;
    let (kh, kw, kin, cout) = kernel4(kernel, "conv2d")?;
    if kin != cin {
        return Err(shape_err(
            "conv2d",
            format!("input channels (dim 3) = {cin} but kernel in-channels (dim 2) = {kin}"),
        ));
    }
    check_bias(bias, cout, "conv2d")?;
    let g = geometry(h, w, kh, kw, stride, padding)?;
    let mut out = Tensor::zeros(&[n, g.out_h, g.out_w, cout]);
    let x = input.data();
    let k = kernel.data();
    let o = out.data_mut();
    for b in 0..n {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let obase = ((b * g.out_h + oy) * g.out_w + ox) * cout;
                let orow = &mut o[obase..obase + cout];
                if let Some(bias) = bias {
                    orow.copy_from_slice(bias.data());
                }
                for ky in 0..kh {
                    let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some(ix) = src(ox, kx, stride, g.pad_left, w) else {
                            continue;
                        };
                        let xbase = ((b * h + iy) * w + ix) * cin;
                        let kbase = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[xbase + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            let krow = &k[kbase + ci * cout..kbase + (ci + 1) * cout];
                            for (acc, &kv) in orow.iter_mut().zip(krow) {
                                *acc += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, h, w, cin) = input.dims4("conv2d_backward")?;
    let (kh, kw, _, cout) = kernel4(kernel, "conv2d_backward")?;
    let geo = geometry(h, w, kh, kw, stride, padding)?;
    if grad_out.shape() != [n, geo.out_h, geo.out_w, cout] {
        return Err(shape_err(
            "conv2d_backward",
            format!("grad {:?} does not match output shape", grad_out.shape()),
        ));
    }
    let mut dx = Tensor::zeros(input.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[cout]);
    let x = input.data();
    let k = kernel.data();
    let gd = grad_out.data();
    {
        let dxd = dx.data_mut();
        let dkd = dk.data_mut();
        for b in 0..n {
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    let gbase = ((b * geo.out_h + oy) * geo.out_w + ox) * cout;
                    let grow = &gd[gbase..gbase + cout];
                    for ky in 0..kh {
                        let Some(iy) = src(oy, ky, stride, geo.pad_top, h) else {
                            continue;
                        };
                        for kx in 0..kw {
                            let Some(ix) = src(ox, kx, stride, geo.pad_left, w) else {
                                continue;
                            };
                            let xbase = ((b * h + iy) * w + ix) * cin;
                            let kbase = (ky * kw + kx) * cin * cout;
                            for ci in 0..cin {
                                let xv = x[xbase + ci];
                                let kr = kbase + ci * cout..kbase + (ci + 1) * cout;
                                let mut acc = T::zero();
                                for ((dkv, &kv), &gv) in dkd[kr.clone()].iter_mut().zip(&k[kr]).zip(grow) {
                                    *dkv += xv * gv;
                                    acc += kv * gv;
                                }
                                dxd[xbase + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    let dbd = db.data_mut();
    for row in gd.chunks_exact(cout) {
        for (d, &g) in dbd.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}

fn depth_kernel<T: Real>(k: &Tensor<T>, c: usize, op: &'static str) -> Result<(usize, usize)> {
    match *k.shape() {
        [kh, kw, kc, 1] if kc == c => Ok((kh, kw)),
        [_, _, kc, 1] => Err(shape_err(
            op,
            format!("input channels (dim 3) = {c} but depthwise kernel channels (dim 2) = {kc}"),
        )),
        _ => Err(shape_err(
            op,
            format!("depthwise kernel must be [kh,kw,C,1], got {:?}", k.shape()),
        )),
    }
}

/// Channel-independent filtering; `kernel` is `[kh, kw, C, 1]`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.dims4("depthwise_conv2d")?;
    let (kh, kw) = depth_kernel(kernel, c, "depthwise_conv2d")?;
    check_bias(bias, c, "depthwise_conv2d")?;
    let g = geometry(h, w, kh, kw, stride, padding)?;
    let mut out = Tensor::zeros(&[n, g.out_h, g.out_w, c]);
    let x = input.data();
    let k = kernel.data();
    let o = out.data_mut();
    for b in 0..n {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let obase = ((b * g.out_h + oy) * g.out_w + ox) * c;
                let orow = &mut o[obase..obase + c];
                if let Some(bias) = bias {
                    orow.copy_from_slice(bias.data());
                }
                for ky in 0..kh {
                    let Some(iy) = src(oy, ky, stride, g.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some(ix) = src(ox, kx, stride, g.pad_left, w) else {
                            continue;
                        };
                        let xbase = ((b * h + iy) * w + ix) * c;
                        let kbase = (ky * kw + kx) * c;
                        for ((acc, &xv), &kv) in orow.iter_mut().zip(&x[xbase..xbase + c]).zip(&k[kbase..kbase + c]) {
                            *acc += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, h, w, c) = input.dims4("depthwise_conv2d_backward")?;
    let (kh, kw) = depth_kernel(kernel, c, "depthwise_conv2d_backward")?;
    let geo = geometry(h, w, kh, kw, stride, padding)?;
    if grad_out.shape() != [n, geo.out_h, geo.out_w, c] {
        return Err(shape_err(
            "depthwise_conv2d_backward",
            format!("grad {:?} does not match output shape", grad_out.shape()),
        ));
    }
    let mut dx = Tensor::zeros(input.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[c]);
    let x = input.data();
    let k = kernel.data();
    let gd = grad_out.data();
    {
        let dxd = dx.data_mut();
        let dkd = dk.data_mut();
        for b in 0..n {
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    let gbase = ((b * geo.out_h + oy) * geo.out_w + ox) * c;
                    let grow = &gd[gbase..gbase + c];
                    for ky in 0..kh {
                        let Some(iy) = src(oy, ky, stride, geo.pad_top, h) else {
                            continue;
                        };
                        for kx in 0..kw {
                            let Some(ix) = src(ox, kx, stride, geo.pad_left, w) else {
                                continue;
                            };
                            let xbase = ((b * h + iy) * w + ix) * c;
                            let kbase = (ky * kw + kx) * c;
                            for ch in 0..c {
                                let gv = grow[ch];
                                dkd[kbase + ch] += x[xbase + ch] * gv;
                                dxd[xbase + ch] += k[kbase + ch] * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    let dbd = db.data_mut();
    for row in gd.chunks_exact(c) {
        for (d, &g) in dbd.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}

/// Depthwise 3×3 (or any odd size) with same padding, then a pointwise
/// projection. `point_kernel` is `[1, 1, C, Cout]`.
pub fn separable_conv2d<T: Real>(
    input: &Tensor<T>,
    depth_kernel: &Tensor<T>,
    point_kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mid = depthwise_conv2d(input, depth_kernel, None, 1, Padding::Same)?;
    conv2d(&mid, point_kernel, bias, 1, Padding::Valid)
}

#[derive(Debug, Clone)]
pub struct SeparableGrads<T> {
    pub input: Tensor<T>,
    pub depth_kernel: Tensor<T>,
    pub point_kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn separable_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    depth_kernel: &Tensor<T>,
    point_kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<SeparableGrads<T>> {
    let mid = depthwise_conv2d(input, depth_kernel, None, 1, Padding::Same)?;
    let pg = conv2d_backward(&mid, point_kernel, 1, Padding::Valid, grad_out)?;
    let dg = depthwise_conv2d_backward(input, depth_kernel, 1, Padding::Same, &pg.input)?;
    Ok(SeparableGrads {
        input: dg.input,
        depth_kernel: dg.kernel,
        point_kernel: pg.kernel,
        bias: pg.bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_puts_extra_on_bottom_right() {
        let g = geometry(4, 4, 2, 2, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (4, 4, 0, 0));
        let g = geometry(5, 5, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (3, 1));
        let g = geometry(4, 4, 3, 3, 2, Padding::Same).unwrap();
        // total pad 1 → all of it at the bottom
        assert_eq!((g.out_h, g.pad_top), (2, 0));
    }

    #[test]
    fn identity_kernel_and_zero_kernel() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 1], |i| (i as f64).sin());
        let id = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d(&x, &id, None, 1, Padding::Same).unwrap(), x);
        let zero = Tensor::zeros(&[3, 3, 1, 2]);
        let y = conv2d(&x, &zero, None, 1, Padding::Same).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(depthwise_conv2d(&x, &id, None, 1, Padding::Valid).unwrap(), x);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 3]);
        let k = Tensor::<f32>::zeros(&[3, 3, 2, 4]);
        let err = conv2d(&x, &k, None, 1, Padding::Same).unwrap_err().to_string();
        assert!(err.contains("dim 3") && err.contains("dim 2"), "{err}");
        assert!(conv2d(&x, &Tensor::zeros(&[3, 3, 3, 4]), None, 0, Padding::Same).is_err());
    }

    #[test]
    fn ones_kernel_on_constant_field_gives_nine_c_in_interior() {
        let c = 0.7;
        let x = Tensor::<f64>::full(&[1, 6, 6, 2], c);
        let k = Tensor::full(&[3, 3, 2, 1], 1.0);
        let y = depthwise_conv2d(&x, &k, None, 1, Padding::Same).unwrap();
        for iy in 1..5 {
            for ix in 1..5 {
                assert!((y.at4(0, iy, ix, 1) - 9.0 * c).abs() < 1e-12);
            }
        }
        // corner only sees four taps
        assert!((y.at4(0, 0, 0, 0) - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn separable_output_shape() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 128]);
        let dk = Tensor::zeros(&[3, 3, 128, 1]);
        let pk = Tensor::zeros(&[1, 1, 128, 256]);
        assert_eq!(separable_conv2d(&x, &dk, &pk, None).unwrap().shape(), &[1, 4, 4, 256]);
    }
}
