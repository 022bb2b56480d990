use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Non-overlapping max pooling (`stride == window`). Returns the pooled
/// tensor and, for each output element, the flat input index it came from.
/// Ties go to the first position in row-major window order.
pub fn maxpool2d<T: Real>(x: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = x.dims4("maxpool2d")?;
    if window == 0 || h < window || w < window {
        return Err(shape_err(
            "maxpool2d",
            format!("window {window} does not fit spatial {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / window, w / window);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let mut arg = vec![0usize; out.len()];
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let obase = ((b * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut bv = T::zero();
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = ((b * h + oy * window + dy) * w + ox * window + dx) * c + ch;
                            if best == usize::MAX || xd[i] > bv {
                                best = i;
                                bv = xd[i];
                            }
                        }
                    }
                    od[obase + ch] = bv;
                    arg[obase + ch] = best;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2d_backward<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err("maxpool2d_backward", "argmax/grad length mismatch"));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}
