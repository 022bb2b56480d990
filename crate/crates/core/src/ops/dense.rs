use rand::Rng;

use super::Mode;
use crate::error::{shape_err, QanaError, Result};
use crate::tensor::{Real, Tensor};

/// `y = x·Wᵀ + b` with `x: [N, D]`, `W: [K, D]`, `b: [K]`.
pub fn dense<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, d) = x.dims2("dense")?;
    let (k, wd) = weight.dims2("dense")?;
    if wd != d {
        return Err(shape_err(
            "dense",
            format!("input features (dim 1) = {d} but weight columns (dim 1) = {wd}"),
        ));
    }
    if let Some(b) = bias {
        if b.len() != k {
            return Err(shape_err(
                "dense",
                format!("bias has {} entries for {k} outputs", b.len()),
            ));
        }
    }
    let mut out = Tensor::zeros(&[n, k]);
    let (xd, wdat) = (x.data(), weight.data());
    for (row, orow) in xd.chunks_exact(d).zip(out.data_mut().chunks_exact_mut(k)) {
        for (j, o) in orow.iter_mut().enumerate() {
            let wrow = &wdat[j * d..(j + 1) * d];
            let mut acc = bias.map_or(T::zero(), |b| b.data()[j]);
            for (&a, &b) in row.iter().zip(wrow) {
                acc += a * b;
            }
            *o = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
    let (n, d) = x.dims2("dense_backward")?;
    let (k, _) = weight.dims2("dense_backward")?;
    if grad_out.shape() != [n, k] {
        return Err(shape_err(
            "dense_backward",
            format!("grad {:?} vs [{n},{k}]", grad_out.shape()),
        ));
    }
    let mut dx = Tensor::zeros(&[n, d]);
    let mut dw = Tensor::zeros(&[k, d]);
    let mut db = Tensor::zeros(&[k]);
    let (xd, wdat, gd) = (x.data(), weight.data(), grad_out.data());
    for i in 0..n {
        let xrow = &xd[i * d..(i + 1) * d];
        for j in 0..k {
            let g = gd[i * k + j];
            if g == T::zero() {
                continue;
            }
            db.data_mut()[j] += g;
            let wrow = &wdat[j * d..(j + 1) * d];
            let dwrow = &mut dw.data_mut()[j * d..(j + 1) * d];
            for (dwv, &xv) in dwrow.iter_mut().zip(xrow) {
                *dwv += g * xv;
            }
            let dxrow = &mut dx.data_mut()[i * d..(i + 1) * d];
            for (dxv, &wv) in dxrow.iter_mut().zip(wrow) {
                *dxv += g * wv;
            }
        }
    }
    Ok(DenseGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Global average over H and W: `[N,H,W,C] → [N,C]`.
pub fn spatial_mean<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.dims4("spatial_mean")?;
    let inv = T::lit(1.0 / (h * w) as f64);
    let mut out = Tensor::zeros(&[n, c]);
    for b in 0..n {
        let orow = &mut out.data_mut()[b * c..(b + 1) * c];
        for row in x.data()[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
            for (o, &v) in orow.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    Ok(out)
}

pub fn spatial_mean_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = *input_shape else {
        return Err(shape_err("spatial_mean_backward", "input shape must be rank 4"));
    };
    if grad_out.shape() != [n, c] {
        return Err(shape_err("spatial_mean_backward", "grad shape mismatch"));
    }
    let inv = T::lit(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        let grow = &grad_out.data()[b * c..(b + 1) * c];
        for row in dx.data_mut()[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
            for (d, &g) in row.iter_mut().zip(grow) {
                *d = g * inv;
            }
        }
    }
    Ok(dx)
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or `1/(1-rate)`) so the backward pass can replay it.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(QanaError::Config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, grad_out: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let mut g = grad_out.clone();
            for (v, &k) in g.data_mut().iter_mut().zip(m) {
                *v *= k;
            }
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_input() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &w, Some(&Tensor::zeros(&[3]))).unwrap(), x);
        let big = Tensor::<f32>::zeros(&[1, 4096]);
        let wc = Tensor::<f32>::zeros(&[7, 4096]);
        assert_eq!(dense(&big, &wc, None).unwrap().shape(), &[1, 7]);
    }

    #[test]
    fn spatial_mean_of_constant_and_sixteen_cells() {
        let x = Tensor::<f64>::full(&[2, 3, 3, 4], 2.5);
        assert!(spatial_mean(&x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 2.5).abs() < 1e-12));
        let y = Tensor::<f64>::from_fn(&[1, 4, 4, 1], |i| i as f64);
        let m = spatial_mean(&y).unwrap().data()[0];
        assert!((m - y.sum() / 16.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::from_fn(&[100], |i| i as f32);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.9, Mode::Infer, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_fraction_within_three_sigma() {
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::<f32>::full(&[n], 1.0);
        let (y, _) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64;
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((kept - n as f64 * 0.5).abs() < 3.0 * sigma, "kept {kept}");
    }
}
