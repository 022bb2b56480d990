//! Pointwise activations. Clamp subgradients are exactly 0 at the clamp
//! boundaries.

use crate::error::Result;
use crate::tensor::{Real, Tensor};

fn clamp_fwd<T: Real>(x: &Tensor<T>, hi: T) -> Tensor<T> {
    x.map(|v| {
        if v > hi {
            hi
        } else if v > T::zero() {
            v
        } else {
            T::zero()
        }
    })
}

fn clamp_bwd<T: Real>(x: &Tensor<T>, grad: &Tensor<T>, hi: T) -> Result<Tensor<T>> {
    x.zip_map(grad, "clamp_backward", |v, g| {
        if v > T::zero() && v < hi {
            g
        } else {
            T::zero()
        }
    })
}

/// `min(6, max(0, x))`
pub fn relu6<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    clamp_fwd(x, T::lit(6.0))
}

pub fn relu6_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    clamp_bwd(x, grad, T::lit(6.0))
}

/// `min(1, max(0, x))`
pub fn bounded_unit<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    clamp_fwd(x, T::one())
}

pub fn bounded_unit_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    clamp_bwd(x, grad, T::one())
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    // split on sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward given the forward *output* `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, "sigmoid_backward", |s, g| g * s * (T::one() - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(relu6(&t(&[7.2, -3.0, 2.5])).data(), &[6.0, 0.0, 2.5]);
        assert_eq!(bounded_unit(&t(&[0.4, 1.5, -0.1])).data(), &[0.4, 1.0, 0.0]);
        assert_eq!(sigmoid(&t(&[0.0])).data(), &[0.5]);
    }

    #[test]
    fn corner_subgradients_are_zero() {
        let x = t(&[0.0, 6.0, 3.0, 1.0]);
        let g = t(&[1.0; 4]);
        assert_eq!(relu6_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(bounded_unit_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ranges_hold_at_extreme_magnitudes() {
        let x = t(&[f64::MAX, -f64::MAX, 1e300, -1e300, 710.0, -710.0]);
        assert!(relu6(&x).data().iter().all(|&v| (0.0..=6.0).contains(&v)));
        assert!(bounded_unit(&x).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let s = sigmoid(&x);
        assert!(s.is_finite());
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let xf = Tensor::<f32>::new(vec![2], vec![50.0, -50.0]).unwrap();
        let sf = sigmoid(&xf);
        assert!(sf.data()[0] <= 1.0 && sf.data()[1] >= 0.0);
    }
}
