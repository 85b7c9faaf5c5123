use crate::real::Real;

use super::tensor::Tensor;

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    Tensor {
        n: x.n,
        shape: x.shape,
        data: x
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect(),
    }
}

/// Gradient through a leaky ReLU given its input.
pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, slope: T) -> Tensor<T> {
    Tensor {
        n: x.n,
        shape: x.shape,
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| if v > T::zero() { g } else { g * slope })
            .collect(),
    }
}

pub fn leaky<T: Real>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

pub fn leaky_grad<T: Real>(v: T, slope: T) -> T {
    if v > T::zero() {
        T::one()
    } else {
        slope
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
