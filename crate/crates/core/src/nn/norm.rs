//! Per-channel batch normalization over batch and spatial axes.

use crate::real::Real;

use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running estimate in the update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch statistics from a training-mode pass, for the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

pub fn bn_train_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, BnCache<T>, BnStats<T>) {
    let c = x.shape.c;
    let m = x.rows();
    let mf = T::of(m as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data.chunks(c) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += *v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= mf);
    let mut var = vec![T::zero(); c];
    for row in x.data.chunks(c) {
        for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = *v - *mu;
            *a += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= mf);
    let eps = T::of(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut y = Tensor::zeros(x.n, x.shape);
    for ((xr, hr), yr) in x
        .data
        .chunks(c)
        .zip(xhat.chunks_mut(c))
        .zip(y.data.chunks_mut(c))
    {
        for ch in 0..c {
            let h = (xr[ch] - mean[ch]) * inv_std[ch];
            hr[ch] = h;
            yr[ch] = gamma[ch] * h + beta[ch];
        }
    }
    let unbias = if m > 1 {
        T::of(m as f64 / (m as f64 - 1.0))
    } else {
        T::one()
    };
    let stats = BnStats {
        mean,
        var: var.into_iter().map(|v| v * unbias).collect(),
    };
    (y, BnCache { xhat, inv_std }, stats)
}

pub fn bn_eval_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Tensor<T> {
    let c = x.shape.c;
    let eps = T::of(BN_EPS);
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma[ch] / (running_var[ch] + eps).sqrt())
        .collect();
    let mut y = Tensor::zeros(x.n, x.shape);
    for (xr, yr) in x.data.chunks(c).zip(y.data.chunks_mut(c)) {
        for ch in 0..c {
            yr[ch] = scale[ch] * (xr[ch] - running_mean[ch]) + beta[ch];
        }
    }
    y
}

/// Eval-mode backward: the layer is a fixed per-channel affine map.
pub fn bn_eval_backward<T: Real>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    gamma: &[T],
    running_mean: &[T],
    running_var: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let c = x.shape.c;
    let eps = T::of(BN_EPS);
    let inv: Vec<T> = running_var
        .iter()
        .map(|v| T::one() / (*v + eps).sqrt())
        .collect();
    let mut dx = Tensor::zeros(x.n, x.shape);
    for ((xr, dr), out) in x
        .data
        .chunks(c)
        .zip(dy.data.chunks(c))
        .zip(dx.data.chunks_mut(c))
    {
        for ch in 0..c {
            let h = (xr[ch] - running_mean[ch]) * inv[ch];
            dgamma[ch] += dr[ch] * h;
            dbeta[ch] += dr[ch];
            out[ch] = dr[ch] * gamma[ch] * inv[ch];
        }
    }
    dx
}

pub fn bn_train_backward<T: Real>(
    cache: &BnCache<T>,
    dy: &Tensor<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let c = dy.shape.c;
    let m = dy.rows();
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for (dr, hr) in dy.data.chunks(c).zip(cache.xhat.chunks(c)) {
        for ch in 0..c {
            sum_dy[ch] += dr[ch];
            sum_dy_xhat[ch] += dr[ch] * hr[ch];
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_dy_xhat[ch];
        dbeta[ch] += sum_dy[ch];
    }
    let mf = T::of(m as f64);
    let mut dx = Tensor::zeros(dy.n, dy.shape);
    for ((dr, hr), out) in dy
        .data
        .chunks(c)
        .zip(cache.xhat.chunks(c))
        .zip(dx.data.chunks_mut(c))
    {
        for ch in 0..c {
            out[ch] = gamma[ch] * cache.inv_std[ch] / mf
                * (mf * dr[ch] - sum_dy[ch] - hr[ch] * sum_dy_xhat[ch]);
        }
    }
    dx
}
