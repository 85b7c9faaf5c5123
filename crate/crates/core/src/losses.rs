//! Least-squares adversarial losses and the MSE + gradient-difference
//! content loss.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::real::Real;
use crate::volume::{Shape, Volume};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Weight of the adversarial term in the generator loss.
    pub alpha: f64,
    /// Target for real samples in the discriminator loss (one-sided smoothing).
    pub real_label: f64,
    pub fake_label: f64,
    pub gdl_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1e-3,
            real_label: 0.9,
            fake_label: 0.0,
            gdl_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "loss.alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.real_label > 0.5 && self.real_label <= 1.0) {
            return Err(Error::Config(format!(
                "loss.real_label must lie in (0.5, 1], got {}",
                self.real_label
            )));
        }
        if self.fake_label != 0.0 {
            return Err(Error::Config("fake label is fixed at 0".into()));
        }
        if !(self.gdl_weight >= 0.0 && self.gdl_weight.is_finite()) {
            return Err(Error::Config(format!(
                "loss.gdl_weight must be >= 0, got {}",
                self.gdl_weight
            )));
        }
        Ok(())
    }
}

pub fn d_loss(d_real: f64, d_fake: f64, cfg: &LossConfig) -> f64 {
    0.5 * (d_real - cfg.real_label).powi(2) + 0.5 * (d_fake - cfg.fake_label).powi(2)
}

pub fn g_adv_loss(d_fake: f64) -> f64 {
    0.5 * (d_fake - 1.0).powi(2)
}

fn same_shape(a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "loss inputs differ in shape: {a} vs {b}"
        )));
    }
    Ok(())
}

pub fn mse_loss<T: Real>(hr: &Volume<T>, sr: &Volume<T>) -> Result<f64> {
    same_shape(hr.shape(), sr.shape())?;
    Ok(mse_slice(hr.data(), sr.data()))
}

fn mse_slice<T: Real>(hr: &[T], sr: &[T]) -> f64 {
    let sum: f64 = hr
        .iter()
        .zip(sr)
        .map(|(a, b)| {
            let d = a.f64() - b.f64();
            d * d
        })
        .sum();
    sum / hr.len() as f64
}

/// Layout of forward differences along one axis of a `(y, x, z, c)` block.
struct AxisWalk {
    outer: usize,
    n: usize,
    inner: usize,
}

impl AxisWalk {
    fn new(s: Shape, axis: usize) -> Self {
        let dims = [s.h, s.w, s.d, s.c];
        AxisWalk {
            outer: dims[..axis].iter().product(),
            n: dims[axis],
            inner: dims[axis + 1..].iter().product(),
        }
    }

    fn pairs(&self) -> usize {
        self.outer * (self.n - 1) * self.inner
    }

    /// Calls `f(i, j)` for every forward-difference pair `v[j] - v[i]`.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for o in 0..self.outer {
            for t in 0..self.n - 1 {
                let base = (o * self.n + t) * self.inner;
                for k in 0..self.inner {
                    f(base + k, base + self.inner + k);
                }
            }
        }
    }
}

fn check_gdl_shape(s: Shape) -> Result<()> {
    if s.h < 2 || s.w < 2 || s.d < 2 {
        return Err(Error::Shape(format!(
            "gradient difference loss needs every spatial dim >= 2, got {s}"
        )));
    }
    Ok(())
}

fn gdl_slice<T: Real>(s: Shape, hr: &[T], sr: &[T], mut grad: Option<(&mut [T], f64)>) -> f64 {
    let mut total = 0.0;
    for axis in 0..3 {
        let walk = AxisWalk::new(s, axis);
        let count = walk.pairs() as f64;
        let mut sum = 0.0;
        walk.for_each(|i, j| {
            let gh = (hr[j].f64() - hr[i].f64()).abs();
            let gs_signed = sr[j].f64() - sr[i].f64();
            let diff = gh - gs_signed.abs();
            sum += diff * diff;
            if let Some((g, scale)) = grad.as_mut() {
                // d/d(sr[j] - sr[i]) of (gh - |gs|)^2 / count
                let d = -2.0 * diff * gs_signed.signum() * *scale / count;
                let d = if gs_signed == 0.0 { 0.0 } else { d };
                g[j] += T::of(d);
                g[i] -= T::of(d);
            }
        });
        total += sum / count;
    }
    total
}

pub fn gdl_loss<T: Real>(hr: &Volume<T>, sr: &Volume<T>) -> Result<f64> {
    same_shape(hr.shape(), sr.shape())?;
    check_gdl_shape(hr.shape())?;
    Ok(gdl_slice(hr.shape(), hr.data(), sr.data(), None))
}

pub fn g_total_loss<T: Real>(
    hr: &Volume<T>,
    sr: &Volume<T>,
    d_fake: f64,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(cfg.alpha * g_adv_loss(d_fake) + mse_loss(hr, sr)? + cfg.gdl_weight * gdl_loss(hr, sr)?)
}

/// Batch-mean content losses and their gradient with respect to `sr`.
#[derive(Debug, Clone)]
pub struct ContentLoss<T> {
    pub mse: f64,
    pub gdl: f64,
    pub grad: Tensor<T>,
}

/// Mean over the batch of `mse + gdl_weight * gdl`, with gradient.
pub fn content_loss<T: Real>(
    hr: &Tensor<T>,
    sr: &Tensor<T>,
    gdl_weight: f64,
) -> Result<ContentLoss<T>> {
    same_shape(hr.shape, sr.shape)?;
    if hr.n != sr.n || hr.n == 0 {
        return Err(Error::Shape(format!("batch sizes {} and {}", hr.n, sr.n)));
    }
    check_gdl_shape(hr.shape)?;
    let len = hr.shape.len();
    let nb = hr.n as f64;
    let mut grad = Tensor::zeros(sr.n, sr.shape);
    let (mut mse, mut gdl) = (0.0, 0.0);
    for b in 0..hr.n {
        let h = &hr.data[b * len..(b + 1) * len];
        let s = &sr.data[b * len..(b + 1) * len];
        let g = &mut grad.data[b * len..(b + 1) * len];
        mse += mse_slice(h, s) / nb;
        let scale = 2.0 / (len as f64 * nb);
        for ((gv, hv), sv) in g.iter_mut().zip(h).zip(s) {
            *gv += T::of(scale * (sv.f64() - hv.f64()));
        }
        let weighted = if gdl_weight != 0.0 {
            Some((&mut *g, gdl_weight / nb))
        } else {
            None
        };
        gdl += gdl_slice(hr.shape, h, s, weighted) / nb;
    }
    Ok(ContentLoss { mse, gdl, grad })
}
