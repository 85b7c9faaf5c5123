//! The three ×2 upsampling blocks and the voxel rearrangements behind them.
//!
//! * **resize-conv**: nearest-neighbour resize, then a stride-1 convolution.
//! * **sub-pixel**: a low-resolution convolution to `nf` channels, then a
//!   voxel shuffle to `nf / 8` channels on the doubled grid.
//! * **sub-pixel NN**: a stride-2 transposed convolution whose `2k`-wide
//!   kernel starts as the nearest-neighbour enlargement of a `k`-wide one, so
//!   all eight output phases are identical at initialization.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::conv::{conv3d_forward, conv_transpose3d_forward, ConvGeom};
use crate::nn::shuffle;
use crate::nn::Tensor;
use crate::real::Real;
use crate::volume::{Shape, Volume};

/// Per-block scale factor; larger factors chain blocks.
pub const BLOCK_SCALE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMethod {
    ResizeConv,
    Subpixel,
    SubpixelNn,
}

impl UpsampleMethod {
    pub const ALL: [UpsampleMethod; 3] = [
        UpsampleMethod::ResizeConv,
        UpsampleMethod::Subpixel,
        UpsampleMethod::SubpixelNn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UpsampleMethod::ResizeConv => "resize_conv",
            UpsampleMethod::Subpixel => "subpixel",
            UpsampleMethod::SubpixelNn => "subpixel_nn",
        }
    }

    /// Column label used in result tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            UpsampleMethod::ResizeConv => "Resize Conv.",
            UpsampleMethod::Subpixel => "Subpixel",
            UpsampleMethod::SubpixelNn => "Subpixel-NN",
        }
    }
}

impl fmt::Display for UpsampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpsampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resize_conv" => Ok(UpsampleMethod::ResizeConv),
            "subpixel" => Ok(UpsampleMethod::Subpixel),
            "subpixel_nn" => Ok(UpsampleMethod::SubpixelNn),
            other => Err(Error::Config(format!(
                "unknown upsample method {other:?} (expected resize_conv, subpixel or subpixel_nn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UpsampleSpec {
    pub method: UpsampleMethod,
    pub block_scale: usize,
    /// Odd kernel width `k`.
    pub kernel: usize,
    /// Filter count `nf` of the block's convolution.
    pub filters: usize,
}

impl UpsampleSpec {
    pub fn new(method: UpsampleMethod, kernel: usize, filters: usize) -> Self {
        UpsampleSpec {
            method,
            block_scale: BLOCK_SCALE,
            kernel,
            filters,
        }
    }

    /// Channels leaving the block.
    pub fn out_channels(&self) -> usize {
        match self.method {
            UpsampleMethod::ResizeConv => self.filters,
            _ => self.filters / self.block_scale.pow(3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_scale != BLOCK_SCALE {
            return Err(Error::Config(format!(
                "upsampling blocks scale by {BLOCK_SCALE}, got {}",
                self.block_scale
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.filters == 0 {
            return Err(Error::Config("filter count must be positive".into()));
        }
        let r3 = self.block_scale.pow(3);
        if self.method != UpsampleMethod::ResizeConv && self.filters % r3 != 0 {
            return Err(Error::Config(format!(
                "{} needs filters divisible by {r3}, got {}",
                self.method, self.filters
            )));
        }
        Ok(())
    }

    fn expect(&self, method: UpsampleMethod) -> Result<()> {
        if self.method != method {
            return Err(Error::Config(format!(
                "block called with a {} spec, expected {method}",
                self.method
            )));
        }
        self.validate()
    }
}

/// Convolution weights, layout `[k, k, k, cin, cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Transposed-convolution weights, layout `[cin, k, k, k, cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposedKernel<T> {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn zeros(k: usize, cin: usize, cout: usize) -> Self {
        ConvKernel {
            k,
            cin,
            cout,
            weight: vec![T::zero(); k * k * k * cin * cout],
            bias: vec![T::zero(); cout],
        }
    }

    #[inline]
    pub fn index(&self, ky: usize, kx: usize, kz: usize, ci: usize, co: usize) -> usize {
        (((ky * self.k + kx) * self.k + kz) * self.cin + ci) * self.cout + co
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != self.k.pow(3) * self.cin * self.cout || self.bias.len() != self.cout
        {
            return Err(Error::Shape(format!(
                "conv kernel k={} cin={} cout={} has {} weights and {} biases",
                self.k,
                self.cin,
                self.cout,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

impl<T: Real> TransposedKernel<T> {
    pub fn zeros(k: usize, cin: usize, cout: usize) -> Self {
        TransposedKernel {
            k,
            cin,
            cout,
            weight: vec![T::zero(); k * k * k * cin * cout],
            bias: vec![T::zero(); cout],
        }
    }

    #[inline]
    pub fn index(&self, ci: usize, ky: usize, kx: usize, kz: usize, co: usize) -> usize {
        (((ci * self.k + ky) * self.k + kx) * self.k + kz) * self.cout + co
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != self.k.pow(3) * self.cin * self.cout || self.bias.len() != self.cout
        {
            return Err(Error::Shape(format!(
                "transposed kernel k={} cin={} cout={} has {} weights and {} biases",
                self.k,
                self.cin,
                self.cout,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    /// Zero padding that makes a stride-2 transposed convolution with this
    /// (even) kernel map `n` voxels onto exactly `2n`.
    pub fn stride2_pad(&self) -> usize {
        self.k / 2 - 1
    }
}

pub fn voxel_shuffle<T: Real>(v: &Volume<T>, r: usize) -> Result<Volume<T>> {
    let c = v.shape().c;
    if r == 0 || c % r.pow(3) != 0 {
        return Err(Error::Shape(format!(
            "voxel shuffle by {r} needs channels divisible by {}, got {c}",
            r.pow(3)
        )));
    }
    Ok(shuffle::shuffle(&Tensor::from_volume(v), r).volume(0))
}

pub fn voxel_unshuffle<T: Real>(v: &Volume<T>, r: usize) -> Result<Volume<T>> {
    let s = v.shape();
    if r == 0 || s.h % r != 0 || s.w % r != 0 || s.d % r != 0 {
        return Err(Error::Shape(format!(
            "voxel unshuffle by {r} needs spatial dims divisible by {r}, got {s}"
        )));
    }
    Ok(shuffle::unshuffle(&Tensor::from_volume(v), r).volume(0))
}

/// The `r^3` polyphase sub-lattices of `v`, ordered `(dy, dx, dz)`
/// lexicographically.
pub fn polyphase_components<T: Real>(v: &Volume<T>, r: usize) -> Result<Vec<Volume<T>>> {
    let u = voxel_unshuffle(v, r)?;
    let c = v.shape().c;
    let r3 = r.pow(3);
    let s = u.shape();
    Ok((0..r3)
        .map(|phase| {
            Volume::from_fn(s.with_channels(c), |y, x, z, ch| {
                u.get(y, x, z, ch * r3 + phase)
            })
        })
        .collect())
}

/// Largest absolute difference between the means of any two polyphase
/// components; zero when no checkerboard pattern is present.
pub fn phase_discrepancy<T: Real>(v: &Volume<T>, r: usize) -> Result<f64> {
    let means: Vec<f64> = polyphase_components(v, r)?
        .iter()
        .map(|p| p.data().iter().map(|x| x.f64()).sum::<f64>() / p.data().len() as f64)
        .collect();
    let mut worst = 0.0f64;
    for (i, a) in means.iter().enumerate() {
        for b in &means[i + 1..] {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

fn conv_same<T: Real>(v: &Volume<T>, kernel: &ConvKernel<T>) -> Result<Volume<T>> {
    kernel.check()?;
    if kernel.k % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv kernel width must be odd, got {}",
            kernel.k
        )));
    }
    if v.shape().c != kernel.cin {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {}",
            v.shape().c,
            kernel.cin
        )));
    }
    let g = ConvGeom::same(kernel.k, 1, kernel.cin, kernel.cout);
    let (y, _) = conv3d_forward(
        &Tensor::from_volume(v),
        &kernel.weight,
        Some(&kernel.bias),
        &g,
    );
    Ok(y.volume(0))
}

pub fn resize_conv_block<T: Real>(
    v: &Volume<T>,
    kernel: &ConvKernel<T>,
    spec: &UpsampleSpec,
) -> Result<Volume<T>> {
    spec.expect(UpsampleMethod::ResizeConv)?;
    if kernel.k != spec.kernel || kernel.cout != spec.filters {
        return Err(Error::Shape(format!(
            "kernel k={} nf={} does not match spec k={} nf={}",
            kernel.k, kernel.cout, spec.kernel, spec.filters
        )));
    }
    conv_same(&v.nn_upsample(spec.block_scale), kernel)
}

pub fn subpixel_block<T: Real>(
    v: &Volume<T>,
    kernel: &ConvKernel<T>,
    spec: &UpsampleSpec,
) -> Result<Volume<T>> {
    spec.expect(UpsampleMethod::Subpixel)?;
    if kernel.k != spec.kernel || kernel.cout != spec.filters {
        return Err(Error::Shape(format!(
            "kernel k={} nf={} does not match spec k={} nf={}",
            kernel.k, kernel.cout, spec.kernel, spec.filters
        )));
    }
    voxel_shuffle(&conv_same(v, kernel)?, spec.block_scale)
}

/// Enlarges a `k`-wide transposed-convolution kernel to `2k` by repeating
/// every tap twice along each spatial axis.
///
/// With the result, a stride-2 transposed convolution computes the stride-1
/// transposed convolution with `base` followed by a nearest-neighbour
/// resize, so every output phase is identical.
pub fn subpixel_nn_init<T: Real>(
    spec: &UpsampleSpec,
    base: &TransposedKernel<T>,
) -> Result<TransposedKernel<T>> {
    spec.expect(UpsampleMethod::SubpixelNn)?;
    base.check()?;
    if base.k != spec.kernel || base.cout != spec.out_channels() {
        return Err(Error::Shape(format!(
            "base kernel k={} cout={} does not match spec k={} nf/r^3={}",
            base.k,
            base.cout,
            spec.kernel,
            spec.out_channels()
        )));
    }
    let r = spec.block_scale;
    let mut out = TransposedKernel::zeros(base.k * r, base.cin, base.cout);
    for ci in 0..base.cin {
        for ky in 0..out.k {
            for kx in 0..out.k {
                for kz in 0..out.k {
                    for co in 0..base.cout {
                        let i = out.index(ci, ky, kx, kz, co);
                        out.weight[i] = base.weight[base.index(ci, ky / r, kx / r, kz / r, co)];
                    }
                }
            }
        }
    }
    out.bias.clone_from(&base.bias);
    Ok(out)
}

pub fn subpixel_nn_block<T: Real>(
    v: &Volume<T>,
    kernel: &TransposedKernel<T>,
    spec: &UpsampleSpec,
) -> Result<Volume<T>> {
    spec.expect(UpsampleMethod::SubpixelNn)?;
    kernel.check()?;
    if kernel.k != spec.kernel * spec.block_scale || kernel.cout != spec.out_channels() {
        return Err(Error::Shape(format!(
            "transposed kernel k={} cout={} does not match spec (k={}, nf/r^3={})",
            kernel.k,
            kernel.cout,
            spec.kernel * spec.block_scale,
            spec.out_channels()
        )));
    }
    if v.shape().c != kernel.cin {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {}",
            v.shape().c,
            kernel.cin
        )));
    }
    let g = ConvGeom {
        k: kernel.k,
        stride: spec.block_scale,
        pad: kernel.stride2_pad(),
        cin: kernel.cin,
        cout: kernel.cout,
    };
    let (y, _) = conv_transpose3d_forward(
        &Tensor::from_volume(v),
        &kernel.weight,
        Some(&kernel.bias),
        &g,
    );
    Ok(y.volume(0))
}

/// Rewrites sub-pixel block weights as the stride-2 transposed convolution
/// computing the same output.
///
/// Output phase `d` at low-resolution offset `t` (tap index `j = t + p`)
/// lands on transposed tap `d + 2 (k - 1 - j)` per axis. The transposed
/// form has one bias per output channel, so the sub-pixel biases must agree
/// across the eight phases of each channel.
pub fn subpixel_to_transposed<T: Real>(kernel: &ConvKernel<T>) -> Result<TransposedKernel<T>> {
    kernel.check()?;
    let r = BLOCK_SCALE;
    let r3 = r.pow(3);
    if kernel.cout % r3 != 0 {
        return Err(Error::Shape(format!(
            "sub-pixel kernel needs cout divisible by {r3}, got {}",
            kernel.cout
        )));
    }
    let c = kernel.cout / r3;
    let k = kernel.k;
    let mut out = TransposedKernel::zeros(k * r, kernel.cin, c);
    for ch in 0..c {
        let b = kernel.bias[ch * r3];
        if (1..r3).any(|ph| kernel.bias[ch * r3 + ph] != b) {
            return Err(Error::Shape(format!(
                "channel {ch} has phase-dependent biases; no transposed equivalent"
            )));
        }
        out.bias[ch] = b;
    }
    for jy in 0..k {
        for jx in 0..k {
            for jz in 0..k {
                for ci in 0..kernel.cin {
                    for ch in 0..c {
                        for dy in 0..r {
                            for dx in 0..r {
                                for dz in 0..r {
                                    let phase = (dy * r + dx) * r + dz;
                                    let src = kernel.index(jy, jx, jz, ci, ch * r3 + phase);
                                    let dst = out.index(
                                        ci,
                                        dy + r * (k - 1 - jy),
                                        dx + r * (k - 1 - jx),
                                        dz + r * (k - 1 - jz),
                                        ch,
                                    );
                                    out.weight[dst] = kernel.weight[src];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Output shape of one block applied to `input`.
pub fn block_output_shape(input: Shape, spec: &UpsampleSpec) -> Shape {
    input
        .scaled(spec.block_scale)
        .with_channels(spec.out_channels())
}
