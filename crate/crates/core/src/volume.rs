//! The `Volume` type: a dense `(y, x, z, c)` grid of intensities.

use crate::error::{Error, Result};
use crate::real::Real;

/// Extent of a volume along its four axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, d: usize, c: usize) -> Self {
        Shape { h, w, d, c }
    }

    /// Single-channel cube of side `n`.
    pub const fn cube(n: usize) -> Self {
        Shape::new(n, n, n, 1)
    }

    pub const fn spatial(&self) -> [usize; 3] {
        [self.h, self.w, self.d]
    }

    pub const fn voxels(&self) -> usize {
        self.h * self.w * self.d
    }

    pub const fn len(&self) -> usize {
        self.h * self.w * self.d * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn scaled(self, r: usize) -> Self {
        Shape::new(self.h * r, self.w * r, self.d * r, self.c)
    }

    #[inline]
    pub const fn index(&self, y: usize, x: usize, z: usize, c: usize) -> usize {
        ((y * self.w + x) * self.d + z) * self.c + c
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.h, self.w, self.d, self.c)
    }
}

/// A real-valued volume stored row-major in `(y, x, z, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.h == 0 || shape.w == 0 || shape.d == 0 || shape.c == 0 {
            return Err(Error::Shape(format!(
                "all dimensions must be >= 1, got {shape}"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Volume { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        assert!(!shape.is_empty(), "empty shape {shape}");
        Volume {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.h {
            for x in 0..shape.w {
                for z in 0..shape.d {
                    for c in 0..shape.c {
                        data.push(f(y, x, z, c));
                    }
                }
            }
        }
        Volume { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, z: usize, c: usize) -> T {
        self.data[self.shape.index(y, x, z, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, z: usize, c: usize, v: T) {
        let i = self.shape.index(y, x, z, c);
        self.data[i] = v;
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Volume {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts the element type, e.g. `f32` storage to `f64` compute.
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// Copies a spatial sub-block `[origin, origin + size)` (all channels).
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Self> {
        let s = self.shape;
        for a in 0..3 {
            if size[a] == 0 || origin[a] + size[a] > s.spatial()[a] {
                return Err(Error::Shape(format!(
                    "crop origin {origin:?} size {size:?} exceeds {s}"
                )));
            }
        }
        let out = Shape::new(size[0], size[1], size[2], s.c);
        let mut data = Vec::with_capacity(out.len());
        for y in 0..size[0] {
            for x in 0..size[1] {
                let start = s.index(origin[0] + y, origin[1] + x, origin[2], 0);
                data.extend_from_slice(&self.data[start..start + size[2] * s.c]);
            }
        }
        Ok(Volume { shape: out, data })
    }

    /// Single channel `c` as its own volume.
    pub fn channel(&self, c: usize) -> Self {
        assert!(c < self.shape.c);
        Volume {
            shape: self.shape.with_channels(1),
            data: self
                .data
                .iter()
                .skip(c)
                .step_by(self.shape.c)
                .copied()
                .collect(),
        }
    }

    /// Every `r`-th voxel along each spatial axis, starting at 0.
    pub fn decimate(&self, r: usize) -> Result<Self> {
        let s = self.shape;
        if r == 0 || s.h % r != 0 || s.w % r != 0 || s.d % r != 0 {
            return Err(Error::Shape(format!("{s} not divisible by {r}")));
        }
        Ok(Volume::from_fn(
            Shape::new(s.h / r, s.w / r, s.d / r, s.c),
            |y, x, z, c| self.get(y * r, x * r, z * r, c),
        ))
    }

    /// Nearest-neighbour replication by `r` along every spatial axis.
    pub fn nn_upsample(&self, r: usize) -> Self {
        let s = self.shape;
        Volume::from_fn(s.scaled(r), |y, x, z, c| self.get(y / r, x / r, z / r, c))
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Volume { shape, data }
    }
}

/// Affinely rescales `v` so its minimum is 0 and its maximum is 1.
pub fn normalize<T: Real>(v: &Volume<T>) -> Result<Volume<T>> {
    let (lo, hi) = (v.min(), v.max());
    if !(hi > lo) {
        return Err(Error::ZeroDynamicRange);
    }
    let range = hi - lo;
    Ok(v.map(|x| {
        if x == lo {
            T::zero()
        } else if x == hi {
            T::one()
        } else {
            ((x - lo) / range).max(T::zero()).min(T::one())
        }
    }))
}
