use crate::error::{Error, Result};
use crate::real::Real;
use crate::volume::{Shape, Volume};

/// A batch of equally shaped volumes, `(n, y, x, z, c)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub shape: Shape,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, shape: Shape) -> Self {
        Tensor {
            n,
            shape,
            data: vec![T::zero(); n * shape.len()],
        }
    }

    pub fn from_volumes(vols: &[Volume<T>]) -> Result<Self> {
        let first = vols
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?
            .shape();
        let mut data = Vec::with_capacity(vols.len() * first.len());
        for v in vols {
            if v.shape() != first {
                return Err(Error::Shape(format!(
                    "batch mixes shapes {first} and {}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        Ok(Tensor {
            n: vols.len(),
            shape: first,
            data,
        })
    }

    pub fn from_volume(v: &Volume<T>) -> Self {
        Tensor {
            n: 1,
            shape: v.shape(),
            data: v.data().to_vec(),
        }
    }

    pub fn into_volumes(self) -> Vec<Volume<T>> {
        let len = self.shape.len();
        self.data
            .chunks(len)
            .map(|c| Volume::from_parts_unchecked(self.shape, c.to_vec()))
            .collect()
    }

    pub fn volume(&self, i: usize) -> Volume<T> {
        let len = self.shape.len();
        Volume::from_parts_unchecked(self.shape, self.data[i * len..(i + 1) * len].to_vec())
    }

    /// Rows of the `(n * voxels) x c` matrix view.
    pub fn rows(&self) -> usize {
        self.n * self.shape.voxels()
    }

    pub fn concat(a: &Self, b: &Self) -> Self {
        assert_eq!(a.shape, b.shape);
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Tensor {
            n: a.n + b.n,
            shape: a.shape,
            data,
        }
    }

    /// Splits off the first `k` items.
    pub fn split(&self, k: usize) -> (Self, Self) {
        let len = self.shape.len();
        (
            Tensor {
                n: k,
                shape: self.shape,
                data: self.data[..k * len].to_vec(),
            },
            Tensor {
                n: self.n - k,
                shape: self.shape,
                data: self.data[k * len..].to_vec(),
            },
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}
