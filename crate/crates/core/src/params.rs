//! Named parameter storage shared by both networks.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::norm::{BnStats, BN_MOMENTUM};
use crate::real::Real;

/// Scale of the uniform initializer: weights are drawn from
/// `U(-b, b)` with `b = sqrt(INIT_GAIN / fan_in)`.
pub const INIT_GAIN: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Batch-norm running statistics are stored here but never optimized.
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn zeros(shape: &[usize], trainable: bool) -> Self {
        Param {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
            trainable,
        }
    }

    pub fn filled(shape: &[usize], v: T, trainable: bool) -> Self {
        Param {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
            trainable,
        }
    }

    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let b = (INIT_GAIN / fan_in as f64).sqrt();
        Param {
            shape: shape.to_vec(),
            data: (0..shape.iter().product::<usize>())
                .map(|_| T::of(rng.gen_range(-b..b)))
                .collect(),
            trainable: true,
        }
    }
}

/// Ordered map from layer name to its tensors, in network order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkParams<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn new() -> Self {
        NetworkParams {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, p: Param<T>) {
        self.entries.insert(name.into(), p);
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn data(&self, name: &str) -> Result<&[T]> {
        Ok(&self.get(name)?.data)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    /// Zero gradient buffers for every trainable entry.
    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            entries: self
                .entries
                .iter()
                .filter(|(_, p)| p.trainable)
                .map(|(k, p)| (k.clone(), vec![T::zero(); p.data.len()]))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            shape: p.shape.clone(),
                            data: p.data.iter().map(|v| U::of(v.f64())).collect(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Checks that `other` has the same names, shapes and roles.
    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter entries, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (name, p) in &self.entries {
            let q = other.get(name)?;
            if p.shape != q.shape || p.trainable != q.trainable {
                return Err(Error::Shape(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    p.shape, q.shape
                )));
            }
        }
        Ok(())
    }

    /// Folds one training batch's statistics into the running estimates of
    /// batch-norm layer `prefix`.
    pub fn update_running_stats(&mut self, prefix: &str, stats: &BnStats<T>) -> Result<()> {
        let m = T::of(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let p = self.get_mut(&format!("{prefix}.{suffix}"))?;
            for (r, b) in p.data.iter_mut().zip(batch) {
                *r = m * *r + one_m * *b;
            }
        }
        Ok(())
    }
}

/// Gradient buffers keyed like the trainable entries of [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    entries: IndexMap<String, Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.entries.get(name).map(|v| v.as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [T] {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("no gradient buffer for {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<T>)> {
        self.entries.iter()
    }

    /// Two disjoint gradient buffers at once.
    pub fn pair_mut(&mut self, a: &str, b: &str) -> (&mut [T], &mut [T]) {
        let ia = self.entries.get_index_of(a).expect("gradient buffer");
        let ib = self.entries.get_index_of(b).expect("gradient buffer");
        assert_ne!(ia, ib);
        let [x, y] = self
            .entries
            .get_disjoint_indices_mut([ia, ib])
            .expect("disjoint indices");
        (x.1.as_mut_slice(), y.1.as_mut_slice())
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .values()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|v| v.iter())
            .map(|x| x.f64() * x.f64())
            .sum::<f64>()
            .sqrt()
    }
}
