//! Adam with bias correction, one moment pair per trainable parameter.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::{Grads, NetworkParams};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!(
                "adam_eps must be > 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    /// Number of updates applied so far.
    pub t: u64,
    pub m: IndexMap<String, Vec<T>>,
    pub v: IndexMap<String, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        let zeros: IndexMap<String, Vec<T>> = params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, p)| (n.clone(), vec![T::zero(); p.data.len()]))
            .collect();
        Adam {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn check_layout(&self, params: &NetworkParams<T>) -> Result<()> {
        let fresh = Adam::new(params);
        for (mine, theirs) in [(&self.m, &fresh.m), (&self.v, &fresh.v)] {
            if mine.len() != theirs.len()
                || mine
                    .iter()
                    .zip(theirs)
                    .any(|((a, x), (b, y))| a != b || x.len() != y.len())
            {
                return Err(Error::Shape(
                    "optimizer moments do not match the parameters".into(),
                ));
            }
        }
        Ok(())
    }

    /// One update `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(
        &mut self,
        params: &mut NetworkParams<T>,
        grads: &Grads<T>,
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let c1 = T::of(1.0 - cfg.beta1);
        let c2 = T::of(1.0 - cfg.beta2);
        let bc1 = T::of(1.0 - cfg.beta1.powi(t));
        let bc2 = T::of(1.0 - cfg.beta2.powi(t));
        let lr = T::of(lr);
        let eps = T::of(cfg.eps);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            let v = self
                .v
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            for i in 0..g.len() {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] = p.data[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
