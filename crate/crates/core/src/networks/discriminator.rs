use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::act::{self, leaky_relu_backward};
use crate::nn::conv::{ConvCache, ConvGeom};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::norm::BnStats;
use crate::nn::Tensor;
use crate::params::{Grads, NetworkParams, Param};
use crate::real::Real;
use crate::volume::Shape;

use super::layers::*;
use super::Mode;

/// Strided convolutional classifier ending in two dense layers and a
/// sigmoid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscriminatorConfig {
    pub filters: Vec<usize>,
    pub strides: Vec<usize>,
    pub dense_hidden: usize,
    pub leaky_slope: f64,
    /// Spatial extent of the (high-resolution) inputs.
    pub input: [usize; 3],
}

impl DiscriminatorConfig {
    /// Eight layers, 32 to 256 filters, doubling after each stride-2 layer.
    pub fn reference(input: [usize; 3]) -> Self {
        Self::with_base(32, 1024, input)
    }

    /// The reference layout with the filter ladder starting at `base`.
    pub fn with_base(base: usize, dense_hidden: usize, input: [usize; 3]) -> Self {
        let filters = (0..8).map(|i| base << (i / 2)).collect();
        DiscriminatorConfig {
            filters,
            strides: vec![1, 2, 1, 2, 1, 2, 1, 2],
            dense_hidden,
            leaky_slope: 0.2,
            input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.filters.len();
        if n == 0 || self.strides.len() != n {
            return Err(Error::Config(format!(
                "discriminator needs matching non-empty filter/stride lists, got {} and {}",
                n,
                self.strides.len()
            )));
        }
        if self.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::Config("discriminator strides must be 1 or 2".into()));
        }
        // resolution halves, then the next layer doubles the features
        for i in 1..n {
            let doubles = self.filters[i] == 2 * self.filters[i - 1];
            let same = self.filters[i] == self.filters[i - 1];
            let halved = self.strides[i - 1] == 2;
            if (halved && !doubles) || (!halved && !same) {
                return Err(Error::Config(format!(
                    "layer {i}: filters must double exactly after a stride-2 layer (filters {:?}, strides {:?})",
                    self.filters, self.strides
                )));
            }
        }
        if self.dense_hidden == 0 || self.filters.iter().any(|&f| f == 0) {
            return Err(Error::Config(
                "discriminator widths must be positive".into(),
            ));
        }
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Config(
                "discriminator input must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// Spatial shape after the convolution stack.
    pub fn feature_shape(&self) -> Shape {
        let mut s = self.input;
        for &st in &self.strides {
            for d in &mut s {
                *d = d.div_ceil(st);
            }
        }
        Shape::new(s[0], s[1], s[2], *self.filters.last().unwrap_or(&0))
    }
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    conv: ConvCache<T>,
    bn: Option<BnState<T>>,
    pre_act: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DiscCache<T> {
    layers: Vec<LayerCache<T>>,
    flat: Vec<T>,
    flat_shape: Shape,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    n: usize,
}

#[derive(Debug, Clone)]
pub struct DiscForward<T> {
    /// Probability of "real" per batch item.
    pub probs: Vec<T>,
    pub cache: DiscCache<T>,
    pub bn_stats: Vec<(String, BnStats<T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Discriminator { config })
    }

    fn geom(&self, i: usize) -> ConvGeom {
        let cin = if i == 0 {
            1
        } else {
            self.config.filters[i - 1]
        };
        ConvGeom::same(3, self.config.strides[i], cin, self.config.filters[i])
    }

    pub fn init<T: Real>(&self, rng: &mut impl Rng) -> NetworkParams<T> {
        let mut p = NetworkParams::new();
        for i in 0..self.config.filters.len() {
            // no normalization on the input layer
            add_conv(&mut p, &format!("conv{i}"), &self.geom(i), i == 0, rng);
            if i > 0 {
                add_bn(&mut p, &format!("bn{i}"), self.config.filters[i]);
            }
        }
        let fin = self.config.feature_shape().len();
        let hid = self.config.dense_hidden;
        p.insert("dense1.weight", Param::uniform(&[fin, hid], fin, rng));
        p.insert("dense1.bias", Param::zeros(&[hid], true));
        p.insert("dense2.weight", Param::uniform(&[hid, 1], hid, rng));
        p.insert("dense2.bias", Param::zeros(&[1], true));
        p
    }

    pub fn check_params<T: Real>(&self, params: &NetworkParams<T>) -> Result<()> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        self.init::<T>(&mut rng).check_layout(params)
    }

    pub fn forward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<DiscForward<T>> {
        let cfg = &self.config;
        if x.shape.spatial() != cfg.input || x.shape.c != 1 {
            return Err(Error::Shape(format!(
                "discriminator built for {:?}x1, got {}",
                cfg.input, x.shape
            )));
        }
        let slope = T::of(cfg.leaky_slope);
        let mut stats = Vec::new();
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(cfg.filters.len());
        for i in 0..cfg.filters.len() {
            let (y, conv) = conv_fwd(params, &format!("conv{i}"), &h, &self.geom(i))?;
            let (y, bn) = if i > 0 {
                let (y, s) = bn_fwd(params, &format!("bn{i}"), &y, mode, &mut stats)?;
                (y, Some(s))
            } else {
                (y, None)
            };
            let (y, pre_act) = leaky_fwd(y, slope);
            layers.push(LayerCache { conv, bn, pre_act });
            h = y;
        }
        let n = x.n;
        let fin = h.shape.len();
        let hid = cfg.dense_hidden;
        let hidden_pre = dense_forward(
            &h.data,
            n,
            fin,
            params.data("dense1.weight")?,
            params.data("dense1.bias")?,
        );
        let hidden: Vec<T> = hidden_pre.iter().map(|&v| act::leaky(v, slope)).collect();
        let logits = dense_forward(
            &hidden,
            n,
            hid,
            params.data("dense2.weight")?,
            params.data("dense2.bias")?,
        );
        let probs = logits.iter().map(|&l| act::sigmoid(l)).collect();
        Ok(DiscForward {
            probs,
            cache: DiscCache {
                layers,
                flat_shape: h.shape,
                flat: h.data,
                hidden_pre,
                hidden,
                n,
            },
            bn_stats: stats,
        })
    }

    /// Backpropagates `d loss / d prob` (one entry per batch item).
    ///
    /// Returns parameter gradients and, if requested, the input gradient.
    pub fn backward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        fwd: &DiscForward<T>,
        dprob: &[T],
        need_dx: bool,
    ) -> Result<(Grads<T>, Option<Tensor<T>>)> {
        let cfg = &self.config;
        let cache = &fwd.cache;
        let slope = T::of(cfg.leaky_slope);
        let n = cache.n;
        assert_eq!(dprob.len(), n);
        let mut grads = params.zero_grads();
        let dlogit: Vec<T> = dprob
            .iter()
            .zip(&fwd.probs)
            .map(|(&g, &p)| g * p * (T::one() - p))
            .collect();
        let hid = cfg.dense_hidden;
        let dhidden = {
            let (dw, db) = grads.pair_mut("dense2.weight", "dense2.bias");
            dense_backward(
                &cache.hidden,
                n,
                hid,
                params.data("dense2.weight")?,
                &dlogit,
                dw,
                db,
            )
        };
        let dhidden_pre: Vec<T> = dhidden
            .iter()
            .zip(&cache.hidden_pre)
            .map(|(&g, &v)| g * act::leaky_grad(v, slope))
            .collect();
        let fin = cache.flat_shape.len();
        let dflat = {
            let (dw, db) = grads.pair_mut("dense1.weight", "dense1.bias");
            dense_backward(
                &cache.flat,
                n,
                fin,
                params.data("dense1.weight")?,
                &dhidden_pre,
                dw,
                db,
            )
        };
        let mut dh = Tensor {
            n,
            shape: cache.flat_shape,
            data: dflat,
        };
        let last = cfg.filters.len() - 1;
        for (i, lc) in cache.layers.iter().enumerate().rev() {
            let mut d = leaky_relu_backward(&lc.pre_act, &dh, slope);
            if let Some(s) = &lc.bn {
                d = bn_bwd(params, &mut grads, &format!("bn{i}"), s, &d)?;
            }
            let want = i > 0 || need_dx;
            match conv_bwd(
                params,
                &mut grads,
                &format!("conv{i}"),
                &lc.conv,
                &d,
                &self.geom(i),
                want,
            )? {
                Some(dx) => dh = dx,
                None => {
                    debug_assert!(i == 0 && i <= last);
                    return Ok((grads, None));
                }
            }
        }
        Ok((grads, Some(dh)))
    }
}
