use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::act::leaky_relu_backward;
use crate::nn::conv::{self as convk, ConvCache, ConvGeom};
use crate::nn::norm::BnStats;
use crate::nn::{shuffle, Tensor};
use crate::params::{Grads, NetworkParams, Param};
use crate::real::Real;
use crate::upsampling::{subpixel_nn_init, TransposedKernel, UpsampleMethod, UpsampleSpec};
use crate::volume::{Shape, Volume};

use super::layers::*;
use super::lowering::Lowering;
use super::Mode;

/// Residual super-resolution generator.
///
/// `conv -> LeakyReLU`, then `res_blocks` residual blocks
/// (`conv -> BN -> LeakyReLU -> conv -> BN`, plus identity), a skip from the
/// first block's input to the last block's output, `log2(scale)` upsampling
/// blocks each followed by LeakyReLU, and a final single-channel convolution.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub res_blocks: usize,
    pub filters: usize,
    pub kernel: usize,
    pub scale: usize,
    pub upsample: UpsampleMethod,
    pub leaky_slope: f64,
    pub batch_norm: bool,
    /// Multiplier on the output convolution's initial weights.
    pub out_init_scale: f64,
    /// Initial output bias; `None` leaves it to the trainer, which uses the
    /// mean training intensity.
    pub out_init_bias: Option<f64>,
}

impl GeneratorConfig {
    /// Six residual blocks of 32 filters.
    pub fn reference(scale: usize, upsample: UpsampleMethod) -> Self {
        GeneratorConfig {
            res_blocks: 6,
            filters: 32,
            kernel: 3,
            scale,
            upsample,
            leaky_slope: 0.2,
            batch_norm: true,
            out_init_scale: 1.0,
            out_init_bias: Some(0.0),
        }
    }

    pub fn upsample_blocks(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    /// Block spec that keeps `filters` channels through every block.
    pub fn upsample_spec(&self) -> UpsampleSpec {
        let nf = match self.upsample {
            UpsampleMethod::ResizeConv => self.filters,
            _ => self.filters * 8,
        };
        UpsampleSpec::new(self.upsample, self.kernel, nf)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_power_of_two() || self.scale < 2 {
            return Err(Error::Config(format!(
                "generator scale must be a power of two >= 2, got {}",
                self.scale
            )));
        }
        if self.filters == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "generator needs filters > 0 and an odd kernel, got {} and {}",
                self.filters, self.kernel
            )));
        }
        if !(self.out_init_scale >= 0.0 && self.out_init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "out_init_scale must be >= 0, got {}",
                self.out_init_scale
            )));
        }
        if self.out_init_bias.is_some_and(|b| !b.is_finite()) {
            return Err(Error::Config("out_init_bias must be finite".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        self.upsample_spec().validate()
    }

    /// Radius of the receptive field in output voxels.
    pub fn receptive_radius(&self) -> usize {
        let p = self.kernel / 2;
        let lr_convs = 1 + 2 * self.res_blocks;
        let mut radius = lr_convs * p;
        for _ in 0..self.upsample_blocks() {
            radius = radius * 2
                + 1
                + match self.upsample {
                    UpsampleMethod::ResizeConv => p,
                    _ => 2 * p,
                };
        }
        radius + p
    }
}

#[derive(Debug, Clone)]
struct ResCache<T> {
    c1: ConvCache<T>,
    bn1: Option<BnState<T>>,
    pre_act: Tensor<T>,
    c2: ConvCache<T>,
    bn2: Option<BnState<T>>,
}

/// Every upsampling block runs as a low-resolution convolution to `8 f`
/// channels plus a voxel shuffle; resize-conv and transposed blocks keep
/// the lowered weights for the backward pass.
#[derive(Debug, Clone)]
struct UpCache<T> {
    conv: ConvCache<T>,
    lowered: Option<(Lowering, Vec<T>)>,
}

#[derive(Debug, Clone)]
pub struct GenCache<T> {
    pre: ConvCache<T>,
    pre_act: Tensor<T>,
    res: Vec<ResCache<T>>,
    ups: Vec<(UpCache<T>, Tensor<T>)>,
    out: ConvCache<T>,
}

/// Result of a generator forward pass.
#[derive(Debug, Clone)]
pub struct GenForward<T> {
    /// Unclamped in train mode, clamped to `[0, 1]` in eval mode.
    pub output: Tensor<T>,
    pub cache: GenCache<T>,
    /// Batch statistics of every batch-norm layer (train mode only).
    pub bn_stats: Vec<(String, BnStats<T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Generator { config })
    }

    fn geom(&self, cin: usize, cout: usize) -> ConvGeom {
        ConvGeom::same(self.config.kernel, 1, cin, cout)
    }

    fn lowering(&self) -> Option<Lowering> {
        let (k, f) = (self.config.kernel, self.config.filters);
        match self.config.upsample {
            UpsampleMethod::ResizeConv => Some(Lowering::resize_conv(k, f, f)),
            UpsampleMethod::Subpixel => None,
            UpsampleMethod::SubpixelNn => Some(Lowering::transposed(k, f, f)),
        }
    }

    /// Freshly initialized parameters; sub-pixel-NN blocks start from the
    /// nearest-neighbour enlargement of a random `k`-wide kernel.
    pub fn init<T: Real>(&self, rng: &mut impl Rng) -> NetworkParams<T> {
        let c = &self.config;
        let f = c.filters;
        let mut p = NetworkParams::new();
        add_conv(&mut p, "pre", &self.geom(1, f), true, rng);
        for i in 0..c.res_blocks {
            for j in 1..=2 {
                add_conv(
                    &mut p,
                    &format!("res{i}.conv{j}"),
                    &self.geom(f, f),
                    !c.batch_norm,
                    rng,
                );
                if c.batch_norm {
                    add_bn(&mut p, &format!("res{i}.bn{j}"), f);
                }
            }
        }
        let spec = c.upsample_spec();
        for u in 0..c.upsample_blocks() {
            let name = format!("up{u}");
            match c.upsample {
                UpsampleMethod::ResizeConv => add_conv(&mut p, &name, &self.geom(f, f), true, rng),
                UpsampleMethod::Subpixel => {
                    add_conv(&mut p, &name, &self.geom(f, 8 * f), true, rng)
                }
                UpsampleMethod::SubpixelNn => {
                    let k = c.kernel;
                    let base: Param<T> = Param::uniform(&[f, k, k, k, f], k * k * k * f, rng);
                    let base = TransposedKernel {
                        k,
                        cin: f,
                        cout: f,
                        weight: base.data,
                        bias: vec![T::zero(); f],
                    };
                    let big = subpixel_nn_init(&spec, &base).expect("generator spec is validated");
                    p.insert(
                        format!("{name}.weight"),
                        Param {
                            shape: vec![f, big.k, big.k, big.k, f],
                            data: big.weight,
                            trainable: true,
                        },
                    );
                    p.insert(format!("{name}.bias"), Param::zeros(&[f], true));
                }
            }
        }
        add_conv(&mut p, "out", &self.geom(f, 1), true, rng);
        let s = T::of(c.out_init_scale);
        p.get_mut("out.weight")
            .expect("just added")
            .data
            .iter_mut()
            .for_each(|w| *w = *w * s);
        self.set_output_bias(&mut p, c.out_init_bias.unwrap_or(0.0));
        p
    }

    pub fn set_output_bias<T: Real>(&self, params: &mut NetworkParams<T>, value: f64) {
        if let Ok(b) = params.get_mut("out.bias") {
            b.data.iter_mut().for_each(|v| *v = T::of(value));
        }
    }

    /// Layout check against a freshly built parameter set.
    pub fn check_params<T: Real>(&self, params: &NetworkParams<T>) -> Result<()> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        self.init::<T>(&mut rng).check_layout(params)
    }

    pub fn forward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<GenForward<T>> {
        let c = &self.config;
        if x.shape.c != 1 {
            return Err(Error::Shape(format!(
                "generator expects one channel, got {}",
                x.shape
            )));
        }
        let slope = T::of(c.leaky_slope);
        let f = c.filters;
        let mut stats = Vec::new();

        let (h, pre) = conv_fwd(params, "pre", x, &self.geom(1, f))?;
        let (h0, pre_act) = leaky_fwd(h, slope);
        let mut h = h0.clone();
        let mut res = Vec::with_capacity(c.res_blocks);
        for i in 0..c.res_blocks {
            let (r, c1) = conv_fwd(params, &format!("res{i}.conv1"), &h, &self.geom(f, f))?;
            let (r, bn1) = if c.batch_norm {
                let (r, s) = bn_fwd(params, &format!("res{i}.bn1"), &r, mode, &mut stats)?;
                (r, Some(s))
            } else {
                (r, None)
            };
            let (r, pre_act) = leaky_fwd(r, slope);
            let (r, c2) = conv_fwd(params, &format!("res{i}.conv2"), &r, &self.geom(f, f))?;
            let (r, bn2) = if c.batch_norm {
                let (r, s) = bn_fwd(params, &format!("res{i}.bn2"), &r, mode, &mut stats)?;
                (r, Some(s))
            } else {
                (r, None)
            };
            h.add_assign(&r);
            res.push(ResCache {
                c1,
                bn1,
                pre_act,
                c2,
                bn2,
            });
        }
        if c.res_blocks > 0 {
            h.add_assign(&h0);
        }

        let mut ups = Vec::with_capacity(c.upsample_blocks());
        let lowering = self.lowering();
        for u in 0..c.upsample_blocks() {
            let name = format!("up{u}");
            let (y, cache) = match &lowering {
                None => {
                    let (y, conv) = conv_fwd(params, &name, &h, &self.geom(f, 8 * f))?;
                    (
                        y,
                        UpCache {
                            conv,
                            lowered: None,
                        },
                    )
                }
                Some(l) => {
                    let w = params.data(&format!("{name}.weight"))?;
                    let b = params.data(&format!("{name}.bias"))?;
                    let (ws, bs) = l.weights(w, b);
                    let g = ConvGeom::same(l.kl, 1, f, 8 * f);
                    let (y, conv) = convk::conv3d_forward(&h, &ws, Some(&bs), &g);
                    (
                        y,
                        UpCache {
                            conv,
                            lowered: Some((l.clone(), ws)),
                        },
                    )
                }
            };
            let y = shuffle::shuffle(&y, 2);
            let (y, pre_act) = leaky_fwd(y, slope);
            ups.push((cache, pre_act));
            h = y;
        }

        let (mut y, out) = conv_fwd(params, "out", &h, &self.geom(f, 1))?;
        if mode == Mode::Eval {
            y.data
                .iter_mut()
                .for_each(|v| *v = v.max(T::zero()).min(T::one()));
        }
        Ok(GenForward {
            output: y,
            cache: GenCache {
                pre,
                pre_act,
                res,
                ups,
                out,
            },
            bn_stats: stats,
        })
    }

    /// Gradients of a scalar loss given `d loss / d output` (of the
    /// unclamped output).
    pub fn backward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        cache: &GenCache<T>,
        dy: &Tensor<T>,
    ) -> Result<Grads<T>> {
        let c = &self.config;
        let f = c.filters;
        let slope = T::of(c.leaky_slope);
        let mut grads = params.zero_grads();

        let mut dh = conv_bwd(
            params,
            &mut grads,
            "out",
            &cache.out,
            dy,
            &self.geom(f, 1),
            true,
        )?
        .expect("dx");
        for (u, (up, pre_act)) in cache.ups.iter().enumerate().rev() {
            let name = format!("up{u}");
            let d = leaky_relu_backward(pre_act, &dh, slope);
            let d = shuffle::unshuffle(&d, 2);
            dh = match &up.lowered {
                None => conv_bwd(
                    params,
                    &mut grads,
                    &name,
                    &up.conv,
                    &d,
                    &self.geom(f, 8 * f),
                    true,
                )?
                .expect("dx"),
                Some((l, ws)) => {
                    let g = ConvGeom::same(l.kl, 1, f, 8 * f);
                    let mut dws = vec![T::zero(); ws.len()];
                    let mut dbs = vec![T::zero(); 8 * f];
                    let dx = convk::conv3d_backward(
                        &up.conv,
                        ws,
                        &d,
                        &g,
                        &mut dws,
                        Some(&mut dbs),
                        true,
                    )
                    .expect("dx");
                    let (dw, db) =
                        grads.pair_mut(&format!("{name}.weight"), &format!("{name}.bias"));
                    l.lift_grads(&dws, &dbs, dw, db);
                    dx
                }
            };
        }

        // dh is now the gradient w.r.t. the residual trunk output
        let mut dh0 = if c.res_blocks > 0 {
            dh.clone()
        } else {
            Tensor::zeros(dh.n, dh.shape)
        };
        for (i, rc) in cache.res.iter().enumerate().rev() {
            let mut d = dh.clone();
            if let Some(s) = &rc.bn2 {
                d = bn_bwd(params, &mut grads, &format!("res{i}.bn2"), s, &d)?;
            }
            d = conv_bwd(
                params,
                &mut grads,
                &format!("res{i}.conv2"),
                &rc.c2,
                &d,
                &self.geom(f, f),
                true,
            )?
            .expect("dx");
            d = leaky_relu_backward(&rc.pre_act, &d, slope);
            if let Some(s) = &rc.bn1 {
                d = bn_bwd(params, &mut grads, &format!("res{i}.bn1"), s, &d)?;
            }
            d = conv_bwd(
                params,
                &mut grads,
                &format!("res{i}.conv1"),
                &rc.c1,
                &d,
                &self.geom(f, f),
                true,
            )?
            .expect("dx");
            dh.add_assign(&d);
        }
        dh0.add_assign(&dh);
        let d = leaky_relu_backward(&cache.pre_act, &dh0, slope);
        conv_bwd(
            params,
            &mut grads,
            "pre",
            &cache.pre,
            &d,
            &self.geom(1, f),
            false,
        )?;
        Ok(grads)
    }

    /// Eval-mode super-resolution of a single low-resolution volume.
    pub fn generate<T: Real>(
        &self,
        params: &NetworkParams<T>,
        lr: &Volume<T>,
    ) -> Result<Volume<T>> {
        let out = self.forward(params, &Tensor::from_volume(lr), Mode::Eval)?;
        Ok(out.output.volume(0))
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        input.scaled(self.config.scale).with_channels(1)
    }
}
