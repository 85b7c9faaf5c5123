//! Flat `key = value` run configuration covering every pipeline knob.

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::adam::AdamConfig;
use crate::data::PhantomSpec;
use crate::degrade::DegradationConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::patch::PatchGrid;
use crate::trainer::TrainConfig;
use crate::upsampling::UpsampleMethod;

/// Every recognised key with its default, in echo order.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("data.n_volumes", "64"),
    ("data.size", "32"),
    ("data.seed", "0"),
    ("data.ellipsoids_min", "6"),
    ("data.ellipsoids_max", "12"),
    ("data.noise_sigma", "0"),
    ("degrade.factor", "2"),
    ("degrade.blur_sigma", "auto"),
    ("degrade.kernel_radius", "auto"),
    ("patch.size", "16"),
    ("patch.step", "12"),
    ("upsample.method", "subpixel_nn"),
    ("generator.res_blocks", "2"),
    ("generator.filters", "24"),
    ("generator.kernel", "3"),
    ("generator.leaky_slope", "0.2"),
    ("generator.batch_norm", "true"),
    ("generator.out_init_scale", "0"),
    ("generator.out_init_bias", "auto"),
    ("discriminator.base_filters", "8"),
    ("discriminator.dense_hidden", "64"),
    ("discriminator.leaky_slope", "0.2"),
    ("loss.alpha", "0.001"),
    ("loss.real_label", "0.9"),
    ("loss.gdl_weight", "1"),
    ("train.lr_g", "0.00001"),
    ("train.lr_d", "0.0001"),
    ("train.batch_patches", "2"),
    ("train.epochs", "20"),
    ("train.seed", "0"),
    ("train.d_updates_per_g", "1"),
    ("train.checkpoint_every", "0"),
    ("train.adam_beta1", "0.9"),
    ("train.adam_beta2", "0.999"),
    ("train.adam_eps", "0.00000001"),
    ("eval.zoom_origin", "8,8"),
    ("eval.zoom_size", "16"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: IndexMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Keys not in
    /// [`DEFAULTS`] are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the `key = value` lines of `text` on top of the current values
    /// without validating the result.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Keys whose values fix the generator's parameter layout or output.
    pub const MODEL_KEYS: &'static [&'static str] = &[
        "degrade.factor",
        "upsample.method",
        "generator.res_blocks",
        "generator.filters",
        "generator.kernel",
        "generator.leaky_slope",
        "generator.batch_norm",
    ];

    /// Fails if `self` and `other` disagree on any of [`Self::MODEL_KEYS`].
    pub fn check_same_model(&self, other: &RunConfig) -> Result<()> {
        for k in Self::MODEL_KEYS {
            if self.raw(k) != other.raw(k) {
                return Err(Error::Config(format!(
                    "{k} = {} does not match the checkpoint's {}",
                    other.raw(k),
                    self.raw(k)
                )));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unknown key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// The effective configuration, one `key = value` line per known key.
    pub fn echo(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Builds every typed section, surfacing the first invalid value.
    pub fn validate(&self) -> Result<()> {
        self.phantom_spec(0)?.validate()?;
        let n: usize = self.get("data.n_volumes")?;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        self.degradation()?;
        self.patch_grid()?;
        self.generator()?;
        self.discriminator()?;
        self.loss()?.validate()?;
        self.train()?.validate()?;
        self.zoom()?;
        Ok(())
    }

    pub fn phantom_spec(&self, index: u64) -> Result<PhantomSpec> {
        let n: usize = self.get("data.size")?;
        let seed: u64 = self.get("data.seed")?;
        let mut spec = PhantomSpec::desk(n, seed.wrapping_mul(1_000_003).wrapping_add(index));
        spec.n_ellipsoids = (
            self.get("data.ellipsoids_min")?,
            self.get("data.ellipsoids_max")?,
        );
        spec.noise_sigma = self.get("data.noise_sigma")?;
        Ok(spec)
    }

    pub fn degradation(&self) -> Result<DegradationConfig> {
        let mut d = DegradationConfig::for_factor(self.get("degrade.factor")?);
        if let Some(s) = self.optional("degrade.blur_sigma")? {
            d.blur_sigma = s;
            d.kernel_radius = (3.0 * s).ceil() as usize;
        }
        if let Some(r) = self.optional("degrade.kernel_radius")? {
            d.kernel_radius = r;
        }
        d.validate()?;
        Ok(d)
    }

    /// HR patch grid over a `data.size` cube.
    pub fn patch_grid(&self) -> Result<PatchGrid> {
        let grid = PatchGrid::cubic(
            self.get("data.size")?,
            self.get("patch.size")?,
            self.get("patch.step")?,
        )?;
        crate::pipeline::lr_grid(&grid, self.get("degrade.factor")?)?;
        Ok(grid)
    }

    pub fn upsample_method(&self) -> Result<UpsampleMethod> {
        self.get("upsample.method")
    }

    pub fn generator(&self) -> Result<GeneratorConfig> {
        let g = GeneratorConfig {
            res_blocks: self.get("generator.res_blocks")?,
            filters: self.get("generator.filters")?,
            kernel: self.get("generator.kernel")?,
            scale: self.get("degrade.factor")?,
            upsample: self.upsample_method()?,
            leaky_slope: self.get("generator.leaky_slope")?,
            batch_norm: self.get("generator.batch_norm")?,
            out_init_scale: self.get("generator.out_init_scale")?,
            out_init_bias: self.optional("generator.out_init_bias")?,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<DiscriminatorConfig> {
        let p: usize = self.get("patch.size")?;
        let mut d = DiscriminatorConfig::with_base(
            self.get("discriminator.base_filters")?,
            self.get("discriminator.dense_hidden")?,
            [p; 3],
        );
        d.leaky_slope = self.get("discriminator.leaky_slope")?;
        d.validate()?;
        Ok(d)
    }

    pub fn loss(&self) -> Result<LossConfig> {
        Ok(LossConfig {
            alpha: self.get("loss.alpha")?,
            real_label: self.get("loss.real_label")?,
            fake_label: 0.0,
            gdl_weight: self.get("loss.gdl_weight")?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lr_g: self.get("train.lr_g")?,
            lr_d: self.get("train.lr_d")?,
            batch_patches: self.get("train.batch_patches")?,
            adam: AdamConfig {
                beta1: self.get("train.adam_beta1")?,
                beta2: self.get("train.adam_beta2")?,
                eps: self.get("train.adam_eps")?,
            },
            epochs: self.get("train.epochs")?,
            seed: self.get("train.seed")?,
            d_updates_per_g: self.get("train.d_updates_per_g")?,
            checkpoint_every: self.get("train.checkpoint_every")?,
        })
    }

    /// Zoom box for slice figures: `(y, x)` origin on the axial slice and side.
    pub fn zoom(&self) -> Result<([usize; 2], usize)> {
        let o = self.raw("eval.zoom_origin");
        let parts: Vec<&str> = o.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("eval.zoom_origin: expected y,x, got {o:?}"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let y = parts[0].parse().map_err(|_| bad())?;
        let x = parts[1].parse().map_err(|_| bad())?;
        let size: usize = self.get("eval.zoom_size")?;
        let n: usize = self.get("data.size")?;
        if size == 0 || y + size > n || x + size > n {
            return Err(Error::Config(format!(
                "zoom box ({y},{x})+{size} leaves a {n}-voxel slice"
            )));
        }
        Ok(([y, x], size))
    }
}
