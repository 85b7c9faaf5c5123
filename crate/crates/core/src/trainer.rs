//! Adversarial training: alternating discriminator and generator Adam
//! updates over shuffled batches of patches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::networks::{Discriminator, Generator, Mode};
use crate::nn::Tensor;
use crate::params::{Grads, NetworkParams};
use crate::real::Real;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub batch_patches: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub d_updates_per_g: usize,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_g: 1e-5,
            lr_d: 1e-4,
            batch_patches: 2,
            adam: AdamConfig::default(),
            epochs: 20,
            seed: 0,
            d_updates_per_g: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("train.lr_g", self.lr_g), ("train.lr_d", self.lr_d)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {lr}")));
            }
        }
        if self.batch_patches == 0 {
            return Err(Error::Config("train.batch_patches must be >= 1".into()));
        }
        if self.d_updates_per_g == 0 {
            return Err(Error::Config("train.d_updates_per_g must be >= 1".into()));
        }
        self.adam.validate()
    }
}

/// Losses recorded for one training step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_mse: f64,
    pub g_gdl: f64,
    pub g_total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,d_loss,g_adv,g_mse,g_gdl,g_total";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.d_loss, self.g_adv, self.g_mse, self.g_gdl, self.g_total
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<LossRecord> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        Some(LossRecord {
            step: f[0].parse().ok()?,
            d_loss: num(1)?,
            g_adv: num(2)?,
            g_mse: num(3)?,
            g_gdl: num(4)?,
            g_total: num(5)?,
        })
    }

    fn all_finite(&self) -> bool {
        [
            self.d_loss,
            self.g_adv,
            self.g_mse,
            self.g_gdl,
            self.g_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T = f32> {
    /// Completed steps.
    pub step: u64,
    pub generator: NetworkParams<T>,
    pub discriminator: NetworkParams<T>,
    pub adam_g: Adam<T>,
    pub adam_d: Adam<T>,
    pub history: Vec<LossRecord>,
}

/// Paired high- and low-resolution training patches.
#[derive(Debug, Clone)]
pub struct PatchSet<T = f32> {
    pub hr: Vec<Volume<T>>,
    pub lr: Vec<Volume<T>>,
}

impl<T: Real> PatchSet<T> {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let hr: Vec<Volume<T>> = idx.iter().map(|&i| self.hr[i].clone()).collect();
        let lr: Vec<Volume<T>> = idx.iter().map(|&i| self.lr[i].clone()).collect();
        Ok((Tensor::from_volumes(&hr)?, Tensor::from_volumes(&lr)?))
    }
}

/// Generator loss terms and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct GeneratorObjective<T> {
    pub g_adv: f64,
    pub g_mse: f64,
    pub g_gdl: f64,
    pub g_total: f64,
    pub grads: Grads<T>,
}

/// Discriminator loss and its parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct DiscriminatorObjective<T> {
    pub d_loss: f64,
    pub grads: Grads<T>,
    /// Batch-norm statistics from the training-mode forward pass.
    pub bn_stats: Vec<(String, crate::nn::norm::BnStats<T>)>,
}

pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub train: TrainConfig,
    pub loss: LossConfig,
}

impl Trainer {
    pub fn new(
        generator: Generator,
        discriminator: Discriminator,
        train: TrainConfig,
        loss: LossConfig,
    ) -> Result<Self> {
        train.validate()?;
        loss.validate()?;
        Ok(Trainer {
            generator,
            discriminator,
            train,
            loss,
        })
    }

    pub fn init_state<T: Real>(&self) -> TrainState<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        let generator = self.generator.init(&mut rng);
        let discriminator = self.discriminator.init(&mut rng);
        TrainState {
            step: 0,
            adam_g: Adam::new(&generator),
            adam_d: Adam::new(&discriminator),
            generator,
            discriminator,
            history: Vec::new(),
        }
    }

    /// [`Self::init_state`], with an unset output bias started at the mean
    /// high-resolution intensity of `data`.
    pub fn init_state_for<T: Real>(&self, data: &PatchSet<T>) -> TrainState<T> {
        let mut state = self.init_state();
        if self.generator.config.out_init_bias.is_none() {
            let (sum, count) = data.hr.iter().fold((0.0, 0usize), |(s, n), v| {
                (
                    s + v.data().iter().map(|x| x.f64()).sum::<f64>(),
                    n + v.data().len(),
                )
            });
            let mean = if count == 0 { 0.0 } else { sum / count as f64 };
            self.generator.set_output_bias(&mut state.generator, mean);
        }
        state
    }

    /// `d_loss` on real `hr` against a detached fake batch `sr`.
    ///
    /// Both halves go through the discriminator as one batch so training-mode
    /// batch norm sees real and fake samples together.
    pub fn discriminator_objective<T: Real>(
        &self,
        disc: &NetworkParams<T>,
        hr: &Tensor<T>,
        sr: &Tensor<T>,
    ) -> Result<DiscriminatorObjective<T>> {
        let n = hr.n;
        let both = Tensor::concat(hr, sr);
        let fwd = self.discriminator.forward(disc, &both, Mode::Train)?;
        let nb = n as f64;
        let mut d_loss = 0.0;
        let mut dprob = Vec::with_capacity(2 * n);
        for i in 0..n {
            let (pr, pf) = (fwd.probs[i].f64(), fwd.probs[n + i].f64());
            d_loss += losses::d_loss(pr, pf, &self.loss) / nb;
        }
        for (i, p) in fwd.probs.iter().enumerate() {
            let target = if i < n {
                self.loss.real_label
            } else {
                self.loss.fake_label
            };
            dprob.push(T::of((p.f64() - target) / nb));
        }
        let (grads, _) = self.discriminator.backward(disc, &fwd, &dprob, false)?;
        Ok(DiscriminatorObjective {
            d_loss,
            grads,
            bn_stats: fwd.bn_stats,
        })
    }

    /// Generator objective for a training-mode output `sr` with cache,
    /// scored by the discriminator in eval mode.
    fn generator_objective_from<T: Real>(
        &self,
        gen: &NetworkParams<T>,
        disc: &NetworkParams<T>,
        fwd: &crate::networks::GenForward<T>,
        hr: &Tensor<T>,
    ) -> Result<GeneratorObjective<T>> {
        let sr = &fwd.output;
        let n = sr.n as f64;
        let content = losses::content_loss(hr, sr, self.loss.gdl_weight)?;
        let mut dsr = content.grad;
        let mut g_adv = 0.0;
        if self.loss.alpha != 0.0 {
            let dfwd = self.discriminator.forward(disc, sr, Mode::Eval)?;
            let dprob: Vec<T> = dfwd
                .probs
                .iter()
                .map(|p| {
                    g_adv += losses::g_adv_loss(p.f64()) / n;
                    T::of(self.loss.alpha * (p.f64() - 1.0) / n)
                })
                .collect();
            let (_, dx) = self.discriminator.backward(disc, &dfwd, &dprob, true)?;
            dsr.add_assign(&dx.expect("input gradient requested"));
        }
        let grads = self.generator.backward(gen, &fwd.cache, &dsr)?;
        let g_total = self.loss.alpha * g_adv + content.mse + self.loss.gdl_weight * content.gdl;
        Ok(GeneratorObjective {
            g_adv,
            g_mse: content.mse,
            g_gdl: content.gdl,
            g_total,
            grads,
        })
    }

    /// `g_total` and its gradient with respect to every trainable generator
    /// parameter; the discriminator is held fixed.
    pub fn generator_objective<T: Real>(
        &self,
        gen: &NetworkParams<T>,
        disc: &NetworkParams<T>,
        lr: &Tensor<T>,
        hr: &Tensor<T>,
    ) -> Result<GeneratorObjective<T>> {
        let fwd = self.generator.forward(gen, lr, Mode::Train)?;
        self.generator_objective_from(gen, disc, &fwd, hr)
    }

    /// One discriminator phase then one generator update.
    pub fn train_step<T: Real>(
        &self,
        state: &mut TrainState<T>,
        hr: &Tensor<T>,
        lr: &Tensor<T>,
    ) -> Result<LossRecord> {
        let step = state.step + 1;
        let gfwd = self.generator.forward(&state.generator, lr, Mode::Train)?;
        let mut d_loss = 0.0;
        for _ in 0..self.train.d_updates_per_g {
            let d = self.discriminator_objective(&state.discriminator, hr, &gfwd.output)?;
            d_loss = d.d_loss;
            check_finite(step, "d_loss", d_loss, &d.grads)?;
            state.adam_d.step(
                &mut state.discriminator,
                &d.grads,
                self.train.lr_d,
                &self.train.adam,
            )?;
            for (prefix, s) in &d.bn_stats {
                state.discriminator.update_running_stats(prefix, s)?;
            }
        }
        let g = self.generator_objective_from(&state.generator, &state.discriminator, &gfwd, hr)?;
        let record = LossRecord {
            step,
            d_loss,
            g_adv: g.g_adv,
            g_mse: g.g_mse,
            g_gdl: g.g_gdl,
            g_total: g.g_total,
        };
        if !record.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                snapshot: record.csv_line(),
            });
        }
        check_finite(step, "g_total", g.g_total, &g.grads)?;
        state.adam_g.step(
            &mut state.generator,
            &g.grads,
            self.train.lr_g,
            &self.train.adam,
        )?;
        for (prefix, s) in &gfwd.bn_stats {
            state.generator.update_running_stats(prefix, s)?;
        }
        state.step = step;
        state.history.push(record);
        Ok(record)
    }

    pub fn steps_per_epoch(&self, patches: usize) -> usize {
        patches / self.train.batch_patches
    }

    pub fn total_steps(&self, patches: usize) -> u64 {
        (self.steps_per_epoch(patches) * self.train.epochs) as u64
    }

    /// Patch indices of step `step` (1-based). Each epoch is a fresh
    /// permutation drawn from its own stream of the run seed, so any step can
    /// be located without replaying earlier ones.
    pub fn batch_indices(&self, patches: usize, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch(patches) as u64;
        let epoch = (step - 1) / spe;
        let pos = ((step - 1) % spe) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        rng.set_stream(epoch + 1);
        let mut perm: Vec<usize> = (0..patches).collect();
        perm.shuffle(&mut rng);
        let b = self.train.batch_patches;
        perm[pos * b..(pos + 1) * b].to_vec()
    }

    /// Runs from `state.step` to the end of the configured epochs. `on_step`
    /// sees the state after every step and can write checkpoints.
    pub fn train<T: Real>(
        &self,
        state: &mut TrainState<T>,
        data: &PatchSet<T>,
        mut on_step: impl FnMut(&TrainState<T>) -> Result<()>,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.len() < self.train.batch_patches {
            return Err(Error::Config(format!(
                "{} patches cannot fill a batch of {}",
                data.len(),
                self.train.batch_patches
            )));
        }
        let total = self.total_steps(data.len());
        while state.step < total {
            let idx = self.batch_indices(data.len(), state.step + 1);
            let (hr, lr) = data.batch(&idx)?;
            let rec = self.train_step(state, &hr, &lr)?;
            if rec.step % 100 == 0 {
                log::info!(
                    "step {}/{total}: d {:.5} mse {:.6} gdl {:.6} adv {:.5}",
                    rec.step,
                    rec.d_loss,
                    rec.g_mse,
                    rec.g_gdl,
                    rec.g_adv
                );
            }
            on_step(state)?;
        }
        Ok(())
    }
}

fn check_finite<T: Real>(step: u64, what: &str, loss: f64, grads: &Grads<T>) -> Result<()> {
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            snapshot: format!("{what} = {loss}, gradient norm {}", grads.l2_norm()),
        });
    }
    Ok(())
}
