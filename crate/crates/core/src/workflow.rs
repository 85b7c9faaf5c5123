//! End-to-end commands over run directories: synthesize a dataset, train,
//! super-resolve, evaluate and merge reports.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, latest_checkpoint, load_checkpoint, save_checkpoint, Archive};
use crate::config::RunConfig;
use crate::data::{generate_phantom, load_volume, save_volume, Manifest, Split};
use crate::degrade::degrade;
use crate::error::{Error, Result};
use crate::interp::cubic_interpolate;
use crate::metrics::{aggregate, EvalReport, Method, VolumeScore};
use crate::networks::{Discriminator, Generator};
use crate::params::NetworkParams;
use crate::patch::PatchGrid;
use crate::pipeline::{evaluate_with, infer_patched, lr_grid_for, make_patch_set};
use crate::trainer::{TrainState, Trainer};
use crate::volume::{normalize, Volume};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSSES_FILE: &str = "losses.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_JSON: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn is_empty_dir(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut rd) => Ok(rd.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(Error::io(dir, e)),
    }
}

/// Creates `dir`; an existing non-empty directory needs `force`, in which
/// case files are overwritten in place.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if !force && !is_empty_dir(dir)? {
        return Err(Error::Config(format!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    checkpoint::write_atomic(path, text.as_bytes())
}

/// Writes `data.n_volumes` phantoms and a seeded 80/20 manifest into `out`.
pub fn synth_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<Manifest> {
    cfg.validate()?;
    let n: usize = cfg.get("data.n_volumes")?;
    prepare_out_dir(out, force)?;
    let mut paths = Vec::with_capacity(n);
    for i in 0..n {
        let phantom = generate_phantom(&cfg.phantom_spec(i as u64)?)?;
        let name = format!("vol_{i:03}.vol");
        save_volume(&phantom.volume, out.join(&name))?;
        paths.push(name);
    }
    let manifest = Manifest::from_paths(paths, cfg.get("data.seed")?);
    write_text(&out.join(MANIFEST_FILE), &manifest.render())?;
    write_text(&out.join(CONFIG_FILE), &cfg.echo())?;
    Ok(manifest)
}

/// Loads and normalizes one volume.
pub fn load_normalized(path: &Path) -> Result<Volume<f32>> {
    normalize(&load_volume(path)?)
}

fn volume_id(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// `(id, volume)` for every manifest entry in `split`, in manifest order.
pub fn load_split(data_dir: &Path, split: Split) -> Result<Vec<(String, Volume<f32>)>> {
    let manifest = Manifest::load(data_dir.join(MANIFEST_FILE))?;
    let out = manifest
        .split(split)
        .map(|e| {
            Ok((
                volume_id(&e.path),
                load_normalized(&data_dir.join(&e.path))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn build_trainer(cfg: &RunConfig) -> Result<Trainer> {
    Trainer::new(
        Generator::new(cfg.generator()?)?,
        Discriminator::new(cfg.discriminator()?)?,
        cfg.train()?,
        cfg.loss()?,
    )
}

/// Keys that may change when a run is resumed.
const RESUMABLE_KEYS: &[&str] = &[
    "train.epochs",
    "train.checkpoint_every",
    "eval.zoom_origin",
    "eval.zoom_size",
];

fn check_resumable(previous: &RunConfig, cfg: &RunConfig) -> Result<()> {
    for (k, _) in crate::config::DEFAULTS {
        if !RESUMABLE_KEYS.contains(k) && previous.raw(k) != cfg.raw(k) {
            return Err(Error::Config(format!(
                "cannot resume: {k} was {} and is now {} (use --force to start over)",
                previous.raw(k),
                cfg.raw(k)
            )));
        }
    }
    Ok(())
}

fn clear_run_dir(run_dir: &Path) -> Result<()> {
    let rd = match fs::read_dir(run_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(run_dir, e)),
    };
    for entry in rd {
        let entry = entry.map_err(io(run_dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        if name.starts_with("ckpt_") && path.is_dir() {
            fs::remove_dir_all(&path).map_err(io(&path))?;
        } else if name == LOSSES_FILE || name == CONFIG_FILE {
            fs::remove_file(&path).map_err(io(&path))?;
        }
    }
    Ok(())
}

/// Trains on the train split of `data_dir`, writing `config.txt`,
/// `losses.csv` and `ckpt_<step>/` directories into `run_dir`.
///
/// If `run_dir` already holds checkpoints from a compatible configuration,
/// training resumes from the latest one. `force` discards earlier results
/// instead.
pub fn train_run(
    cfg: &RunConfig,
    data_dir: &Path,
    run_dir: &Path,
    force: bool,
) -> Result<TrainState> {
    cfg.validate()?;
    let trainer = build_trainer(cfg)?;
    let volumes: Vec<Volume<f32>> = load_split(data_dir, Split::Train)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let deg = cfg.degradation()?;
    let patch: usize = cfg.get("patch.size")?;
    let step: usize = cfg.get("patch.step")?;
    let grid = PatchGrid::new(volumes[0].shape().spatial(), [patch; 3], [step; 3])?;
    let set = make_patch_set(&volumes, &grid, &deg)?;

    let mut state = None;
    if force {
        clear_run_dir(run_dir)?;
    } else if let Some(ckpt) = latest_checkpoint(run_dir)? {
        let previous =
            RunConfig::parse(&fs::read_to_string(run_dir.join(CONFIG_FILE)).map_err(io(run_dir))?)?;
        check_resumable(&previous, cfg)?;
        log::info!("resuming from {}", ckpt.display());
        state = Some(load_checkpoint(&ckpt, &trainer)?);
    } else if !is_empty_dir(run_dir)? {
        return Err(Error::Config(format!(
            "run directory {} is not empty (use --force to overwrite)",
            run_dir.display()
        )));
    }
    fs::create_dir_all(run_dir).map_err(io(run_dir))?;
    let echo = cfg.echo();
    write_text(&run_dir.join(CONFIG_FILE), &echo)?;

    let mut state = state.unwrap_or_else(|| trainer.init_state_for(&set));
    let seed = trainer.train.seed;
    let spe = trainer.steps_per_epoch(set.len());
    let every = trainer.train.checkpoint_every;
    trainer.train(&mut state, &set, |s| {
        if every > 0 && s.step % every == 0 {
            save_checkpoint(run_dir, s, &echo, seed, spe)?;
            write_text(
                &run_dir.join(LOSSES_FILE),
                &checkpoint::losses_csv(&s.history),
            )?;
        }
        Ok(())
    })?;
    if !checkpoint::checkpoint_dir(run_dir, state.step).exists()
        || every == 0
        || state.step % every != 0
    {
        save_checkpoint(run_dir, &state, &echo, seed, spe)?;
    }
    write_text(
        &run_dir.join(LOSSES_FILE),
        &checkpoint::losses_csv(&state.history),
    )?;
    Ok(state)
}

/// A generator restored from a checkpoint, with its effective configuration.
pub struct Model {
    pub config: RunConfig,
    pub generator: Generator,
    pub params: NetworkParams<f32>,
}

impl Model {
    /// Accepts a `ckpt_<step>/` directory or a generator archive.
    /// `adjust` may tweak the checkpoint's configuration (evaluation and
    /// patch keys); changes to the model's own keys are rejected.
    pub fn load(path: &Path, adjust: impl FnOnce(&mut RunConfig) -> Result<()>) -> Result<Model> {
        let file: PathBuf = if path.is_dir() {
            path.join(checkpoint::GENERATOR_FILE)
        } else {
            path.to_path_buf()
        };
        let archive = Archive::load(&file)?;
        let saved = RunConfig::parse(&archive.config)?;
        let mut config = saved.clone();
        adjust(&mut config)?;
        config.validate()?;
        saved.check_same_model(&config)?;
        let generator = Generator::new(config.generator()?)?;
        let mut params = generator.init::<f32>(&mut rand::rngs::mock::StepRng::new(0, 1));
        archive.restore(&mut params)?;
        Ok(Model {
            config,
            generator,
            params,
        })
    }

    /// Patch-based super-resolution of a whole LR volume.
    pub fn super_resolve(&self, lr: &Volume<f32>) -> Result<Volume<f32>> {
        let r = self.generator.config.scale;
        let patch: usize = self.config.get("patch.size")?;
        let step: usize = self.config.get("patch.step")?;
        let grid = lr_grid_for(lr.shape().spatial(), patch / r, step / r)?;
        infer_patched(&self.generator, &self.params, lr, &grid)
    }
}

/// Degraded copies of `inputs`, written as `<stem>_lr.vol` into `out`.
pub fn degrade_run(
    cfg: &RunConfig,
    inputs: &[PathBuf],
    out: &Path,
    force: bool,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let deg = cfg.degradation()?;
    prepare_out_dir(out, force)?;
    write_text(&out.join(CONFIG_FILE), &cfg.echo())?;
    inputs
        .iter()
        .map(|p| {
            let v = degrade(&load_normalized(p)?, &deg)?;
            let dst = out.join(format!("{}_lr.vol", volume_id(&p.to_string_lossy())));
            save_volume(&v, &dst)?;
            Ok(dst)
        })
        .collect()
}

/// Super-resolved copies of LR `inputs`, written as `<stem>_sr.vol`.
pub fn infer_run(
    model: &Model,
    inputs: &[PathBuf],
    out: &Path,
    force: bool,
) -> Result<Vec<PathBuf>> {
    prepare_out_dir(out, force)?;
    write_text(&out.join(CONFIG_FILE), &model.config.echo())?;
    inputs
        .iter()
        .map(|p| {
            let sr = model.super_resolve(&load_normalized(p)?)?;
            let dst = out.join(format!("{}_sr.vol", volume_id(&p.to_string_lossy())));
            save_volume(&sr, &dst)?;
            Ok(dst)
        })
        .collect()
}

/// One evaluated test volume with its reconstructions.
pub struct Evaluated {
    pub id: String,
    pub hr: Volume<f32>,
    pub cubic: Volume<f32>,
    pub sr: Volume<f32>,
}

/// Scores the cubic baseline and `model` on the test split of `data_dir`.
pub fn evaluate(model: &Model, data_dir: &Path) -> Result<(EvalReport, Vec<Evaluated>)> {
    let test = load_split(data_dir, Split::Test)?;
    let deg = model.config.degradation()?;
    let (mut scores, cubic) = evaluate_with(&test, &deg, Method::Cubic, |lr| {
        cubic_interpolate(lr, deg.factor)
    })?;
    let method = Method::from(model.generator.config.upsample);
    let (model_scores, sr) = evaluate_with(&test, &deg, method, |lr| model.super_resolve(lr))?;
    scores.extend(model_scores);
    let report = aggregate(scores)?;
    let vols = test
        .into_iter()
        .zip(cubic)
        .zip(sr)
        .map(|(((id, hr), cubic), sr)| Evaluated { id, hr, cubic, sr })
        .collect();
    Ok((report, vols))
}

/// Writes `scores.csv`, `summary.csv`, `report.json` and `table.txt`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut buf = Vec::new();
    report.write_scores_csv(&mut buf)?;
    checkpoint::write_atomic(&dir.join(SCORES_FILE), &buf)?;
    let mut buf = Vec::new();
    report.write_summary_csv(&mut buf)?;
    checkpoint::write_atomic(&dir.join(SUMMARY_FILE), &buf)?;
    write_text(&dir.join(REPORT_JSON), &report.to_json())?;
    write_text(&dir.join(TABLE_FILE), &report.render_table())
}

pub fn read_scores(path: &Path) -> Result<EvalReport> {
    let f = fs::File::open(path).map_err(io(path))?;
    EvalReport::read_scores_csv(f).map_err(|e| match e {
        Error::Malformed { reason, .. } => Error::Malformed {
            path: path.into(),
            reason,
        },
        e => e,
    })
}

/// Union of several score files. Rows for the same volume, method and
/// factor must agree exactly (the cubic baseline appears in every run).
pub fn merge_reports(paths: &[PathBuf]) -> Result<EvalReport> {
    let mut rows: Vec<VolumeScore> = Vec::new();
    for p in paths {
        for s in read_scores(p)?.per_volume {
            match rows.iter().find(|r| {
                r.volume_id == s.volume_id && r.method == s.method && r.factor == s.factor
            }) {
                Some(r)
                    if r.psnr.to_bits() == s.psnr.to_bits()
                        && r.ssim.to_bits() == s.ssim.to_bits() => {}
                Some(_) => {
                    return Err(Error::Malformed {
                        path: p.clone(),
                        reason: format!("conflicting {} scores for {}", s.method, s.volume_id),
                    })
                }
                None => rows.push(s),
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    rows.sort_by(|a, b| {
        (a.factor, a.method, &a.volume_id).cmp(&(b.factor, b.method, &b.volume_id))
    });
    aggregate(rows)
}
