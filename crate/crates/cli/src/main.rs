//! `srgan3d`: synthesize phantoms, degrade, train, super-resolve, evaluate
//! and tabulate results.

mod figures;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srgan3d::config::RunConfig;
use srgan3d::workflow::{self, Model};
use srgan3d::Error;

#[derive(Parser)]
#[command(
    name = "srgan3d",
    version,
    about = "3D adversarial super-resolution of volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; every artifact of the command lands here.
    #[arg(long)]
    out: PathBuf,
    /// Sets both `data.seed` and `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantoms and an 80/20 manifest.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Blur and decimate volumes.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train a generator/discriminator pair on a dataset's train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `synth-data`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Super-resolve low-resolution volumes with a trained generator.
    Infer {
        #[command(flatten)]
        common: Common,
        /// `ckpt_<step>/` directory or generator archive.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score the cubic baseline and a trained generator on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Merge per-volume score files into one report.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        scores: Vec<PathBuf>,
    },
}

impl Common {
    /// Applies the config file, `--set` overrides and `--seed` to `cfg`.
    fn apply(&self, cfg: &mut RunConfig) -> srgan3d::Result<()> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.merge_text(&text)?;
        }
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("data.seed", &seed.to_string())?;
            cfg.set("train.seed", &seed.to_string())?;
        }
        cfg.validate()
    }

    fn config(&self) -> srgan3d::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn model(&self, checkpoint: &Path) -> srgan3d::Result<Model> {
        Model::load(checkpoint, |cfg| self.apply(cfg))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFiniteLoss { .. } => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> srgan3d::Result<()> {
    match cli.command {
        Command::SynthData { common } => {
            let cfg = common.config()?;
            let m = workflow::synth_data(&cfg, &common.out, common.force)?;
            println!(
                "wrote {} volumes to {}",
                m.entries.len(),
                common.out.display()
            );
        }
        Command::Degrade { common, inputs } => {
            let cfg = common.config()?;
            for p in workflow::degrade_run(&cfg, &inputs, &common.out, common.force)? {
                println!("{}", p.display());
            }
        }
        Command::Train { common, data } => {
            let cfg = common.config()?;
            let state = workflow::train_run(&cfg, &data, &common.out, common.force)?;
            match state.history.last() {
                Some(r) => println!(
                    "trained {} steps: d_loss {:.6} g_total {:.6} (mse {:.6})",
                    state.step, r.d_loss, r.g_total, r.g_mse
                ),
                None => println!("no training steps; wrote initial checkpoint"),
            }
        }
        Command::Infer {
            common,
            checkpoint,
            inputs,
        } => {
            let model = common.model(&checkpoint)?;
            for p in workflow::infer_run(&model, &inputs, &common.out, common.force)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
        } => {
            let model = common.model(&checkpoint)?;
            workflow::prepare_out_dir(&common.out, common.force)?;
            let (report, vols) = workflow::evaluate(&model, &data)?;
            workflow::write_report(&report, &common.out)?;
            std::fs::write(common.out.join(workflow::CONFIG_FILE), model.config.echo()).map_err(
                |e| Error::Io {
                    path: common.out.clone(),
                    source: e,
                },
            )?;
            let zoom = model.config.zoom()?;
            figures::write_all(&vols, zoom, &common.out.join("figures"))?;
            print!("{}", report.render_table());
        }
        Command::Report { common, scores } => {
            let cfg = common.config()?;
            workflow::prepare_out_dir(&common.out, common.force)?;
            let report = workflow::merge_reports(&scores)?;
            workflow::write_report(&report, &common.out)?;
            std::fs::write(common.out.join(workflow::CONFIG_FILE), cfg.echo()).map_err(|e| {
                Error::Io {
                    path: common.out.clone(),
                    source: e,
                }
            })?;
            print!("{}", report.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
