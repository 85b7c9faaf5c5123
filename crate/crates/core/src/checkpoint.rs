//! Parameter archives and `ckpt_<step>/` training checkpoints.
//!
//! An archive is: magic `SRCK`, u32 version, u32 length + UTF-8 config
//! echo, u32 entry count, then per entry a u32 length + UTF-8 name, u32 rank,
//! rank u32 dimensions and the little-endian f32 payload. All integers are
//! little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::params::NetworkParams;
use crate::trainer::{LossRecord, TrainState, Trainer};

pub const MAGIC: &[u8; 4] = b"SRCK";
pub const VERSION: u32 = 1;

pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const DISCRIMINATOR_FILE: &str = "discriminator.ckpt";
pub const OPTIMIZER_FILE: &str = "optimizer.ckpt";
pub const CONFIG_FILE: &str = "config.txt";
pub const RNG_FILE: &str = "rng.txt";
pub const LOSSES_FILE: &str = "losses.csv";

/// Named arrays plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub config: String,
    pub entries: IndexMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Archive {
    pub fn from_params(params: &NetworkParams<f32>, config: &str) -> Self {
        Archive {
            config: config.to_string(),
            entries: params
                .iter()
                .map(|(n, p)| (n.clone(), (p.shape.clone(), p.data.clone())))
                .collect(),
        }
    }

    /// Copies every entry into `params`, which must have exactly the same
    /// names and shapes.
    pub fn restore(&self, params: &mut NetworkParams<f32>) -> Result<()> {
        if params.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "archive holds {} arrays, network has {}",
                self.entries.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter_mut() {
            let (shape, data) = self
                .entries
                .get(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if *shape != p.shape {
                return Err(Error::Shape(format!(
                    "{name}: archive shape {shape:?}, network {:?}",
                    p.shape
                )));
            }
            p.data.copy_from_slice(data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let u32le = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
        b.extend_from_slice(MAGIC);
        u32le(&mut b, VERSION as usize);
        u32le(&mut b, self.config.len());
        b.extend_from_slice(self.config.as_bytes());
        u32le(&mut b, self.entries.len());
        for (name, (shape, data)) in &self.entries {
            u32le(&mut b, name.len());
            b.extend_from_slice(name.as_bytes());
            u32le(&mut b, shape.len());
            for &d in shape {
                u32le(&mut b, d);
            }
            for v in data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(r.malformed(format!("unsupported archive version {version}")));
        }
        let n = r.u32()?;
        let config = r.string(n)?;
        let count = r.u32()?;
        let mut entries = IndexMap::new();
        for _ in 0..count {
            let n = r.u32()?;
            let name = r.string(n)?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| r.malformed(format!("{name}: shape overflows")))?;
            let payload = r.take(
                len.checked_mul(4)
                    .ok_or_else(|| r.malformed("payload overflows".into()))?,
            )?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if entries.insert(name.clone(), (shape, data)).is_some() {
                return Err(r.malformed(format!("duplicate entry {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Archive { config, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Archive::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn malformed(&self, reason: String) -> Error {
        Error::Malformed {
            path: self.path.into(),
            reason,
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::TruncatedPayload {
            path: self.path.into(),
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let b = self.take(n)?.to_vec();
        String::from_utf8(b).map_err(|_| self.malformed("name is not UTF-8".into()))
    }
}

/// Writes `bytes` to a temporary sibling, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let tmp = temp_sibling(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn checkpoint_dir(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("ckpt_{step}"))
}

fn moments_archive(state: &TrainState<f32>, config: &str) -> Archive {
    let mut a = Archive {
        config: config.to_string(),
        entries: IndexMap::new(),
    };
    for (net, adam) in [("g", &state.adam_g), ("d", &state.adam_d)] {
        for (kind, map) in [("m", &adam.m), ("v", &adam.v)] {
            for (name, v) in map {
                a.entries
                    .insert(format!("{net}.{kind}/{name}"), (vec![v.len()], v.clone()));
            }
        }
    }
    a
}

fn restore_moments(a: &Archive, net: &str, adam: &mut Adam<f32>) -> Result<()> {
    for (kind, map) in [("m", &mut adam.m), ("v", &mut adam.v)] {
        for (name, v) in map.iter_mut() {
            let key = format!("{net}.{kind}/{name}");
            let (_, data) = a
                .entries
                .get(&key)
                .ok_or_else(|| Error::MissingParam(key.clone()))?;
            if data.len() != v.len() {
                return Err(Error::Shape(format!(
                    "{key}: {} values, expected {}",
                    data.len(),
                    v.len()
                )));
            }
            v.copy_from_slice(data);
        }
    }
    Ok(())
}

fn rng_text(state: &TrainState<f32>, seed: u64, steps_per_epoch: usize) -> String {
    let spe = steps_per_epoch.max(1) as u64;
    format!(
        "generator=chacha8\nseed={seed}\nstep={}\nepoch={}\nbatch_in_epoch={}\nadam_g_t={}\nadam_d_t={}\n",
        state.step,
        state.step / spe,
        state.step % spe,
        state.adam_g.t,
        state.adam_d.t
    )
}

fn parse_kv(text: &str, path: &Path) -> Result<IndexMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Malformed {
                    path: path.into(),
                    reason: format!("bad line {l:?}"),
                })
        })
        .collect()
}

/// Writes `ckpt_<step>/` under `run_dir`. The directory is assembled under a
/// temporary name and renamed into place, so a crash never leaves a partial
/// checkpoint behind.
pub fn save_checkpoint(
    run_dir: &Path,
    state: &TrainState<f32>,
    config: &str,
    seed: u64,
    steps_per_epoch: usize,
) -> Result<PathBuf> {
    let dir = checkpoint_dir(run_dir, state.step);
    let tmp = temp_sibling(&dir);
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p, e)
    };
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io(&tmp))?;
    Archive::from_params(&state.generator, config).save(tmp.join(GENERATOR_FILE))?;
    Archive::from_params(&state.discriminator, config).save(tmp.join(DISCRIMINATOR_FILE))?;
    moments_archive(state, config).save(tmp.join(OPTIMIZER_FILE))?;
    write_atomic(&tmp.join(CONFIG_FILE), config.as_bytes())?;
    write_atomic(
        &tmp.join(RNG_FILE),
        rng_text(state, seed, steps_per_epoch).as_bytes(),
    )?;
    write_atomic(
        &tmp.join(LOSSES_FILE),
        losses_csv(&state.history).as_bytes(),
    )?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io(&dir))?;
    }
    fs::rename(&tmp, &dir).map_err(io(&dir))?;
    Ok(dir)
}

/// Rebuilds a training state from `ckpt_<step>/`, validating every array
/// against the layout `trainer` would initialize.
pub fn load_checkpoint(dir: &Path, trainer: &Trainer) -> Result<TrainState<f32>> {
    let mut state = trainer.init_state::<f32>();
    Archive::load(dir.join(GENERATOR_FILE))?.restore(&mut state.generator)?;
    Archive::load(dir.join(DISCRIMINATOR_FILE))?.restore(&mut state.discriminator)?;
    let moments = Archive::load(dir.join(OPTIMIZER_FILE))?;
    restore_moments(&moments, "g", &mut state.adam_g)?;
    restore_moments(&moments, "d", &mut state.adam_d)?;
    let rng_path = dir.join(RNG_FILE);
    let text = fs::read_to_string(&rng_path).map_err(|e| Error::io(&rng_path, e))?;
    let kv = parse_kv(&text, &rng_path)?;
    let field = |k: &str| -> Result<u64> {
        kv.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Malformed {
                path: rng_path.clone(),
                reason: format!("missing or bad {k}"),
            })
    };
    if field("seed")? != trainer.train.seed {
        return Err(Error::Config(format!(
            "checkpoint seed {} differs from configured seed {}",
            field("seed")?,
            trainer.train.seed
        )));
    }
    state.step = field("step")?;
    state.adam_g.t = field("adam_g_t")?;
    state.adam_d.t = field("adam_d_t")?;
    let losses_path = dir.join(LOSSES_FILE);
    let text = fs::read_to_string(&losses_path).map_err(|e| Error::io(&losses_path, e))?;
    state.history = parse_losses_csv(&text, &losses_path)?;
    Ok(state)
}

pub fn losses_csv(history: &[LossRecord]) -> String {
    let mut s = String::from(LossRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn parse_losses_csv(text: &str, path: &Path) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(LossRecord::CSV_HEADER) {
        return Err(Error::Malformed {
            path: path.into(),
            reason: "missing loss header".into(),
        });
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            LossRecord::parse_csv_line(l).ok_or_else(|| Error::Malformed {
                path: path.into(),
                reason: format!("bad loss row {l:?}"),
            })
        })
        .collect()
}

/// The highest-step `ckpt_<step>/` directory under `run_dir`, if any.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let rd = match fs::read_dir(run_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(run_dir, e)),
    };
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(run_dir, e))?;
        let name = entry.file_name();
        let Some(step) = name
            .to_str()
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| step > *b) {
            best = Some((step, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossConfig;
    use crate::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
    use crate::trainer::{PatchSet, TrainConfig};
    use crate::upsampling::UpsampleMethod;
    use crate::volume::{Shape, Volume};

    fn trainer(epochs: usize, seed: u64) -> Trainer {
        let mut gc = GeneratorConfig::reference(2, UpsampleMethod::SubpixelNn);
        gc.filters = 8;
        gc.res_blocks = 1;
        Trainer::new(
            Generator::new(gc).unwrap(),
            Discriminator::new(DiscriminatorConfig::with_base(2, 4, [8; 3])).unwrap(),
            TrainConfig {
                epochs,
                seed,
                ..TrainConfig::default()
            },
            LossConfig::default(),
        )
        .unwrap()
    }

    fn data() -> PatchSet<f32> {
        let hr: Vec<Volume<f32>> = (0..6)
            .map(|i| {
                Volume::from_fn(Shape::cube(8), |y, x, z, _| {
                    ((y * 3 + x * 5 + z * 7 + i) % 11) as f32 / 11.0
                })
            })
            .collect();
        let lr = hr.iter().map(|v| v.decimate(2).unwrap()).collect();
        PatchSet { hr, lr }
    }

    #[test]
    fn archive_round_trip() {
        let t = trainer(1, 0);
        let s = t.init_state::<f32>();
        let a = Archive::from_params(&s.generator, "k = v\n");
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        let b = Archive::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(a, b);
        let mut restored = t
            .generator
            .init::<f32>(&mut rand::rngs::mock::StepRng::new(0, 1));
        b.restore(&mut restored).unwrap();
        assert_eq!(restored, s.generator);
    }

    #[test]
    fn archive_rejects_damage() {
        let s = trainer(1, 0).init_state::<f32>();
        let bytes = Archive::from_params(&s.generator, "").to_bytes();
        let p = Path::new("mem");
        assert!(matches!(
            Archive::from_bytes(b"XXXX", p),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            Archive::from_bytes(&bytes[..bytes.len() - 2], p),
            Err(Error::TruncatedPayload { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            Archive::from_bytes(&long, p),
            Err(Error::Malformed { .. })
        ));
        // the discriminator archive does not fit the generator
        let d = Archive::from_params(&s.discriminator, "");
        let mut g = s.generator.clone();
        assert!(d.restore(&mut g).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_latest() {
        let dir = tempfile::tempdir().unwrap();
        let t = trainer(1, 3);
        let d = data();
        let mut s = t.init_state_for(&d);
        t.train(&mut s, &d, |_| Ok(())).unwrap();
        let first = save_checkpoint(dir.path(), &s, "cfg\n", 3, 3).unwrap();
        assert_eq!(first, dir.path().join("ckpt_3"));
        let back = load_checkpoint(&first, &t).unwrap();
        assert_eq!(back, s);
        let rng = fs::read_to_string(first.join(RNG_FILE)).unwrap();
        assert!(rng.contains("step=3\nepoch=1\nbatch_in_epoch=0\n"));
        assert!(!dir.path().join("ckpt_3.tmp").exists());

        s.step = 10;
        save_checkpoint(dir.path(), &s, "cfg\n", 3, 3).unwrap();
        fs::create_dir(dir.path().join("ckpt_x")).unwrap();
        assert_eq!(
            latest_checkpoint(dir.path()).unwrap(),
            Some(dir.path().join("ckpt_10"))
        );
        assert!(load_checkpoint(&first, &trainer(1, 4)).is_err());
    }

    #[test]
    fn resume_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let d = data();
        let full = trainer(3, 5);
        let mut straight = full.init_state_for(&d);
        full.train(&mut straight, &d, |_| Ok(())).unwrap();

        let part = trainer(1, 5);
        let mut s = part.init_state_for(&d);
        part.train(&mut s, &d, |_| Ok(())).unwrap();
        let ckpt = save_checkpoint(dir.path(), &s, "", 5, 3).unwrap();
        let mut resumed = load_checkpoint(&ckpt, &full).unwrap();
        full.train(&mut resumed, &d, |_| Ok(())).unwrap();
        assert_eq!(resumed, straight);
    }

    #[test]
    fn losses_csv_round_trip() {
        let h = vec![
            LossRecord {
                step: 1,
                d_loss: 0.3,
                g_adv: 0.2,
                g_mse: 0.01,
                g_gdl: 0.02,
                g_total: 0.0302,
            },
            LossRecord {
                step: 2,
                d_loss: 1e-9,
                g_adv: 0.5,
                g_mse: 0.1 + 0.2,
                g_gdl: 0.0,
                g_total: f64::MIN_POSITIVE,
            },
        ];
        let text = losses_csv(&h);
        assert!(text.starts_with("step,d_loss,g_adv,g_mse,g_gdl,g_total\n"));
        assert_eq!(parse_losses_csv(&text, Path::new("mem")).unwrap(), h);
        assert!(parse_losses_csv("a,b\n", Path::new("mem")).is_err());
    }
}
