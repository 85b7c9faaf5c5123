//! Dataset manifests: one `path,split` line per volume.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fraction of volumes assigned to training.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Assigns `floor(0.8 n)` randomly chosen indices to training and the rest
/// to test, keeping at least one of each when `n >= 2`.
pub fn split_assignment(n: usize, seed: u64) -> Vec<Split> {
    let mut n_train = (n as f64 * TRAIN_FRACTION).floor() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Test; n];
    for &i in &order[..n_train] {
        out[i] = Split::Train;
    }
    out
}

impl Manifest {
    pub fn from_paths(paths: Vec<String>, seed: u64) -> Self {
        let splits = split_assignment(paths.len(), seed);
        Manifest {
            entries: paths
                .into_iter()
                .zip(splits)
                .map(|(path, split)| ManifestEntry { path, split })
                .collect(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| Error::Malformed {
                path: path.into(),
                reason: format!("line {}: {reason}", i + 1),
            };
            let (p, s) = line
                .rsplit_once(',')
                .ok_or_else(|| malformed("expected `path,split`".into()))?;
            if p.is_empty() {
                return Err(malformed("empty path".into()));
            }
            entries.push(ManifestEntry {
                path: p.to_string(),
                split: s.trim().parse().map_err(malformed)?,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{},{}\n", e.path, e.split))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text, path)
    }
}
