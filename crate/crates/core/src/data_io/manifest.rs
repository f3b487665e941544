use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Seed of the shuffle that assigned the split tags, when known.
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parse JSON lines; relative paths are resolved against `base`.
    pub fn from_jsonl(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry =
                serde_json::from_str(line).map_err(|err| Error::Config(format!("manifest line {}: {err}", i + 1)))?;
            if let Some(base) = base {
                e.image = base.join(&e.image);
                e.mask = base.join(&e.mask);
            }
            entries.push(e);
        }
        Ok(Self { entries, seed: None })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path.parent())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    /// Every referenced file exists.
    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.image, &e.mask] {
                if !p.is_file() {
                    return config(format!("manifest references missing file {}", p.display()));
                }
            }
        }
        Ok(())
    }
}

/// Assign split tags by a seeded shuffle. Validation and test counts are
/// the rounded ratios; training takes the remainder. Entries keep their
/// input order.
pub fn split_manifest(items: Vec<(PathBuf, PathBuf)>, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if items.is_empty() {
        return config("cannot split an empty item list");
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return config(format!("split ratios must be in [0, 1] and sum to 1, got {ratios:?}"));
    }
    let n = items.len();
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n);
    let n_test = ((ratios[2] * n as f64).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tags = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        tags[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let entries =
        items.into_iter().zip(tags).map(|((image, mask), split)| ManifestEntry { image, mask, split }).collect();
    Ok(DatasetManifest { entries, seed: Some(seed) })
}
