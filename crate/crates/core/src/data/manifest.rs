//! Line-oriented dataset index.
//!
//! ```text
//! # esfw dataset v1
//! seed = 7
//! n = 64
//! kinds = sphere,gaussian-clusters
//! mode = rigid
//! noise = 0
//! kernels = 0
//! magnitude = 0
//! pair = train 12208603434412436466 sphere pair_00000.bin
//! ```
//!
//! Every pair line records the seed its sample was generated from, so the
//! whole dataset can be rebuilt byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{read_pair, write_pair};
use super::pairs::{make_deformed_pair, make_rigid_pair, PairSample};
use super::shapes::{gen_shape, ShapeKind};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";
const HEADER: &str = "# esfw dataset v1";
// Separates the pair-transform stream from the shape stream of one entry.
const PAIR_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairMode {
    Rigid { noise_sigma: f64 },
    Deformed { num_kernels: usize, magnitude: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub n: usize,
    /// Shapes cycled through in entry order.
    pub kinds: Vec<ShapeKind>,
    pub mode: PairMode,
}

impl GenParams {
    /// Regenerates the sample of one entry.
    pub fn sample(&self, kind: ShapeKind, seed: u64) -> Result<PairSample> {
        let cloud = gen_shape(kind, self.n, seed)?;
        let pair_seed = seed ^ PAIR_SEED_SALT;
        match self.mode {
            PairMode::Rigid { noise_sigma } => make_rigid_pair(&cloud, pair_seed, noise_sigma),
            PairMode::Deformed {
                num_kernels,
                magnitude,
            } => make_deformed_pair(&cloud, pair_seed, num_kernels, magnitude),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub seed: u64,
    pub kind: ShapeKind,
    /// Relative to the manifest's directory.
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub params: GenParams,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<PairSample> {
        read_pair(&self.root.join(&entry.file))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<PairSample>> {
        self.entries_in(split).map(|e| self.load(e)).collect()
    }

    pub fn regenerate(&self, entry: &ManifestEntry) -> Result<PairSample> {
        self.params.sample(entry.kind, entry.seed)
    }

    pub fn write(&self) -> Result<()> {
        let (mode, noise, kernels, magnitude) = match self.params.mode {
            PairMode::Rigid { noise_sigma } => ("rigid", noise_sigma, 0, 0.0),
            PairMode::Deformed {
                num_kernels,
                magnitude,
            } => ("deformed", 0.0, num_kernels, magnitude),
        };
        let kinds: Vec<&str> = self.params.kinds.iter().map(|k| k.as_str()).collect();
        let mut text = format!(
            "{HEADER}\nseed = {}\nn = {}\nkinds = {}\nmode = {mode}\nnoise = {noise}\nkernels = {kernels}\nmagnitude = {magnitude}\n",
            self.seed,
            self.params.n,
            kinds.join(",")
        );
        for e in &self.entries {
            text.push_str(&format!("pair = {} {} {} {}\n", e.split, e.seed, e.kind, e.file.display()));
        }
        fs::write(self.root.join(MANIFEST_NAME), text)?;
        Ok(())
    }

    /// Reads `manifest.txt` from `dir`.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(Error::read(&path))?;
        let mut offset = 0usize;
        let mut fields: Vec<(String, String, usize)> = Vec::new();
        let mut entries = Vec::new();
        let err = |at: usize, message: String| Error::Parse {
            path: path.clone(),
            offset: at as u64,
            message,
        };
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let at = offset;
            offset += raw.len();
            let line = raw.trim();
            if i == 0 {
                if line != HEADER {
                    return Err(err(at, format!("expected {HEADER:?}")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| err(at, format!("expected `key = value`, got {line:?}")))?;
            if key == "pair" {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(err(at, "pair lines need split, seed, kind and file".into()));
                }
                entries.push(ManifestEntry {
                    split: parts[0].parse().map_err(|e: Error| err(at, e.to_string()))?,
                    seed: parts[1].parse().map_err(|e| err(at, format!("seed: {e}")))?,
                    kind: parts[2].parse().map_err(|e: Error| err(at, e.to_string()))?,
                    file: PathBuf::from(parts[3]),
                });
            } else {
                fields.push((key.to_string(), value.to_string(), at));
            }
        }
        let field = |name: &str| -> Result<(&str, usize)> {
            fields
                .iter()
                .find(|(k, _, _)| k == name)
                .map(|(_, v, at)| (v.as_str(), *at))
                .ok_or_else(|| err(offset, format!("missing field {name}")))
        };
        fn num<T: FromStr>(v: (&str, usize), name: &str, err: &dyn Fn(usize, String) -> Error) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.0.parse().map_err(|e| err(v.1, format!("{name}: {e}")))
        }
        let kinds_field = field("kinds")?;
        let kinds = kinds_field
            .0
            .split(',')
            .map(|k| k.parse::<ShapeKind>().map_err(|e| err(kinds_field.1, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mode_field = field("mode")?;
        let mode = match mode_field.0 {
            "rigid" => PairMode::Rigid {
                noise_sigma: num(field("noise")?, "noise", &err)?,
            },
            "deformed" => PairMode::Deformed {
                num_kernels: num(field("kernels")?, "kernels", &err)?,
                magnitude: num(field("magnitude")?, "magnitude", &err)?,
            },
            other => return Err(err(mode_field.1, format!("unknown mode {other:?}"))),
        };
        Ok(DatasetManifest {
            root: dir.to_path_buf(),
            seed: num(field("seed")?, "seed", &err)?,
            params: GenParams {
                n: num(field("n")?, "n", &err)?,
                kinds,
                mode,
            },
            entries,
        })
    }
}

/// Generates `train_count + test_count` pairs into `dir` (test pairs last),
/// writes their files and the manifest.
pub fn generate_dataset(
    dir: &Path,
    params: GenParams,
    train_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if params.kinds.is_empty() {
        return Err(Error::Config("at least one shape kind is required".into()));
    }
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(train_count + test_count);
    for i in 0..train_count + test_count {
        let entry = ManifestEntry {
            split: if i < train_count { Split::Train } else { Split::Test },
            seed: rng.random(),
            kind: params.kinds[i % params.kinds.len()],
            file: PathBuf::from(format!("pair_{i:05}.bin")),
        };
        write_pair(&dir.join(&entry.file), &params.sample(entry.kind, entry.seed)?)?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        seed,
        params,
        entries,
    };
    manifest.write()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_and_regenerates() {
        let dir = tempfile::tempdir().unwrap();
        let params = GenParams {
            n: 10,
            kinds: vec![ShapeKind::Sphere, ShapeKind::Torus],
            mode: PairMode::Deformed {
                num_kernels: 2,
                magnitude: 0.05,
            },
        };
        let m = generate_dataset(dir.path(), params, 3, 2, 7).unwrap();
        let back = DatasetManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.entries_in(Split::Test).count(), 2);
        for e in &back.entries {
            assert_eq!(back.load(e).unwrap(), back.regenerate(e).unwrap());
        }
    }

    #[test]
    fn bad_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_NAME), "hello\n").unwrap();
        assert!(matches!(DatasetManifest::read(dir.path()), Err(Error::Parse { offset: 0, .. })));
    }
}
