//! Dataset specs as they appear in configs:
//!
//! - `blobs:classes=10,dim=20,sep=2.5[,per_class=200][,seed=N]`; without
//!   `seed` the blobs are drawn with the run seed.
//! - `mnist:DIR`, the four uncompressed MNIST IDX files, train and t10k
//!   concatenated before the stream's own split.
//! - `idx:images=PATH,labels=PATH`, any single IDX image/label pair.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use prer_core::data::{idx, synth_blobs, LabeledSet};

use crate::error::{io, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        dim: usize,
        separation: f64,
        per_class: usize,
        seed: Option<u64>,
    },
    Mnist {
        dir: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

const MNIST_FILES: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

impl DatasetSpec {
    /// Materializes the labelled set; `run_seed` seeds generators that
    /// don't pin their own.
    pub fn load(&self, run_seed: u64) -> Result<LabeledSet> {
        match self {
            DatasetSpec::Blobs {
                classes,
                dim,
                separation,
                per_class,
                seed,
            } => Ok(synth_blobs(*classes, *per_class, *dim, *separation, seed.unwrap_or(run_seed))?),
            DatasetSpec::Mnist { dir } => {
                let mut parts = MNIST_FILES
                    .iter()
                    .map(|(i, l)| load_pair(&dir.join(i), &dir.join(l)));
                let mut set = parts.next().expect("two MNIST parts")?;
                for part in parts {
                    let part = part?;
                    set.images.append_rows(&part.images)?;
                    set.labels.extend(part.labels);
                }
                Ok(set)
            }
            DatasetSpec::Idx { images, labels } => load_pair(images, labels),
        }
    }

    /// Whether the data depends on the run seed.
    pub fn seeded_by_run(&self) -> bool {
        matches!(self, DatasetSpec::Blobs { seed: None, .. })
    }
}

fn load_pair(images: &Path, labels: &Path) -> Result<LabeledSet> {
    let read = |p: &Path| -> Result<idx::IdxArray> {
        let bytes = std::fs::read(p).map_err(io(p))?;
        idx::parse(&bytes).map_err(|e| CliError::Dataset {
            spec: p.display().to_string(),
            reason: e.to_string(),
        })
    };
    Ok(idx::labeled_images(&read(images)?, &read(labels)?)?)
}

impl FromStr for DatasetSpec {
    type Err = CliError;

    fn from_str(spec: &str) -> Result<Self> {
        let fail = |reason: String| CliError::Dataset {
            spec: spec.to_string(),
            reason,
        };
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| fail("expected KIND:ARGS".into()))?;
        match kind {
            "mnist" if !rest.is_empty() => Ok(DatasetSpec::Mnist { dir: rest.into() }),
            "mnist" => Err(fail("missing directory".into())),
            "blobs" => {
                let mut args = key_values(rest).map_err(fail)?;
                let mut take = |key: &str, default: Option<&str>| -> Result<String> {
                    args.remove(key)
                        .or(default.map(str::to_string))
                        .ok_or_else(|| fail(format!("missing '{key}'")))
                };
                let classes = take("classes", None)?;
                let dim = take("dim", None)?;
                let sep = take("sep", None)?;
                let per_class = take("per_class", Some("200"))?;
                let seed = args.remove("seed");
                if let Some(k) = args.keys().next() {
                    return Err(fail(format!("unknown key '{k}'")));
                }
                let num = |key: &str, v: &str| fail(format!("'{key}' is not a number: {v}"));
                let spec = DatasetSpec::Blobs {
                    classes: classes.parse().map_err(|_| num("classes", &classes))?,
                    dim: dim.parse().map_err(|_| num("dim", &dim))?,
                    separation: sep.parse().map_err(|_| num("sep", &sep))?,
                    per_class: per_class.parse().map_err(|_| num("per_class", &per_class))?,
                    seed: seed
                        .map(|s| s.parse().map_err(|_| num("seed", &s)))
                        .transpose()?,
                };
                if let DatasetSpec::Blobs { classes, dim, separation, .. } = &spec {
                    if *classes < 2 || *dim == 0 || *separation <= 0.0 || separation.is_nan() {
                        return Err(fail("need classes ≥ 2, dim ≥ 1 and sep > 0".into()));
                    }
                }
                Ok(spec)
            }
            "idx" => {
                let mut args = key_values(rest).map_err(fail)?;
                let images = args.remove("images").ok_or_else(|| fail("missing 'images'".into()))?;
                let labels = args.remove("labels").ok_or_else(|| fail("missing 'labels'".into()))?;
                if let Some(k) = args.keys().next() {
                    return Err(fail(format!("unknown key '{k}'")));
                }
                Ok(DatasetSpec::Idx {
                    images: images.into(),
                    labels: labels.into(),
                })
            }
            other => Err(fail(format!("unknown dataset kind '{other}'"))),
        }
    }
}

fn key_values(s: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got '{part}'"))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(format!("'{k}' given twice"));
        }
    }
    Ok(out)
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Blobs {
                classes,
                dim,
                separation,
                per_class,
                seed,
            } => {
                write!(f, "blobs:classes={classes},dim={dim},sep={separation},per_class={per_class}")?;
                if let Some(s) = seed {
                    write!(f, ",seed={s}")?;
                }
                Ok(())
            }
            DatasetSpec::Mnist { dir } => write!(f, "mnist:{}", dir.display()),
            DatasetSpec::Idx { images, labels } => {
                write!(f, "idx:images={},labels={}", images.display(), labels.display())
            }
        }
    }
}
