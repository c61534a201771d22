//! Command line and HTTP front end for `fieldforge`.
//!
//! Every subcommand is a thin adapter over a library call; the argument
//! structs live in [`args`], the adapters in [`commands`] and the prediction
//! service in [`service`].

pub mod args;
pub mod commands;
pub mod service;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fieldforge::corpus::{self, ImageStore, InMemoryImages, PixelSource};
use fieldforge::{rng, HighFidelityRecord};

/// Environment variable naming the default high-fidelity image root.
pub const DATA_ROOT_ENV: &str = "FIELDFORGE_DATA_ROOT";

/// Records plus pixel access, either from disk or the procedural demo corpus.
pub enum Corpus {
    Disk {
        records: Vec<HighFidelityRecord>,
        store: ImageStore,
    },
    Demo {
        records: Vec<HighFidelityRecord>,
        images: InMemoryImages,
    },
}

impl Corpus {
    /// Label table at `labels` with images under `images`, falling back to
    /// the table's own directory.
    pub fn open(labels: &Path, images: Option<&Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(labels).with_context(|| format!("reading {}", labels.display()))?;
        let records = corpus::parse_label_table(&raw).with_context(|| format!("parsing {}", labels.display()))?;
        let root = match images {
            Some(dir) => dir.to_path_buf(),
            None => labels.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Ok(Corpus::Disk {
            records,
            store: ImageStore::new(root),
        })
    }

    pub fn demo(count: usize, seed: u64) -> Self {
        let (records, images) = fieldforge::mosaic::demo_corpus(count, seed);
        Corpus::Demo { records, images }
    }

    /// `open` when a label table is given, the demo corpus otherwise.
    pub fn resolve(labels: Option<&PathBuf>, images: Option<&PathBuf>, seed: u64) -> Result<Self> {
        match labels {
            Some(path) => Self::open(path, images.map(PathBuf::as_path)),
            None => {
                log::info!("no label table given, using the procedural demo corpus");
                Ok(Self::demo(64, seed))
            }
        }
    }

    pub fn records(&self) -> &[HighFidelityRecord] {
        match self {
            Corpus::Disk { records, .. } | Corpus::Demo { records, .. } => records,
        }
    }

    pub fn pixels(&self) -> &dyn PixelSource {
        match self {
            Corpus::Disk { store, .. } => store,
            Corpus::Demo { images, .. } => images,
        }
    }
}

/// Seeded uniform split: `(train, holdout)` with `round(fraction * n)`
/// records held out. Input order is preserved within each side.
pub fn split_records(
    records: &[HighFidelityRecord],
    holdout_fraction: f64,
    seed: u64,
) -> (Vec<HighFidelityRecord>, Vec<HighFidelityRecord>) {
    let n = records.len();
    let holdout_n = ((holdout_fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        rng::unit(seed, &[a as u64])
            .total_cmp(&rng::unit(seed, &[b as u64]))
            .then(a.cmp(&b))
    });
    let mut held = vec![false; n];
    for &k in &order[..holdout_n] {
        held[k] = true;
    }
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (r, h) in records.iter().zip(held) {
        if h {
            holdout.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, holdout)
}
