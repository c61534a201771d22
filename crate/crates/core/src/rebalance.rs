//! Class rebalancing of the high-fidelity corpus.
//!
//! A [`BalanceQuota`] says how many novel images each class needs; an
//! [`ImageGenerator`] produces them one at a time from a seed image of the
//! same class. The in-repo [`ClassicalGenerator`] (flip / quarter-turn /
//! brightness jitter) stands in for a per-class generative network, and
//! [`DirectoryGenerator`] adapts images produced offline by such a network.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{ClassDistribution, CorpusError, DiseaseClass, HighFidelityRecord, PixelSource};
use crate::rng;
use crate::Image;

#[derive(Debug, Error)]
pub enum RebalanceError {
    #[error("target {target} is below the majority class count {max}")]
    InvalidTarget { target: usize, max: usize },
    #[error("class {class} needs {quota} novel images but the pool has no {class} records")]
    InsufficientSource { class: DiseaseClass, quota: usize },
    #[error("novel id `{0}` collides with an original image id")]
    IdCollision(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("generator produced {got:?} for a {expected:?} seed image")]
    DimensionMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("no generated images for class {class} under {dir}")]
    EmptyGeneratorDir { class: DiseaseClass, dir: PathBuf },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Number of images to synthesize per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BalanceQuota {
    per_class: [usize; 4],
}

impl BalanceQuota {
    pub fn from_counts(per_class: [usize; 4]) -> Self {
        Self { per_class }
    }

    pub fn get(&self, class: DiseaseClass) -> usize {
        self.per_class[class.index()]
    }

    pub fn counts(&self) -> [usize; 4] {
        self.per_class
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.total() == 0
    }
}

impl Serialize for BalanceQuota {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ClassDistribution::from_counts(self.per_class).serialize(serializer)
    }
}

/// Quota lifting every class to `target` (default: the majority count).
pub fn balance_plan(
    dist: &ClassDistribution,
    target: Option<usize>,
) -> Result<BalanceQuota, RebalanceError> {
    let max = dist.max();
    let target = target.unwrap_or(max);
    if target < max {
        return Err(RebalanceError::InvalidTarget { target, max });
    }
    let mut per_class = [0; 4];
    for (class, count) in dist.iter() {
        per_class[class.index()] = target - count;
    }
    Ok(BalanceQuota { per_class })
}

/// Produces a novel image of `class` from `seed_image`.
///
/// Implementations must be deterministic in `(seed_image, rng_seed)` and
/// return an image with the seed image's dimensions.
pub trait ImageGenerator: Sync {
    fn generate(
        &self,
        seed_image: &Image,
        class: DiseaseClass,
        rng_seed: u64,
    ) -> Result<Image, RebalanceError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub flip: bool,
    /// Quarter-turn rotations to sample from; each must be 0, 90, 180 or 270.
    pub rotate_degrees: Vec<u32>,
    /// Brightness is scaled by a factor drawn from `[1 - j, 1 + j]`.
    pub brightness_jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            flip: true,
            rotate_degrees: vec![0, 90, 180, 270],
            brightness_jitter: 0.1,
        }
    }
}

/// One sampled combination of classical transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformDraw {
    pub flip: bool,
    pub rotate_degrees: u32,
    pub brightness: f64,
}

#[derive(Debug, Clone)]
pub struct ClassicalGenerator {
    config: GeneratorConfig,
}

pub fn builtin_generator(config: GeneratorConfig) -> Result<ClassicalGenerator, RebalanceError> {
    let mut rotations = config.rotate_degrees.clone();
    if let Some(bad) = rotations.iter().find(|d| ![0, 90, 180, 270].contains(*d)) {
        return Err(RebalanceError::InvalidConfig(format!(
            "rotation {bad} is not a quarter turn"
        )));
    }
    if !(0.0..=0.5).contains(&config.brightness_jitter) {
        return Err(RebalanceError::InvalidConfig(format!(
            "brightness jitter {} outside [0, 0.5]",
            config.brightness_jitter
        )));
    }
    rotations.sort_unstable();
    rotations.dedup();
    if rotations.is_empty() {
        rotations.push(0);
    }
    let generator = ClassicalGenerator {
        config: GeneratorConfig {
            rotate_degrees: rotations,
            ..config
        },
    };
    if generator.is_identity() {
        log::warn!("classical generator has no active transforms; it will copy seed images");
    }
    Ok(generator)
}

impl ClassicalGenerator {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn is_identity(&self) -> bool {
        !self.config.flip
            && self.config.rotate_degrees == [0]
            && self.config.brightness_jitter == 0.0
    }

    /// The transform combination `rng_seed` selects.
    pub fn draw(&self, rng_seed: u64) -> TransformDraw {
        let mut rng = rng::stream(rng_seed, &[]);
        let flip = self.config.flip && rng.gen_bool(0.5);
        let rotate_degrees = *self
            .config
            .rotate_degrees
            .choose(&mut rng)
            .expect("rotation set is never empty");
        let j = self.config.brightness_jitter;
        let brightness = if j > 0.0 {
            rng.gen_range(1.0 - j..=1.0 + j)
        } else {
            1.0
        };
        TransformDraw {
            flip,
            rotate_degrees,
            brightness,
        }
    }

    pub fn apply(&self, image: &Image, draw: TransformDraw) -> Image {
        let (w, h) = image.dimensions();
        let mut out = if draw.flip {
            imageops::flip_horizontal(image)
        } else {
            image.clone()
        };
        out = match draw.rotate_degrees {
            90 => imageops::rotate90(&out),
            180 => imageops::rotate180(&out),
            270 => imageops::rotate270(&out),
            _ => out,
        };
        if out.dimensions() != (w, h) {
            out = imageops::resize(&out, w, h, FilterType::Triangle);
        }
        if draw.brightness != 1.0 {
            for px in out.pixels_mut() {
                for c in px.0.iter_mut() {
                    *c = (f64::from(*c) * draw.brightness).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }
}

impl ImageGenerator for ClassicalGenerator {
    fn generate(
        &self,
        seed_image: &Image,
        _class: DiseaseClass,
        rng_seed: u64,
    ) -> Result<Image, RebalanceError> {
        Ok(self.apply(seed_image, self.draw(rng_seed)))
    }
}

/// Serves pre-generated images from `<root>/<class>/*.png`.
///
/// The seed image only fixes the output size; the file is chosen by
/// `rng_seed`.
#[derive(Debug, Clone)]
pub struct DirectoryGenerator {
    root: PathBuf,
    files: [Vec<PathBuf>; 4],
}

impl DirectoryGenerator {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RebalanceError> {
        let root = root.as_ref().to_path_buf();
        let mut files: [Vec<PathBuf>; 4] = Default::default();
        for class in DiseaseClass::ALL {
            let dir = root.join(class.as_str());
            if !dir.is_dir() {
                continue;
            }
            let entries = std::fs::read_dir(&dir).map_err(|source| RebalanceError::Io {
                path: dir.clone(),
                source,
            })?;
            let mut list = Vec::new();
            for entry in entries {
                let path = entry
                    .map_err(|source| RebalanceError::Io {
                        path: dir.clone(),
                        source,
                    })?
                    .path();
                if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                    list.push(path);
                }
            }
            list.sort();
            files[class.index()] = list;
        }
        Ok(Self { root, files })
    }

    pub fn available(&self, class: DiseaseClass) -> usize {
        self.files[class.index()].len()
    }
}

impl ImageGenerator for DirectoryGenerator {
    fn generate(
        &self,
        seed_image: &Image,
        class: DiseaseClass,
        rng_seed: u64,
    ) -> Result<Image, RebalanceError> {
        let list = &self.files[class.index()];
        if list.is_empty() {
            return Err(RebalanceError::EmptyGeneratorDir {
                class,
                dir: self.root.join(class.as_str()),
            });
        }
        let pick = &list[(rng::derive_seed(rng_seed, &[]) % list.len() as u64) as usize];
        let bytes = std::fs::read(pick).map_err(|source| RebalanceError::Io {
            path: pick.clone(),
            source,
        })?;
        let img = image::load_from_memory(&bytes)
            .map_err(|source| CorpusError::Decode {
                image_id: pick.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = seed_image.dimensions();
        Ok(if img.dimensions() == (w, h) {
            img
        } else {
            imageops::resize(&img, w, h, FilterType::Triangle)
        })
    }
}

/// A synthesized record together with its pixels.
#[derive(Debug, Clone)]
pub struct NovelImage {
    pub record: HighFidelityRecord,
    /// Id of the original image the generator was seeded with.
    pub source_id: String,
    pub image: Image,
}

pub fn novel_id(class: DiseaseClass, k: usize) -> String {
    format!("synth_{}_{k}.png", class.as_str())
}

/// Generate exactly `quota[c]` novel images per class.
///
/// Image `k` of class `c` uses the stream `(rng_seed, c, k)` both to pick its
/// seed image from the class pool and to seed the generator, so the result
/// does not depend on evaluation order.
pub fn synthesize(
    pool: &[HighFidelityRecord],
    quota: &BalanceQuota,
    generator: &dyn ImageGenerator,
    pixels: &dyn PixelSource,
    rng_seed: u64,
) -> Result<Vec<NovelImage>, RebalanceError> {
    let originals: HashSet<&str> = pool.iter().map(|r| r.image_id.as_str()).collect();
    let mut jobs = Vec::with_capacity(quota.total());
    let mut by_class: [Vec<&HighFidelityRecord>; 4] = Default::default();
    for r in pool {
        by_class[r.label.index()].push(r);
    }
    for class in DiseaseClass::ALL {
        let n = quota.get(class);
        if n > 0 && by_class[class.index()].is_empty() {
            return Err(RebalanceError::InsufficientSource { class, quota: n });
        }
        for k in 0..n {
            let id = novel_id(class, k);
            if originals.contains(id.as_str()) {
                return Err(RebalanceError::IdCollision(id));
            }
            jobs.push((class, k, id));
        }
    }

    let run = |(class, k, id): &(DiseaseClass, usize, String)| -> Result<NovelImage, RebalanceError> {
        let path = [class.index() as u64, *k as u64];
        let candidates = &by_class[class.index()];
        let mut pick_rng = rng::stream(rng_seed, &path);
        let source = candidates[pick_rng.gen_range(0..candidates.len())];
        let seed_image = pixels.load(&source.image_id)?;
        let image = generator.generate(&seed_image, *class, rng::derive_seed(rng_seed, &[path[0], path[1], 1]))?;
        if image.dimensions() != seed_image.dimensions() {
            return Err(RebalanceError::DimensionMismatch {
                expected: seed_image.dimensions(),
                got: image.dimensions(),
            });
        }
        Ok(NovelImage {
            record: HighFidelityRecord::new(id.clone(), *class),
            source_id: source.image_id.clone(),
            image,
        })
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(run).collect()
    }
}
