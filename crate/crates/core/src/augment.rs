//! Cutout and grid-aligned CutMix over mosaics.
//!
//! CutMix regions are whole tiles, so label transfer is exact: the annotation
//! rows inside the region come from the donor, the rest from the base.

use image::{imageops, Rgb};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mosaic::{Bbox, MosaicItem};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("base and donor mosaics have different geometry")]
    IncompatibleSpec,
    #[error("region {0} is not aligned to the tile grid")]
    Misaligned(Bbox),
    #[error("cutmix probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("no donor mosaics to mix from")]
    NoDonors,
}

pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

/// Fill `region ∩ image` with `fill`. Annotations are untouched.
pub fn cutout(item: &MosaicItem, region: Bbox, fill: Rgb<u8>) -> MosaicItem {
    let mut out = item.clone();
    let (w, h) = out.image.dimensions();
    let x_end = region.x.saturating_add(region.w).min(w);
    let y_end = region.y.saturating_add(region.h).min(h);
    for y in region.y..y_end {
        for x in region.x..x_end {
            out.image.put_pixel(x, y, fill);
        }
    }
    out
}

/// Replace the tiles inside `region` (pixels and annotations) with the donor's.
pub fn cutmix(base: &MosaicItem, donor: &MosaicItem, region: Bbox) -> Result<MosaicItem, AugmentError> {
    let spec = &base.spec;
    if !spec.same_geometry(&donor.spec) || base.image.dimensions() != donor.image.dimensions() {
        return Err(AugmentError::IncompatibleSpec);
    }
    if region.w == 0 || region.h == 0 {
        return Ok(base.clone());
    }
    if !region.x.is_multiple_of(spec.tile_w)
        || !region.y.is_multiple_of(spec.tile_h)
        || !region.w.is_multiple_of(spec.tile_w)
        || !region.h.is_multiple_of(spec.tile_h)
        || region.x + region.w > spec.width_px
        || region.y + region.h > spec.height_px
    {
        return Err(AugmentError::Misaligned(region));
    }

    let mut image = base.image.clone();
    let patch = imageops::crop_imm(&donor.image, region.x, region.y, region.w, region.h);
    imageops::replace(&mut image, &*patch, i64::from(region.x), i64::from(region.y));

    let inside = |b: &Bbox| {
        b.x >= region.x && b.x < region.x + region.w && b.y >= region.y && b.y < region.y + region.h
    };
    let mut annotations: Vec<_> = base
        .annotations
        .iter()
        .filter(|a| !inside(&a.bbox))
        .chain(donor.annotations.iter().filter(|a| inside(&a.bbox)))
        .cloned()
        .collect();
    annotations.sort_by_key(|a| (a.bbox.y, a.bbox.x));
    Ok(MosaicItem {
        image,
        annotations,
        spec: base.spec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutMixConfig {
    pub probability: f64,
    pub rng_seed: u64,
}

impl Default for CutMixConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            rng_seed: 0,
        }
    }
}

impl CutMixConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if (0.0..=1.0).contains(&self.probability) {
            Ok(())
        } else {
            Err(AugmentError::InvalidProbability(self.probability))
        }
    }
}

/// Grid-aligned region: uniform top-left cell, uniform width in
/// `[1, cols]` and height in `[1, rows]` tiles, clipped to the grid.
pub fn sample_region<R: Rng>(item: &MosaicItem, rng: &mut R) -> Bbox {
    let s = &item.spec;
    let col = rng.gen_range(0..s.grid_cols);
    let row = rng.gen_range(0..s.grid_rows);
    let w = rng.gen_range(1..=s.grid_cols).min(s.grid_cols - col);
    let h = rng.gen_range(1..=s.grid_rows).min(s.grid_rows - row);
    Bbox::new(col * s.tile_w, row * s.tile_h, w * s.tile_w, h * s.tile_h)
}

#[derive(Debug, Clone)]
pub struct CutMixOutcome {
    pub item: MosaicItem,
    /// `(donor index, region)` when mixing happened.
    pub mixed: Option<(usize, Bbox)>,
}

/// With probability `cfg.probability`, CutMix `base` with a donor drawn
/// uniformly from `donors`; otherwise return `base`. Deterministic in
/// `cfg.rng_seed`.
pub fn maybe_cutmix(
    base: &MosaicItem,
    donors: &[MosaicItem],
    cfg: &CutMixConfig,
) -> Result<CutMixOutcome, AugmentError> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.rng_seed, &[]);
    if !rng.gen_bool(cfg.probability) {
        return Ok(CutMixOutcome {
            item: base.clone(),
            mixed: None,
        });
    }
    if donors.is_empty() {
        return Err(AugmentError::NoDonors);
    }
    let donor = rng.gen_range(0..donors.len());
    let region = sample_region(base, &mut rng);
    Ok(CutMixOutcome {
        item: cutmix(base, &donors[donor], region)?,
        mixed: Some((donor, region)),
    })
}

/// Dataset view that loads item `i` CutMixed with probability `cfg.probability`,
/// donors drawn from the same item list. Item `i` uses stream `(seed, i)`.
pub struct CutMixDataset<'a> {
    items: &'a [MosaicItem],
    cfg: CutMixConfig,
}

impl<'a> CutMixDataset<'a> {
    pub fn new(items: &'a [MosaicItem], cfg: CutMixConfig) -> Result<Self, AugmentError> {
        cfg.validate()?;
        Ok(Self { items, cfg })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Item `index` (modulo the item count) under draw `epoch`.
    pub fn get(&self, index: usize, epoch: u64) -> Result<CutMixOutcome, AugmentError> {
        let base = &self.items[index % self.items.len()];
        let cfg = CutMixConfig {
            rng_seed: rng::derive_seed(self.cfg.rng_seed, &[index as u64, epoch]),
            ..self.cfg
        };
        maybe_cutmix(base, self.items, &cfg)
    }
}
