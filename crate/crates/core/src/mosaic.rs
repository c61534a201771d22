//! Low-fidelity data generation: synthetic far-field images assembled from
//! high-fidelity tiles and soil patches on a fixed grid, plus the per-tile
//! annotation table.
//!
//! Default geometry is a 28 × 28 grid of 64 × 43 px tiles (1792 × 1204 px).
//! Every cell is independently soil with probability `soil / (soil + leaf)`
//! (1:5 by default, so 1/6); plant cells sample the pool uniformly with
//! replacement. Soil cells get no annotation row.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{ImageEncoder, Rgb};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, DiseaseClass, HighFidelityRecord, PixelSource};
use crate::rng;
use crate::Image;

/// Header of the mosaic annotation CSV.
pub const ANNOTATION_HEADER: &str = "id,bbox,class label";

#[derive(Debug, Error)]
pub enum MosaicError {
    #[error("invalid mosaic spec: {0}")]
    InvalidSpec(String),
    #[error("cell ({row}, {col}) outside {rows}x{cols} grid")]
    OutOfBounds {
        row: u32,
        col: u32,
        rows: u32,
        cols: u32,
    },
    #[error("tile pool is empty")]
    EmptyPool,
    #[error("soil texture {got:?} is smaller than a {need:?} tile")]
    TextureTooSmall { got: (u32, u32), need: (u32, u32) },
    #[error("annotation table: {0}")]
    Format(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Expected soil:leaf cell ratio. `soil == 0` disables soil entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoilRatio {
    pub soil: u32,
    pub leaf: u32,
}

impl SoilRatio {
    pub const NONE: SoilRatio = SoilRatio { soil: 0, leaf: 1 };

    pub fn probability(self) -> f64 {
        f64::from(self.soil) / (f64::from(self.soil) + f64::from(self.leaf))
    }
}

/// Parses `soil:leaf`, e.g. `1:5`.
impl FromStr for SoilRatio {
    type Err = MosaicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MosaicError::InvalidSpec(format!("soil ratio `{s}` is not `soil:leaf`"));
        let (soil, leaf) = s.split_once(':').ok_or_else(bad)?;
        let ratio = SoilRatio {
            soil: soil.trim().parse().map_err(|_| bad())?,
            leaf: leaf.trim().parse().map_err(|_| bad())?,
        };
        if ratio.leaf == 0 {
            return Err(bad());
        }
        Ok(ratio)
    }
}

impl Default for SoilRatio {
    fn default() -> Self {
        Self { soil: 1, leaf: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosaicSpec {
    pub width_px: u32,
    pub height_px: u32,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    pub soil_ratio: SoilRatio,
    pub rng_seed: u64,
}

impl Default for MosaicSpec {
    fn default() -> Self {
        Self {
            width_px: 1792,
            height_px: 1204,
            grid_cols: 28,
            grid_rows: 28,
            tile_w: 64,
            tile_h: 43,
            soil_ratio: SoilRatio::default(),
            rng_seed: 0,
        }
    }
}

impl MosaicSpec {
    /// Spec for a `rows × cols` grid of `tile_w × tile_h` tiles.
    pub fn with_grid(cols: u32, rows: u32, tile_w: u32, tile_h: u32) -> Self {
        Self {
            width_px: cols * tile_w,
            height_px: rows * tile_h,
            grid_cols: cols,
            grid_rows: rows,
            tile_w,
            tile_h,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MosaicError> {
        if self.grid_cols == 0 || self.grid_rows == 0 || self.tile_w == 0 || self.tile_h == 0 {
            return Err(MosaicError::InvalidSpec("grid and tile sizes must be positive".into()));
        }
        if self.grid_cols * self.tile_w != self.width_px || self.grid_rows * self.tile_h != self.height_px {
            return Err(MosaicError::InvalidSpec(format!(
                "{}x{} tiles of {}x{} do not cover {}x{}",
                self.grid_cols, self.grid_rows, self.tile_w, self.tile_h, self.width_px, self.height_px
            )));
        }
        if self.soil_ratio.leaf == 0 {
            return Err(MosaicError::InvalidSpec("soil ratio leaf term must be positive".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        (self.grid_cols * self.grid_rows) as usize
    }

    /// Same canvas and grid (seed and soil ratio may differ).
    pub fn same_geometry(&self, other: &MosaicSpec) -> bool {
        (self.width_px, self.height_px, self.grid_cols, self.grid_rows, self.tile_w, self.tile_h)
            == (other.width_px, other.height_px, other.grid_cols, other.grid_rows, other.tile_w, other.tile_h)
    }
}

/// Integer pixel rectangle `[x, y, w, h]`, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bbox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Bbox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            f64::from(self.x),
            f64::from(self.y),
            f64::from(self.x + self.w),
            f64::from(self.y + self.h),
        ]
    }

    pub fn overlaps(&self, other: &Bbox) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

impl fmt::Display for Bbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for Bbox {
    type Err = MosaicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MosaicError::Format(format!("malformed bbox `{s}`"));
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .ok_or_else(bad)?;
        let parts = inner
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        match parts[..] {
            [x, y, w, h] => Ok(Bbox::new(x, y, w, h)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosaicAnnotation {
    /// Id of the high-fidelity source image.
    pub id: String,
    pub bbox: Bbox,
    /// 1 if the source image shows any disease.
    pub sick: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicItem {
    pub image: Image,
    /// Plant tiles in row-major grid order.
    pub annotations: Vec<MosaicAnnotation>,
    pub spec: MosaicSpec,
}

impl MosaicItem {
    pub fn soil_count(&self) -> usize {
        self.spec.cell_count() - self.annotations.len()
    }

    /// Grid cell `(row, col)` of a tile-aligned bbox.
    pub fn cell_of(&self, bbox: &Bbox) -> (u32, u32) {
        (bbox.y / self.spec.tile_h, bbox.x / self.spec.tile_w)
    }

    /// Per-cell annotation index, row-major; `None` marks soil.
    pub fn occupancy(&self) -> Vec<Option<usize>> {
        let mut cells = vec![None; self.spec.cell_count()];
        for (k, a) in self.annotations.iter().enumerate() {
            let (row, col) = self.cell_of(&a.bbox);
            cells[(row * self.spec.grid_cols + col) as usize] = Some(k);
        }
        cells
    }

    pub fn sick_count(&self) -> usize {
        self.annotations.iter().filter(|a| a.sick == 1).count()
    }
}

pub fn cell_bbox(row: u32, col: u32, spec: &MosaicSpec) -> Result<Bbox, MosaicError> {
    if row >= spec.grid_rows || col >= spec.grid_cols {
        return Err(MosaicError::OutOfBounds {
            row,
            col,
            rows: spec.grid_rows,
            cols: spec.grid_cols,
        });
    }
    Ok(Bbox::new(col * spec.tile_w, row * spec.tile_h, spec.tile_w, spec.tile_h))
}

/// High-fidelity images resampled once to tile size.
#[derive(Debug, Clone)]
pub struct TilePool {
    tile_w: u32,
    tile_h: u32,
    tiles: Vec<(HighFidelityRecord, Image)>,
}

impl TilePool {
    /// Load and bilinearly resample every record's image to the spec's tile size.
    pub fn prepare(
        records: &[HighFidelityRecord],
        pixels: &dyn PixelSource,
        spec: &MosaicSpec,
    ) -> Result<Self, MosaicError> {
        let resample = |r: &HighFidelityRecord| -> Result<(HighFidelityRecord, Image), MosaicError> {
            let img = pixels.load(&r.image_id)?;
            Ok((r.clone(), resample_tile(&img, spec.tile_w, spec.tile_h)))
        };
        #[cfg(feature = "parallel")]
        let tiles = {
            use rayon::prelude::*;
            records.par_iter().map(resample).collect::<Result<Vec<_>, _>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let tiles = records.iter().map(resample).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            tile_w: spec.tile_w,
            tile_h: spec.tile_h,
            tiles,
        })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[(HighFidelityRecord, Image)] {
        &self.tiles
    }

    pub fn tile(&self, image_id: &str) -> Option<&Image> {
        self.tiles.iter().find(|(r, _)| r.image_id == image_id).map(|(_, t)| t)
    }
}

pub fn resample_tile(img: &Image, tile_w: u32, tile_h: u32) -> Image {
    if img.dimensions() == (tile_w, tile_h) {
        img.clone()
    } else {
        imageops::resize(img, tile_w, tile_h, FilterType::Triangle)
    }
}

pub fn generate_mosaic(
    pool: &TilePool,
    soil_texture: &Image,
    spec: &MosaicSpec,
) -> Result<MosaicItem, MosaicError> {
    spec.validate()?;
    if pool.is_empty() {
        return Err(MosaicError::EmptyPool);
    }
    if (pool.tile_w, pool.tile_h) != (spec.tile_w, spec.tile_h) {
        return Err(MosaicError::InvalidSpec(format!(
            "pool tiles are {}x{}, spec wants {}x{}",
            pool.tile_w, pool.tile_h, spec.tile_w, spec.tile_h
        )));
    }
    let (tex_w, tex_h) = soil_texture.dimensions();
    if tex_w < spec.tile_w || tex_h < spec.tile_h {
        return Err(MosaicError::TextureTooSmall {
            got: (tex_w, tex_h),
            need: (spec.tile_w, spec.tile_h),
        });
    }

    let p_soil = spec.soil_ratio.probability();
    let mut rng = rng::stream(spec.rng_seed, &[]);
    let mut canvas = Image::new(spec.width_px, spec.height_px);
    let mut annotations = Vec::with_capacity(spec.cell_count());
    for row in 0..spec.grid_rows {
        for col in 0..spec.grid_cols {
            let bbox = cell_bbox(row, col, spec)?;
            if p_soil > 0.0 && rng.gen_bool(p_soil) {
                let sx = rng.gen_range(0..=tex_w - spec.tile_w);
                let sy = rng.gen_range(0..=tex_h - spec.tile_h);
                let slice = imageops::crop_imm(soil_texture, sx, sy, spec.tile_w, spec.tile_h);
                imageops::replace(&mut canvas, &*slice, i64::from(bbox.x), i64::from(bbox.y));
            } else {
                let (record, tile) = &pool.tiles[rng.gen_range(0..pool.len())];
                imageops::replace(&mut canvas, tile, i64::from(bbox.x), i64::from(bbox.y));
                annotations.push(MosaicAnnotation {
                    id: record.image_id.clone(),
                    bbox,
                    sick: record.label.sick_flag(),
                });
            }
        }
    }
    Ok(MosaicItem {
        image: canvas,
        annotations,
        spec: *spec,
    })
}

/// Spec of mosaic `index` in a batch seeded by `spec.rng_seed`.
pub fn batch_spec(spec: &MosaicSpec, index: usize) -> MosaicSpec {
    MosaicSpec {
        rng_seed: rng::derive_seed(spec.rng_seed, &[index as u64]),
        ..*spec
    }
}

/// `count` mosaics with per-index streams; output is order-independent.
pub fn generate_batch(
    pool: &TilePool,
    soil_texture: &Image,
    spec: &MosaicSpec,
    count: usize,
) -> Result<Vec<MosaicItem>, MosaicError> {
    let one = |k: usize| generate_mosaic(pool, soil_texture, &batch_spec(spec, k));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(one).collect()
    }
}

pub fn write_annotations(annotations: &[MosaicAnnotation]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer
        .write_record(ANNOTATION_HEADER.split(','))
        .expect("writing to a Vec cannot fail");
    for a in annotations {
        writer
            .write_record([a.id.as_str(), &a.bbox.to_string(), &a.sick.to_string()])
            .expect("writing to a Vec cannot fail");
    }
    let bytes = writer.into_inner().expect("flushing a Vec cannot fail");
    String::from_utf8(bytes).expect("csv output of utf-8 input is utf-8")
}

pub fn parse_annotations(text: &str) -> Result<Vec<MosaicAnnotation>, MosaicError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| MosaicError::Format("missing header".into()))?
        .map_err(|e| MosaicError::Format(e.to_string()))?;
    let header = header.iter().collect::<Vec<_>>().join(",");
    if header != ANNOTATION_HEADER {
        return Err(MosaicError::Format(format!("unexpected header `{header}`")));
    }
    rows.map(|row| {
        let row = row.map_err(|e| MosaicError::Format(e.to_string()))?;
        if row.len() != 3 {
            return Err(MosaicError::Format(format!("expected 3 fields, found {}", row.len())));
        }
        let sick = match &row[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(MosaicError::Format(format!("bad sick flag `{other}`"))),
        };
        Ok(MosaicAnnotation {
            id: row[0].to_string(),
            bbox: row[1].parse()?,
            sick,
        })
    })
    .collect()
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>, MosaicError> {
    let mut out = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        image.as_raw(),
        image.width(),
        image.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<Image, MosaicError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

/// Write `train_<k>.png` and `train_<k>.csv` into `dir`.
pub fn write_pair(dir: &Path, k: usize, item: &MosaicItem) -> Result<(), MosaicError> {
    std::fs::write(dir.join(format!("train_{k}.png")), encode_png(&item.image)?)?;
    std::fs::write(dir.join(format!("train_{k}.csv")), write_annotations(&item.annotations))?;
    Ok(())
}

/// Read a PNG+CSV pair back into a mosaic with the given geometry.
pub fn read_pair(png: &Path, csv: &Path, spec: &MosaicSpec) -> Result<MosaicItem, MosaicError> {
    let image = decode_png(&std::fs::read(png)?)?;
    if image.dimensions() != (spec.width_px, spec.height_px) {
        return Err(MosaicError::InvalidSpec(format!(
            "{} is {:?}, expected {}x{}",
            png.display(),
            image.dimensions(),
            spec.width_px,
            spec.height_px
        )));
    }
    let annotations = parse_annotations(&std::fs::read_to_string(csv)?)?;
    for a in &annotations {
        if a.bbox.w != spec.tile_w
            || a.bbox.h != spec.tile_h
            || a.bbox.x % spec.tile_w != 0
            || a.bbox.y % spec.tile_h != 0
            || a.bbox.x + a.bbox.w > spec.width_px
            || a.bbox.y + a.bbox.h > spec.height_px
        {
            return Err(MosaicError::Format(format!("bbox {} is not a grid tile", a.bbox)));
        }
    }
    Ok(MosaicItem {
        image,
        annotations,
        spec: *spec,
    })
}

/// Every `train_<k>.png`/`train_<k>.csv` pair in `dir`, ordered by `k`.
pub fn list_pairs(dir: &Path) -> Result<Vec<(usize, std::path::PathBuf, std::path::PathBuf)>, MosaicError> {
    let mut pairs = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(k) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("train_"))
            .and_then(|n| n.strip_suffix(".png"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        let csv = dir.join(format!("train_{k}.csv"));
        if csv.is_file() {
            pairs.push((k, path, csv));
        }
    }
    pairs.sort_by_key(|p| p.0);
    Ok(pairs)
}

fn lattice_noise(width: u32, height: u32, cell: u32, seed: u64) -> Vec<f64> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh)
        .map(|k| rng::unit(seed, &[u64::from(k)]))
        .collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            let (gx, gy) = (x / cell, y / cell);
            let tx = smooth(f64::from(x % cell) / f64::from(cell));
            let ty = smooth(f64::from(y % cell) / f64::from(cell));
            let at = |i: u32, j: u32| lattice[(j * gw + i) as usize];
            let top = at(gx, gy) * (1.0 - tx) + at(gx + 1, gy) * tx;
            let bottom = at(gx, gy + 1) * (1.0 - tx) + at(gx + 1, gy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Seeded value-noise texture in brown soil hues.
pub fn procedural_soil_texture(width: u32, height: u32, seed: u64) -> Image {
    let coarse = lattice_noise(width, height, 32, rng::derive_seed(seed, &[0]));
    let fine = lattice_noise(width, height, 6, rng::derive_seed(seed, &[1]));
    let grain_seed = rng::derive_seed(seed, &[2]);
    Image::from_fn(width, height, |x, y| {
        let k = (y * width + x) as usize;
        let grain = rng::unit(grain_seed, &[k as u64]);
        let v = 0.55 + 0.35 * coarse[k] + 0.2 * fine[k] + 0.1 * grain;
        let shade = |base: f64| (base * v).round().clamp(0.0, 255.0) as u8;
        Rgb([shade(120.0), shade(86.0), shade(56.0)])
    })
}

/// Seeded stand-in for a close-up leaf photo of the given class: green foliage,
/// orange pustules for rust, dark olive lesions for scab, both for multiple.
pub fn procedural_leaf(width: u32, height: u32, class: DiseaseClass, seed: u64) -> Image {
    let texture = lattice_noise(width, height, 12, rng::derive_seed(seed, &[0]));
    let mut img = Image::from_fn(width, height, |x, y| {
        let v = 0.7 + 0.4 * texture[(y * width + x) as usize];
        let shade = |base: f64| (base * v).round().clamp(0.0, 255.0) as u8;
        Rgb([shade(62.0), shade(138.0), shade(48.0)])
    });
    let mut spots = rng::stream(seed, &[1]);
    let mut blot = |img: &mut Image, color: [u8; 3], count: u32, max_r: f64| {
        for _ in 0..count {
            let cx = spots.gen_range(0.0..f64::from(width));
            let cy = spots.gen_range(0.0..f64::from(height));
            let r = spots.gen_range(1.5..max_r);
            for y in 0..height {
                for x in 0..width {
                    let d = ((f64::from(x) - cx).powi(2) + (f64::from(y) - cy).powi(2)).sqrt();
                    if d <= r {
                        img.put_pixel(x, y, Rgb(color));
                    }
                }
            }
        }
    };
    let scale = f64::from(width.min(height));
    match class {
        DiseaseClass::Healthy => {}
        DiseaseClass::Rust => blot(&mut img, [214, 120, 28], 9, scale * 0.09),
        DiseaseClass::Scab => blot(&mut img, [70, 62, 30], 6, scale * 0.14),
        DiseaseClass::MultipleDiseases => {
            blot(&mut img, [214, 120, 28], 5, scale * 0.08);
            blot(&mut img, [70, 62, 30], 4, scale * 0.12);
        }
    }
    img
}

/// Procedural demo corpus (`demo_<k>.png`, classes cycling) for running the
/// generator without the real dataset.
pub fn demo_corpus(count: usize, seed: u64) -> (Vec<HighFidelityRecord>, crate::corpus::InMemoryImages) {
    let mut images = crate::corpus::InMemoryImages::new();
    let records = (0..count)
        .map(|k| {
            let class = DiseaseClass::ALL[k % 4];
            let id = format!("demo_{k}.png");
            images.insert(id.clone(), procedural_leaf(96, 64, class, rng::derive_seed(seed, &[k as u64])));
            HighFidelityRecord::new(id, class)
        })
        .collect();
    (records, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::InMemoryImages;
    use proptest::prelude::*;

    #[test]
    fn cell_boxes() {
        let spec = MosaicSpec::default();
        assert_eq!(cell_bbox(0, 1, &spec).unwrap(), Bbox::new(64, 0, 64, 43));
        assert_eq!(cell_bbox(0, 0, &spec).unwrap(), Bbox::new(0, 0, 64, 43));
        // 27 * 64 = 1728, 27 * 43 = 1161
        assert_eq!(cell_bbox(27, 27, &spec).unwrap(), Bbox::new(1728, 1161, 64, 43));
        assert!(matches!(cell_bbox(28, 0, &spec), Err(MosaicError::OutOfBounds { .. })));
        assert!(matches!(cell_bbox(0, 28, &spec), Err(MosaicError::OutOfBounds { .. })));
    }

    #[test]
    fn default_spec_geometry_is_consistent() {
        let spec = MosaicSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.cell_count(), 784);
        assert!((spec.soil_ratio.probability() - 1.0 / 6.0).abs() < 1e-15);
        let bad = MosaicSpec {
            width_px: 1790,
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn annotation_rows_match_table_format() {
        let rows = vec![
            MosaicAnnotation {
                id: "Train_1609.jpg".into(),
                bbox: Bbox::new(64, 0, 64, 43),
                sick: 1,
            },
            MosaicAnnotation {
                id: "Train_1082.jpg".into(),
                bbox: Bbox::new(256, 0, 64, 43),
                sick: 0,
            },
        ];
        assert_eq!(
            write_annotations(&rows),
            "id,bbox,class label\nTrain_1609.jpg,\"[64, 0, 64, 43]\",1\nTrain_1082.jpg,\"[256, 0, 64, 43]\",0\n"
        );
        assert_eq!(write_annotations(&[]), "id,bbox,class label\n");
        assert_eq!(parse_annotations(&write_annotations(&rows)).unwrap(), rows);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(parse_annotations("").is_err());
        assert!(parse_annotations("id,box,label\n").is_err());
        assert!(parse_annotations("id,bbox,class label\na.jpg,\"[1, 2, 3]\",1\n").is_err());
        assert!(parse_annotations("id,bbox,class label\na.jpg,\"[1, 2, 3, 4]\",2\n").is_err());
    }

    fn small_pool(spec: &MosaicSpec) -> TilePool {
        let (records, images) = demo_corpus(8, 1);
        TilePool::prepare(&records, &images, spec).unwrap()
    }

    #[test]
    fn mosaic_tiles_are_exact_copies_and_partition_the_grid() {
        let spec = MosaicSpec {
            rng_seed: 11,
            ..MosaicSpec::with_grid(6, 5, 16, 11)
        };
        let pool = small_pool(&spec);
        let soil = procedural_soil_texture(80, 60, 3);
        let item = generate_mosaic(&pool, &soil, &spec).unwrap();
        assert_eq!(item.image.dimensions(), (96, 55));
        assert_eq!(item.annotations.len() + item.soil_count(), 30);
        for a in &item.annotations {
            let tile = pool.tile(&a.id).unwrap();
            let placed = imageops::crop_imm(&item.image, a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h).to_image();
            assert_eq!(&placed, tile);
        }
        for (i, a) in item.annotations.iter().enumerate() {
            for b in &item.annotations[i + 1..] {
                assert!(!a.bbox.overlaps(&b.bbox));
            }
        }
        // row-major ordering
        let keys: Vec<_> = item.annotations.iter().map(|a| (a.bbox.y, a.bbox.x)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn zero_soil_fills_every_cell() {
        let spec = MosaicSpec {
            soil_ratio: SoilRatio::NONE,
            ..MosaicSpec::with_grid(4, 3, 8, 6)
        };
        let item = generate_mosaic(&small_pool(&spec), &procedural_soil_texture(8, 6, 0), &spec).unwrap();
        assert_eq!(item.annotations.len(), 12);
    }

    #[test]
    fn generation_errors() {
        let spec = MosaicSpec::with_grid(4, 3, 8, 6);
        let empty = TilePool::prepare(&[], &InMemoryImages::new(), &spec).unwrap();
        assert!(matches!(
            generate_mosaic(&empty, &procedural_soil_texture(8, 6, 0), &spec),
            Err(MosaicError::EmptyPool)
        ));
        assert!(matches!(
            generate_mosaic(&small_pool(&spec), &procedural_soil_texture(7, 6, 0), &spec),
            Err(MosaicError::TextureTooSmall { .. })
        ));
    }

    #[test]
    fn seeds_control_output() {
        let spec = MosaicSpec::with_grid(5, 5, 10, 7);
        let pool = small_pool(&spec);
        let soil = procedural_soil_texture(40, 40, 9);
        let a = generate_mosaic(&pool, &soil, &MosaicSpec { rng_seed: 5, ..spec }).unwrap();
        let b = generate_mosaic(&pool, &soil, &MosaicSpec { rng_seed: 5, ..spec }).unwrap();
        let c = generate_mosaic(&pool, &soil, &MosaicSpec { rng_seed: 6, ..spec }).unwrap();
        assert_eq!(encode_png(&a.image).unwrap(), encode_png(&b.image).unwrap());
        assert_eq!(a.annotations, b.annotations);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn png_pair_round_trip() {
        let spec = MosaicSpec::with_grid(4, 4, 8, 6);
        let item = generate_mosaic(&small_pool(&spec), &procedural_soil_texture(16, 16, 0), &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), 3, &item).unwrap();
        let pairs = list_pairs(dir.path()).unwrap();
        assert_eq!(pairs.len(), 1);
        let back = read_pair(&pairs[0].1, &pairs[0].2, &spec).unwrap();
        assert_eq!(back, item);
    }

    #[test]
    fn soil_texture_is_seeded() {
        assert_eq!(procedural_soil_texture(20, 10, 1), procedural_soil_texture(20, 10, 1));
        assert_ne!(procedural_soil_texture(20, 10, 1), procedural_soil_texture(20, 10, 2));
    }

    fn arb_annotation() -> impl Strategy<Value = MosaicAnnotation> {
        ("[A-Za-z0-9_]{1,12}\\.jpg", 0u32..28, 0u32..28, 0u8..2).prop_map(|(id, r, c, sick)| MosaicAnnotation {
            id,
            bbox: Bbox::new(c * 64, r * 43, 64, 43),
            sick,
        })
    }

    proptest! {
        #[test]
        fn annotation_table_round_trip(rows in prop::collection::vec(arb_annotation(), 0..40)) {
            prop_assert_eq!(parse_annotations(&write_annotations(&rows)).unwrap(), rows);
        }
    }
}
