//! The two-step identifier → classifier flow, simulated over synthetic
//! mosaics.
//!
//! The identifier proposes boxes on a mosaic; each box is resolved to the grid
//! tile it overlaps most, and the tile's *original* high-fidelity image is
//! handed to the classifier (standing in for the drone's close-up photo). A
//! sick tile counts as correctly diagnosed end to end only if it was
//! identified and then classified to its true class.
//!
//! Identifier accuracy for the oracle models is recall over sick tiles.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DiseaseClass, HighFidelityRecord, PixelSource};
use crate::fusion::{corner_iou, priority_order, tta_fuse, Detector, FusionError, ModelError, ScoredBox, TtaKind, TtaTransform};
use crate::metrics::{
    accuracy, confidence_summary, match_detections, pipeline_bounds, ConfidenceSummary, ConfusionMatrix,
    PipelineAccuracyBounds,
};
use crate::mosaic::{cell_bbox, MosaicAnnotation, MosaicItem, MosaicSpec};
use crate::{rng, Image};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no mosaics to run")]
    NoFields,
    #[error("mosaic {field}: identifier failed: {source}")]
    Identifier {
        field: usize,
        #[source]
        source: ModelError,
    },
    #[error("mosaic {field}, tile ({row}, {col}): classifier failed: {source}")]
    Classifier {
        field: usize,
        row: u32,
        col: u32,
        #[source]
        source: ModelError,
    },
    #[error("mosaic {field}, tile ({row}, {col}): classifier returned invalid probabilities {probs:?}")]
    BadProbabilities {
        field: usize,
        row: u32,
        col: u32,
        probs: [f64; 4],
    },
    #[error("image `{0}` has no ground-truth label")]
    UnknownImage(String),
    #[error("cannot train baseline: no {0} examples")]
    MissingClass(DiseaseClass),
    #[error("invalid rate {name} = {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Identity of a grid tile across the whole run, used to key per-tile
/// random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileKey {
    pub field: u64,
    pub row: u32,
    pub col: u32,
}

impl TileKey {
    fn path(&self, slot: u64) -> [u64; 4] {
        [self.field, u64::from(self.row), u64::from(self.col), slot]
    }
}

/// Proposes potentially diseased regions (label 1) on a mosaic.
pub trait IdentifierModel: Sync {
    fn identify(&self, field: &MosaicItem, field_index: u64) -> Result<Vec<ScoredBox>, ModelError>;

    /// Whether the runner may call this model from several threads at once.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// A close-up photo request: the original image id plus lazy pixel access.
pub struct CloseUp<'a> {
    pub image_id: &'a str,
    pub tile: TileKey,
    pixels: &'a dyn PixelSource,
}

impl<'a> CloseUp<'a> {
    pub fn new(image_id: &'a str, tile: TileKey, pixels: &'a dyn PixelSource) -> Self {
        Self { image_id, tile, pixels }
    }

    pub fn load(&self) -> Result<Image, ModelError> {
        self.pixels.load(self.image_id).map_err(|e| ModelError(e.to_string()))
    }
}

/// Probability vector over `DiseaseClass::ALL` for a close-up image.
pub trait ClassifierModel: Sync {
    fn classify(&self, closeup: &CloseUp<'_>) -> Result<[f64; 4], ModelError>;

    fn concurrent_safe(&self) -> bool {
        true
    }
}

fn check_rate(name: &'static str, value: f64) -> Result<f64, PipelineError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(PipelineError::InvalidRate { name, value })
    }
}

/// Ground-truth-backed identifier with controllable misses and false alarms.
///
/// Detections score uniform in `[0.5, 1]`, false alarms uniform in
/// `[0, 0.5]`. The miss decision for a tile uses the draw `unit(seed, tile, 0)`;
/// an [`OracleClassifier`] sharing the seed and with `error_rate <= miss_rate`
/// therefore only errs on tiles this identifier missed.
#[derive(Debug, Clone)]
pub struct OracleIdentifier {
    pub miss_rate: f64,
    pub false_alarm_rate: f64,
    pub seed: u64,
}

pub fn oracle_identifier(miss_rate: f64, false_alarm_rate: f64, seed: u64) -> Result<OracleIdentifier, PipelineError> {
    Ok(OracleIdentifier {
        miss_rate: check_rate("miss_rate", miss_rate)?,
        false_alarm_rate: check_rate("false_alarm_rate", false_alarm_rate)?,
        seed,
    })
}

impl IdentifierModel for OracleIdentifier {
    fn identify(&self, field: &MosaicItem, field_index: u64) -> Result<Vec<ScoredBox>, ModelError> {
        let spec = &field.spec;
        let occupancy = field.occupancy();
        let mut boxes = Vec::new();
        for row in 0..spec.grid_rows {
            for col in 0..spec.grid_cols {
                let key = TileKey { field: field_index, row, col };
                let sick = occupancy[(row * spec.grid_cols + col) as usize]
                    .is_some_and(|k| field.annotations[k].sick == 1);
                let score = if sick {
                    if rng::unit(self.seed, &key.path(0)) < self.miss_rate {
                        continue;
                    }
                    0.5 + 0.5 * rng::unit(self.seed, &key.path(1))
                } else {
                    if rng::unit(self.seed, &key.path(2)) >= self.false_alarm_rate {
                        continue;
                    }
                    0.5 * rng::unit(self.seed, &key.path(3))
                };
                let bbox = cell_bbox(row, col, spec).map_err(|e| ModelError(e.to_string()))?;
                boxes.push(ScoredBox {
                    corners: bbox.corners(),
                    score,
                    label: 1,
                });
            }
        }
        Ok(boxes)
    }
}

/// Returns the one-hot truth with probability `1 - error_rate`, otherwise a
/// one-hot vector on one of the three wrong classes chosen uniformly.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    pub error_rate: f64,
    pub seed: u64,
    truth: HashMap<String, DiseaseClass>,
}

pub fn oracle_classifier(
    error_rate: f64,
    seed: u64,
    truth: &[HighFidelityRecord],
) -> Result<OracleClassifier, PipelineError> {
    Ok(OracleClassifier {
        error_rate: check_rate("error_rate", error_rate)?,
        seed,
        truth: crate::corpus::label_index(truth),
    })
}

impl ClassifierModel for OracleClassifier {
    fn classify(&self, closeup: &CloseUp<'_>) -> Result<[f64; 4], ModelError> {
        let truth = *self
            .truth
            .get(closeup.image_id)
            .ok_or_else(|| ModelError(format!("no ground truth for `{}`", closeup.image_id)))?;
        let mut probs = [0.0; 4];
        let answer = if rng::unit(self.seed, &closeup.tile.path(0)) < self.error_rate {
            let wrong: Vec<DiseaseClass> = DiseaseClass::ALL.into_iter().filter(|&c| c != truth).collect();
            let pick = (rng::unit(self.seed, &closeup.tile.path(4)) * wrong.len() as f64) as usize;
            wrong[pick.min(wrong.len() - 1)]
        } else {
            truth
        };
        probs[answer.index()] = 1.0;
        Ok(probs)
    }
}

const HIST_BINS: usize = 8;
const FEATURES: usize = 3 * HIST_BINS;

/// Per-channel colour histogram, each channel normalized to sum 1.
pub fn color_histogram(image: &Image) -> [f64; FEATURES] {
    let mut hist = [0.0; FEATURES];
    for px in image.pixels() {
        for (c, &v) in px.0.iter().enumerate() {
            hist[c * HIST_BINS + usize::from(v) * HIST_BINS / 256] += 1.0;
        }
    }
    let n = (image.width() * image.height()).max(1) as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

/// Nearest-centroid classifier over colour histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineClassifier {
    centroids: Vec<[f64; FEATURES]>,
    temperature: f64,
}

pub fn baseline_classifier(
    training: &[HighFidelityRecord],
    pixels: &dyn PixelSource,
) -> Result<BaselineClassifier, PipelineError> {
    let mut sums = vec![[0.0; FEATURES]; 4];
    let mut counts = [0usize; 4];
    for record in training {
        let features = color_histogram(&pixels.load(&record.image_id)?);
        let k = record.label.index();
        counts[k] += 1;
        for (s, f) in sums[k].iter_mut().zip(features) {
            *s += f;
        }
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(PipelineError::MissingClass(DiseaseClass::ALL[k]));
    }
    for (sum, n) in sums.iter_mut().zip(counts) {
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(BaselineClassifier {
        centroids: sums,
        temperature: 0.05,
    })
}

impl BaselineClassifier {
    pub fn predict(&self, image: &Image) -> [f64; 4] {
        let features = color_histogram(image);
        let dist: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| c.iter().zip(&features).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        let nearest = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = dist.iter().map(|d| (-(d - nearest) / self.temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        std::array::from_fn(|k| weights[k] / total)
    }
}

impl ClassifierModel for BaselineClassifier {
    fn classify(&self, closeup: &CloseUp<'_>) -> Result<[f64; 4], ModelError> {
        Ok(self.predict(&closeup.load()?))
    }
}

/// Detector that classifies every grid tile of a mosaic-shaped image with a
/// [`BaselineClassifier`] and flags tiles whose diseased probability
/// (`1 - p(healthy)`) reaches `threshold`.
#[derive(Debug, Clone)]
pub struct TileGridDetector {
    pub classifier: BaselineClassifier,
    pub spec: MosaicSpec,
    pub threshold: f64,
}

impl Detector for TileGridDetector {
    fn detect(&self, image: &Image) -> Result<Vec<ScoredBox>, ModelError> {
        let s = &self.spec;
        if image.dimensions() != (s.width_px, s.height_px) {
            return Err(ModelError(format!(
                "expected a {}x{} image, got {:?}",
                s.width_px,
                s.height_px,
                image.dimensions()
            )));
        }
        let mut boxes = Vec::new();
        for row in 0..s.grid_rows {
            for col in 0..s.grid_cols {
                let b = cell_bbox(row, col, s).map_err(|e| ModelError(e.to_string()))?;
                let tile = image::imageops::crop_imm(image, b.x, b.y, b.w, b.h).to_image();
                let probs = self.classifier.predict(&tile);
                let sick = 1.0 - probs[DiseaseClass::Healthy.index()];
                if sick >= self.threshold {
                    boxes.push(ScoredBox {
                        corners: b.corners(),
                        score: sick.clamp(0.0, 1.0),
                        label: 1,
                    });
                }
            }
        }
        Ok(boxes)
    }
}

/// Adapts an image [`Detector`] into an identifier, optionally through TTA.
pub struct DetectorIdentifier<D> {
    pub detector: D,
    /// Transforms and WBF IoU threshold; `None` runs the detector once.
    pub tta: Option<(Vec<TtaKind>, f64)>,
}

impl<D: Detector> IdentifierModel for DetectorIdentifier<D> {
    fn identify(&self, field: &MosaicItem, _field_index: u64) -> Result<Vec<ScoredBox>, ModelError> {
        match &self.tta {
            None => self.detector.detect(&field.image),
            Some((kinds, iou)) => {
                let (w, h) = field.image.dimensions();
                let transforms: Vec<_> = kinds.iter().map(|&k| TtaTransform::new(k, w, h)).collect();
                tta_fuse(&self.detector, &field.image, &transforms, *iou).map_err(|e| match e {
                    FusionError::Model { source, transform } => ModelError(format!("{transform:?}: {source}")),
                    other => ModelError(other.to_string()),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub row: u32,
    pub col: u32,
    pub annotation: MosaicAnnotation,
    /// Index of the box that resolved to this tile.
    pub box_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub resolved: Vec<Candidate>,
    /// Boxes matching no plant tile at the threshold.
    pub unresolvable: Vec<usize>,
}

/// Resolve each box to the grid tile of maximal IoU (first in row-major order
/// on ties). Boxes whose best tile is soil or below `iou_threshold` are
/// unresolvable; several boxes on one tile collapse to the highest-priority one.
pub fn crop_candidates(item: &MosaicItem, boxes: &[ScoredBox], iou_threshold: f64) -> CandidateSet {
    let spec = &item.spec;
    let occupancy = item.occupancy();
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| priority_order(&boxes[a], &boxes[b]).then(a.cmp(&b)));

    let cell_range = |lo: f64, hi: f64, size: u32, n: u32| -> (u32, u32) {
        let first = (lo / f64::from(size)).floor().max(0.0) as u32;
        let last = ((hi / f64::from(size)).ceil().max(0.0) as u32).min(n);
        (first.min(n), last)
    };

    let mut out = CandidateSet::default();
    let mut seen = HashSet::new();
    for k in order {
        let b = &boxes[k];
        let (c0, c1) = cell_range(b.corners[0], b.corners[2], spec.tile_w, spec.grid_cols);
        let (r0, r1) = cell_range(b.corners[1], b.corners[3], spec.tile_h, spec.grid_rows);
        let mut best: Option<(u32, u32, f64)> = None;
        for row in r0..r1 {
            for col in c0..c1 {
                let cell = cell_bbox(row, col, spec).expect("range clipped to grid");
                let overlap = corner_iou(&b.corners, &cell.corners());
                if overlap > 0.0 && best.is_none_or(|(_, _, o)| overlap > o) {
                    best = Some((row, col, overlap));
                }
            }
        }
        let resolved = best
            .filter(|&(_, _, o)| o >= iou_threshold)
            .and_then(|(row, col, _)| occupancy[(row * spec.grid_cols + col) as usize].map(|a| (row, col, a)));
        match resolved {
            Some((row, col, a)) => {
                if seen.insert((row, col)) {
                    out.resolved.push(Candidate {
                        row,
                        col,
                        annotation: item.annotations[a].clone(),
                        box_index: k,
                        score: b.score,
                    });
                }
            }
            None => out.unresolvable.push(k),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Minimum IoU for a box to resolve to a tile.
    pub crop_iou: f64,
    /// Minimum IoU for a box to count as a positive detection.
    pub match_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            crop_iou: 0.5,
            match_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileDiagnosis {
    pub field: usize,
    pub row: u32,
    pub col: u32,
    pub image_id: String,
    pub truth: DiseaseClass,
    pub sick: bool,
    pub identified: bool,
    pub predicted: Option<DiseaseClass>,
    pub confidence: Option<f64>,
    /// Sick tile identified and classified to its true class.
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifierReport {
    pub confidence: ConfidenceSummary,
    /// Recall over sick tiles.
    pub accuracy: f64,
    pub sick_tiles: usize,
    pub identified: usize,
    pub unresolvable_boxes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub fields: usize,
    pub diagnoses: Vec<TileDiagnosis>,
    pub identifier: IdentifierReport,
    pub classifier_confusion: ConfusionMatrix,
    pub classifier_accuracy: Option<f64>,
    pub end_to_end_accuracy: f64,
    pub bounds: Option<PipelineAccuracyBounds>,
}

struct FieldOutcome {
    diagnoses: Vec<TileDiagnosis>,
    confidence: ConfidenceSummary,
    sick: usize,
    identified: usize,
    unresolvable: usize,
}

fn argmax(probs: &[f64; 4]) -> usize {
    (1..4).fold(0, |best, k| if probs[k] > probs[best] { k } else { best })
}

fn valid_probabilities(p: &[f64; 4]) -> bool {
    p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}

fn run_field(
    index: usize,
    item: &MosaicItem,
    identifier: &dyn IdentifierModel,
    classifier: &dyn ClassifierModel,
    labels: &HashMap<String, DiseaseClass>,
    pixels: &dyn PixelSource,
    cfg: &PipelineConfig,
) -> Result<FieldOutcome, PipelineError> {
    let boxes = identifier
        .identify(item, index as u64)
        .map_err(|source| PipelineError::Identifier { field: index, source })?;
    let confidence = confidence_summary(&match_detections(&boxes, &item.annotations, cfg.match_iou));
    let candidates = crop_candidates(item, &boxes, cfg.crop_iou);

    let mut classified: HashMap<(u32, u32), (DiseaseClass, f64)> = HashMap::new();
    for c in &candidates.resolved {
        let key = TileKey {
            field: index as u64,
            row: c.row,
            col: c.col,
        };
        let probs = classifier
            .classify(&CloseUp::new(&c.annotation.id, key, pixels))
            .map_err(|source| PipelineError::Classifier {
                field: index,
                row: c.row,
                col: c.col,
                source,
            })?;
        if !valid_probabilities(&probs) {
            return Err(PipelineError::BadProbabilities {
                field: index,
                row: c.row,
                col: c.col,
                probs,
            });
        }
        let k = argmax(&probs);
        classified.insert((c.row, c.col), (DiseaseClass::ALL[k], probs[k]));
    }

    let mut diagnoses = Vec::new();
    let (mut sick, mut identified) = (0, 0);
    for a in &item.annotations {
        let (row, col) = item.cell_of(&a.bbox);
        let truth = *labels
            .get(&a.id)
            .ok_or_else(|| PipelineError::UnknownImage(a.id.clone()))?;
        let is_sick = a.sick == 1;
        let verdict = classified.get(&(row, col)).copied();
        if !is_sick && verdict.is_none() {
            continue;
        }
        let correct = is_sick && verdict.is_some_and(|(p, _)| p == truth);
        if is_sick {
            sick += 1;
            identified += usize::from(verdict.is_some());
        }
        diagnoses.push(TileDiagnosis {
            field: index,
            row,
            col,
            image_id: a.id.clone(),
            truth,
            sick: is_sick,
            identified: verdict.is_some(),
            predicted: verdict.map(|v| v.0),
            confidence: verdict.map(|v| v.1),
            correct,
        });
    }
    Ok(FieldOutcome {
        diagnoses,
        confidence,
        sick,
        identified,
        unresolvable: candidates.unresolvable.len(),
    })
}

/// Run identifier and classifier over every mosaic and assemble the report.
///
/// Fields are processed in parallel when both models declare themselves
/// concurrent-safe, sequentially otherwise; results are identical either way.
pub fn run_pipeline(
    identifier: &dyn IdentifierModel,
    classifier: &dyn ClassifierModel,
    fields: &[MosaicItem],
    labels: &HashMap<String, DiseaseClass>,
    pixels: &dyn PixelSource,
    cfg: &PipelineConfig,
) -> Result<PipelineReport, PipelineError> {
    if fields.is_empty() {
        return Err(PipelineError::NoFields);
    }
    let one = |(k, item): (usize, &MosaicItem)| run_field(k, item, identifier, classifier, labels, pixels, cfg);
    let parallel = identifier.concurrent_safe() && classifier.concurrent_safe();
    let outcomes: Vec<FieldOutcome> = if parallel {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            fields.par_iter().enumerate().map(one).collect::<Result<_, _>>()?
        }
        #[cfg(not(feature = "parallel"))]
        {
            fields.iter().enumerate().map(one).collect::<Result<_, _>>()?
        }
    } else {
        fields.iter().enumerate().map(one).collect::<Result<_, _>>()?
    };

    let mut confusion = ConfusionMatrix::zeros(DiseaseClass::ALL.iter().map(|c| c.to_string()).collect());
    let mut confidence = ConfidenceSummary::default();
    let (mut sick, mut identified, mut unresolvable, mut correct) = (0usize, 0usize, 0usize, 0usize);
    let mut diagnoses = Vec::new();
    for o in outcomes {
        confidence = confidence.merge(&o.confidence);
        sick += o.sick;
        identified += o.identified;
        unresolvable += o.unresolvable;
        for d in &o.diagnoses {
            if let Some(p) = d.predicted {
                confusion.record(d.truth.index(), p.index());
            }
            correct += usize::from(d.correct);
        }
        diagnoses.extend(o.diagnoses);
    }

    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let identifier_accuracy = ratio(identified, sick);
    let classifier_accuracy = accuracy(&confusion).ok();
    let bounds = classifier_accuracy
        .map(|c| pipeline_bounds(identifier_accuracy, c))
        .transpose()
        .expect("ratios lie in [0, 1]");
    Ok(PipelineReport {
        fields: fields.len(),
        diagnoses,
        identifier: IdentifierReport {
            confidence,
            accuracy: identifier_accuracy,
            sick_tiles: sick,
            identified,
            unresolvable_boxes: unresolvable,
        },
        classifier_confusion: confusion,
        classifier_accuracy,
        end_to_end_accuracy: ratio(correct, sick),
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{label_index, InMemoryImages};
    use crate::mosaic::{demo_corpus, generate_mosaic, procedural_soil_texture, Bbox, TilePool};
    use image::Rgb;

    fn hand_item() -> MosaicItem {
        let spec = MosaicSpec::default();
        let ids = [("Train_1609.jpg", 1), ("Train_1028.jpg", 1), ("Train_354.jpg", 1), ("Train_1082.jpg", 0)];
        // cell (0, 0) is soil
        let annotations = ids
            .iter()
            .enumerate()
            .map(|(k, (id, sick))| MosaicAnnotation {
                id: id.to_string(),
                bbox: cell_bbox(0, k as u32 + 1, &spec).unwrap(),
                sick: *sick,
            })
            .collect();
        MosaicItem {
            image: Image::new(spec.width_px, spec.height_px),
            annotations,
            spec,
        }
    }

    fn boxed(b: Bbox, score: f64) -> ScoredBox {
        ScoredBox::new(b.corners(), score, 1).unwrap()
    }

    #[test]
    fn crop_resolves_tiles_to_source_ids() {
        let item = hand_item();
        let c = crop_candidates(&item, &[boxed(Bbox::new(64, 0, 64, 43), 0.9)], 0.5);
        assert_eq!(c.resolved.len(), 1);
        assert_eq!(c.resolved[0].annotation.id, "Train_1609.jpg");
        assert_eq!((c.resolved[0].row, c.resolved[0].col), (0, 1));

        let soil = crop_candidates(&item, &[boxed(Bbox::new(0, 0, 64, 43), 0.9)], 0.5);
        assert!(soil.resolved.is_empty());
        assert_eq!(soil.unresolvable, vec![0]);

        let nowhere = crop_candidates(&item, &[boxed(Bbox::new(600, 600, 10, 10), 0.9)], 0.5);
        assert_eq!(nowhere.unresolvable, vec![0]);
    }

    #[test]
    fn straddling_box_resolves_to_first_cell() {
        let item = hand_item();
        // covers (0, 1) and (0, 2) exactly: IoU 2752 / 5504 = 0.5 with each
        let b = boxed(Bbox::new(64, 0, 128, 43), 0.7);
        let half = corner_iou(&b.corners, &Bbox::new(64, 0, 64, 43).corners());
        assert_eq!(half, 0.5);
        let c = crop_candidates(&item, &[b], 0.5);
        assert_eq!(c.resolved.len(), 1);
        assert_eq!((c.resolved[0].row, c.resolved[0].col), (0, 1));
    }

    #[test]
    fn duplicate_boxes_collapse() {
        let item = hand_item();
        let boxes = [boxed(Bbox::new(64, 0, 64, 43), 0.4), boxed(Bbox::new(65, 1, 64, 43), 0.8)];
        let c = crop_candidates(&item, &boxes, 0.5);
        assert_eq!(c.resolved.len(), 1);
        assert_eq!(c.resolved[0].box_index, 1);
        assert!(c.unresolvable.is_empty());
    }

    fn fields(n: usize) -> (Vec<HighFidelityRecord>, InMemoryImages, Vec<MosaicItem>) {
        let spec = MosaicSpec::with_grid(10, 8, 12, 8);
        let (records, images) = demo_corpus(16, 2);
        let pool = TilePool::prepare(&records, &images, &spec).unwrap();
        let soil = procedural_soil_texture(40, 40, 0);
        let items = (0..n)
            .map(|k| generate_mosaic(&pool, &soil, &MosaicSpec { rng_seed: k as u64, ..spec }).unwrap())
            .collect();
        (records, images, items)
    }

    #[test]
    fn oracle_identifier_extremes() {
        let (_, _, items) = fields(2);
        let perfect = oracle_identifier(0.0, 0.0, 1).unwrap();
        for (k, item) in items.iter().enumerate() {
            let boxes = perfect.identify(item, k as u64).unwrap();
            let mut got: Vec<[f64; 4]> = boxes.iter().map(|b| b.corners).collect();
            let mut want: Vec<[f64; 4]> = item
                .annotations
                .iter()
                .filter(|a| a.sick == 1)
                .map(|a| a.bbox.corners())
                .collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, want);
            assert!(boxes.iter().all(|b| (0.5..=1.0).contains(&b.score)));
        }
        let blind = oracle_identifier(1.0, 0.0, 1).unwrap();
        assert!(blind.identify(&items[0], 0).unwrap().is_empty());
        let noisy = oracle_identifier(1.0, 1.0, 1).unwrap();
        let alarms = noisy.identify(&items[0], 0).unwrap();
        assert_eq!(alarms.len(), 80 - items[0].sick_count());
        assert!(alarms.iter().all(|b| b.score < 0.5));
        assert!(oracle_identifier(1.5, 0.0, 0).is_err());
    }

    #[test]
    fn oracle_classifier_extremes() {
        let (records, images, items) = fields(3);
        let labels = label_index(&records);
        let cfg = PipelineConfig::default();
        let id = oracle_identifier(0.0, 0.0, 5).unwrap();

        let right = oracle_classifier(0.0, 9, &records).unwrap();
        let report = run_pipeline(&id, &right, &items, &labels, &images, &cfg).unwrap();
        let cm = &report.classifier_confusion;
        assert!(cm.total() > 0);
        assert_eq!(cm.trace(), cm.total());
        assert_eq!(report.end_to_end_accuracy, 1.0);
        assert_eq!(report.identifier.accuracy, 1.0);
        let b = report.bounds.unwrap();
        assert_eq!((b.lower_bound, b.upper_bound), (1.0, 1.0));

        let wrong = oracle_classifier(1.0, 9, &records).unwrap();
        let report = run_pipeline(&id, &wrong, &items, &labels, &images, &cfg).unwrap();
        assert_eq!(report.classifier_confusion.trace(), 0);
        assert_eq!(report.end_to_end_accuracy, 0.0);
    }

    #[test]
    fn perfect_classifier_tracks_identifier_recall() {
        let (records, images, items) = fields(6);
        let labels = label_index(&records);
        let id = oracle_identifier(0.245, 0.0, 5).unwrap();
        let cls = oracle_classifier(0.0, 1, &records).unwrap();
        let report = run_pipeline(&id, &cls, &items, &labels, &images, &PipelineConfig::default()).unwrap();
        assert_eq!(report.end_to_end_accuracy, report.identifier.accuracy);
        assert!(report.identifier.accuracy < 1.0);
    }

    struct Serial<'a>(&'a OracleIdentifier);

    impl IdentifierModel for Serial<'_> {
        fn identify(&self, field: &MosaicItem, index: u64) -> Result<Vec<ScoredBox>, ModelError> {
            self.0.identify(field, index)
        }

        fn concurrent_safe(&self) -> bool {
            false
        }
    }

    #[test]
    fn serial_and_parallel_runs_agree() {
        let (records, images, items) = fields(5);
        let labels = label_index(&records);
        let id = oracle_identifier(0.3, 0.05, 5).unwrap();
        let cls = oracle_classifier(0.1, 2, &records).unwrap();
        let cfg = PipelineConfig::default();
        let parallel = run_pipeline(&id, &cls, &items, &labels, &images, &cfg).unwrap();
        let serial = run_pipeline(&Serial(&id), &cls, &items, &labels, &images, &cfg).unwrap();
        assert_eq!(parallel, serial);
        let b = parallel.bounds.unwrap();
        assert!(b.lower_bound <= b.independent_estimate && b.independent_estimate <= b.upper_bound);
    }

    #[test]
    fn failures_carry_context() {
        let (records, images, items) = fields(2);
        let labels = label_index(&records);
        let cfg = PipelineConfig::default();
        let id = oracle_identifier(0.0, 0.0, 5).unwrap();
        let no_truth = oracle_classifier(0.0, 1, &[]).unwrap();
        let err = run_pipeline(&id, &no_truth, &items, &labels, &images, &cfg).unwrap_err();
        assert!(matches!(err, PipelineError::Classifier { field: 0, .. }), "{err}");
        assert!(matches!(
            run_pipeline(&id, &no_truth, &[], &labels, &images, &cfg),
            Err(PipelineError::NoFields)
        ));
    }

    #[test]
    fn baseline_memorizes_one_image_per_class() {
        let mut images = InMemoryImages::new();
        let colors = [[40, 160, 40], [150, 90, 30], [220, 120, 20], [60, 60, 30]];
        let records: Vec<_> = DiseaseClass::ALL
            .iter()
            .zip(colors)
            .map(|(&c, rgb)| {
                let id = format!("{c}.png");
                images.insert(id.clone(), Image::from_pixel(10, 10, Rgb(rgb)));
                HighFidelityRecord::new(id, c)
            })
            .collect();
        let model = baseline_classifier(&records, &images).unwrap();
        for r in &records {
            let probs = model
                .classify(&CloseUp::new(&r.image_id, TileKey { field: 0, row: 0, col: 0 }, &images))
                .unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(argmax(&probs), r.label.index());
        }
        assert!(matches!(
            baseline_classifier(&records[..3], &images),
            Err(PipelineError::MissingClass(DiseaseClass::Scab))
        ));
    }

    #[test]
    fn tile_grid_detector_flags_diseased_tiles() {
        let (records, images, items) = fields(1);
        let model = baseline_classifier(&records, &images).unwrap();
        let detector = TileGridDetector {
            classifier: model,
            spec: items[0].spec,
            threshold: 0.5,
        };
        let boxes = detector.detect(&items[0].image).unwrap();
        assert!(!boxes.is_empty());
        let ident = DetectorIdentifier {
            detector,
            tta: Some((TtaKind::ALL.to_vec(), 0.55)),
        };
        let fused = ident.identify(&items[0], 0).unwrap();
        assert!(fused.iter().all(|b| b.validate().is_ok()));
        assert!(ident.detector.detect(&Image::new(3, 3)).is_err());
    }
}
