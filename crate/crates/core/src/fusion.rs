//! Detection post-processing: IoU, greedy NMS, weighted boxes fusion (WBF)
//! and test-time augmentation (TTA).

use std::cmp::Ordering;

use image::imageops;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Image;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid box {corners:?} with score {score}")]
    InvalidBox { corners: [f64; 4], score: f64 },
    #[error("box {corners:?} lies outside the {width}x{height} image")]
    OutOfImage {
        corners: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("TTA needs a non-empty transform list containing the identity")]
    MissingIdentity,
    #[error("model failed under {transform:?}: {source}")]
    Model {
        transform: TtaKind,
        #[source]
        source: ModelError,
    },
}

/// Failure reported by a detection or classification model.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ModelError(pub String);

/// Axis-aligned detection `[x1, y1, x2, y2]` with confidence and class id.
///
/// Serializes as `{"box": [x1, y1, x2, y2], "score": s, "label": l}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub corners: [f64; 4],
    pub score: f64,
    pub label: u32,
}

impl ScoredBox {
    pub fn new(corners: [f64; 4], score: f64, label: u32) -> Result<Self, FusionError> {
        let b = Self { corners, score, label };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let [x1, y1, x2, y2] = self.corners;
        if x1 < x2 && y1 < y2 && (0.0..=1.0).contains(&self.score) && self.corners.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(FusionError::InvalidBox {
                corners: self.corners,
                score: self.score,
            })
        }
    }

    pub fn area(&self) -> f64 {
        (self.corners[2] - self.corners[0]) * (self.corners[3] - self.corners[1])
    }
}

/// Score descending, then corners ascending, then label.
pub fn priority_order(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            a.corners
                .iter()
                .zip(&b.corners)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.label.cmp(&b.label))
}

pub fn iou(a: &ScoredBox, b: &ScoredBox) -> f64 {
    corner_iou(&a.corners, &b.corners)
}

pub fn corner_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    (inter / union).min(1.0)
}

/// Greedy same-label NMS: a box survives iff its IoU with every
/// higher-priority kept box of its label is at most `iou_threshold`.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(priority_order);
    let mut kept: Vec<ScoredBox> = Vec::with_capacity(sorted.len());
    for b in sorted {
        if kept
            .iter()
            .all(|k| k.label != b.label || iou(k, &b) <= iou_threshold)
        {
            kept.push(b);
        }
    }
    kept
}

struct Cluster {
    label: u32,
    members: Vec<ScoredBox>,
    fused: [f64; 4],
}

impl Cluster {
    fn new(b: ScoredBox) -> Self {
        Self {
            label: b.label,
            fused: b.corners,
            members: vec![b],
        }
    }

    fn push(&mut self, b: ScoredBox) {
        self.members.push(b);
        self.fused = weighted_corners(&self.members);
    }
}

fn weighted_corners(members: &[ScoredBox]) -> [f64; 4] {
    let weight: f64 = members.iter().map(|m| m.score).sum();
    if weight <= 0.0 {
        // all-zero scores: plain average
        let n = members.len() as f64;
        return std::array::from_fn(|i| members.iter().map(|m| m.corners[i]).sum::<f64>() / n);
    }
    std::array::from_fn(|i| members.iter().map(|m| m.score * m.corners[i]).sum::<f64>() / weight)
}

/// Weighted boxes fusion over several prediction lists.
///
/// Boxes are pooled and visited in priority order. Each joins the same-label
/// cluster whose running fused box it overlaps most (IoU ≥ threshold), or
/// starts a new one. A cluster fuses to the score-weighted mean of its
/// members' corners, scored `mean(score) * min(n, source_count) / source_count`.
pub fn wbf(box_lists: &[Vec<ScoredBox>], iou_threshold: f64, source_count: usize) -> Vec<ScoredBox> {
    let mut pooled: Vec<ScoredBox> = box_lists.iter().flatten().copied().collect();
    pooled.sort_by(priority_order);
    let source_count = source_count.max(1);

    let mut clusters: Vec<Cluster> = Vec::new();
    for b in pooled {
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in clusters.iter().enumerate() {
            if c.label != b.label {
                continue;
            }
            let overlap = corner_iou(&c.fused, &b.corners);
            if overlap >= iou_threshold && best.is_none_or(|(_, o)| overlap > o) {
                best = Some((k, overlap));
            }
        }
        match best {
            Some((k, _)) => clusters[k].push(b),
            None => clusters.push(Cluster::new(b)),
        }
    }

    let mut fused: Vec<ScoredBox> = clusters
        .into_iter()
        .map(|c| {
            let n = c.members.len();
            let mean = c.members.iter().map(|m| m.score).sum::<f64>() / n as f64;
            ScoredBox {
                corners: c.fused,
                score: mean * n.min(source_count) as f64 / source_count as f64,
                label: c.label,
            }
        })
        .collect();
    fused.sort_by(priority_order);
    fused
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtaKind {
    Identity,
    Hflip,
    Vflip,
    Rot180,
}

impl TtaKind {
    pub const ALL: [TtaKind; 4] = [TtaKind::Identity, TtaKind::Hflip, TtaKind::Vflip, TtaKind::Rot180];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TtaTransform {
    pub kind: TtaKind,
    pub image_w: u32,
    pub image_h: u32,
}

impl TtaTransform {
    pub fn new(kind: TtaKind, image_w: u32, image_h: u32) -> Self {
        Self { kind, image_w, image_h }
    }

    /// The full transform set for an image of the given size.
    pub fn all(image_w: u32, image_h: u32) -> Vec<TtaTransform> {
        TtaKind::ALL.iter().map(|&k| Self::new(k, image_w, image_h)).collect()
    }

    /// Every transform in the set is its own inverse.
    pub fn inverse(self) -> Self {
        self
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        match self.kind {
            TtaKind::Identity => image.clone(),
            TtaKind::Hflip => imageops::flip_horizontal(image),
            TtaKind::Vflip => imageops::flip_vertical(image),
            TtaKind::Rot180 => imageops::rotate180(image),
        }
    }
}

pub fn transform_boxes(boxes: &[ScoredBox], t: TtaTransform) -> Result<Vec<ScoredBox>, FusionError> {
    let w = f64::from(t.image_w);
    let h = f64::from(t.image_h);
    boxes
        .iter()
        .map(|b| {
            let [x1, y1, x2, y2] = b.corners;
            if x1 < 0.0 || y1 < 0.0 || x2 > w || y2 > h {
                return Err(FusionError::OutOfImage {
                    corners: b.corners,
                    width: t.image_w,
                    height: t.image_h,
                });
            }
            let (flip_x, flip_y) = match t.kind {
                TtaKind::Identity => (false, false),
                TtaKind::Hflip => (true, false),
                TtaKind::Vflip => (false, true),
                TtaKind::Rot180 => (true, true),
            };
            let (x1, x2) = if flip_x { (w - x2, w - x1) } else { (x1, x2) };
            let (y1, y2) = if flip_y { (h - y2, h - y1) } else { (y1, y2) };
            Ok(ScoredBox {
                corners: [x1, y1, x2, y2],
                ..*b
            })
        })
        .collect()
}

/// A box detector over images. Implementations used with parallel TTA must be
/// safe to call from several threads at once.
pub trait Detector: Sync {
    fn detect(&self, image: &Image) -> Result<Vec<ScoredBox>, ModelError>;
}

impl<F> Detector for F
where
    F: Fn(&Image) -> Result<Vec<ScoredBox>, ModelError> + Sync,
{
    fn detect(&self, image: &Image) -> Result<Vec<ScoredBox>, ModelError> {
        self(image)
    }
}

/// Predict on every transformed copy, map the boxes back and fuse them with
/// WBF (`source_count` = number of transforms).
pub fn tta_fuse(
    model: &dyn Detector,
    image: &Image,
    transforms: &[TtaTransform],
    iou_threshold: f64,
) -> Result<Vec<ScoredBox>, FusionError> {
    if !transforms.iter().any(|t| t.kind == TtaKind::Identity) {
        return Err(FusionError::MissingIdentity);
    }
    let run = |t: &TtaTransform| -> Result<Vec<ScoredBox>, FusionError> {
        let preds = model
            .detect(&t.apply_image(image))
            .map_err(|source| FusionError::Model {
                transform: t.kind,
                source,
            })?;
        transform_boxes(&preds, t.inverse())
    };
    #[cfg(feature = "parallel")]
    let lists = {
        use rayon::prelude::*;
        transforms.par_iter().map(run).collect::<Result<Vec<_>, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let lists = transforms.iter().map(run).collect::<Result<Vec<_>, _>>()?;
    Ok(wbf(&lists, iou_threshold, transforms.len()))
}
