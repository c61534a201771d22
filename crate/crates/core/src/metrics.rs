//! Evaluation: confusion matrices and per-class scores for the classifier,
//! detection matching and confidence statistics for the identifier, and
//! bounds on the accuracy of the composed two-step pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{corner_iou, priority_order, ScoredBox};
use crate::mosaic::MosaicAnnotation;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{pred} predictions for {truth} ground-truth labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("label `{0}` is not one of the matrix classes")]
    UnknownLabel(String),
    #[error("no samples to evaluate")]
    Empty,
    #[error("counts matrix is not {0}x{0}")]
    NotSquare(usize),
    #[error("{name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
}

/// `counts[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let n = classes.len();
        if counts.len() != n || counts.iter().any(|row| row.len() != n) {
            return Err(MetricsError::NotSquare(n));
        }
        Ok(Self { classes, counts })
    }

    pub fn zeros(classes: Vec<String>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        self.counts[actual][predicted] += 1;
    }
}

pub fn confusion<S: AsRef<str>>(
    pred: &[S],
    truth: &[S],
    classes: &[S],
) -> Result<ConfusionMatrix, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::zeros(classes.iter().map(|c| c.as_ref().to_string()).collect());
    let lookup = |label: &S| {
        cm.index_of(label.as_ref())
            .ok_or_else(|| MetricsError::UnknownLabel(label.as_ref().to_string()))
    };
    let pairs = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| Ok((lookup(t)?, lookup(p)?)))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    for (t, p) in pairs {
        cm.record(t, p);
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::Empty),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

/// Which count the `support` column reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportConvention {
    /// Samples predicted as the class (column sum).
    #[default]
    Predicted,
    /// Samples actually in the class (row sum).
    Actual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Standard precision (column-normalized) and recall (row-normalized);
/// empty rows or columns score 0.
pub fn per_class_metrics(cm: &ConfusionMatrix, support: SupportConvention) -> Vec<ClassMetrics> {
    (0..cm.classes.len())
        .map(|k| {
            let tp = cm.counts[k][k];
            let predicted = cm.column_sum(k);
            let actual = cm.row_sum(k);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            ClassMetrics {
                class: cm.classes[k].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: match support {
                    SupportConvention::Predicted => predicted,
                    SupportConvention::Actual => actual,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub truth: usize,
    pub iou: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionMatching {
    pub pairs: Vec<MatchedPair>,
    /// Indices into the prediction list.
    pub unmatched_preds: Vec<usize>,
    pub unmatched_pred_scores: Vec<f64>,
    /// Indices into the annotation list (sick tiles only).
    pub unmatched_truth: Vec<usize>,
}

/// Greedy one-to-one matching of predictions to sick tiles. Predictions are
/// visited in priority order; each takes the unmatched sick tile with the
/// highest IoU ≥ threshold (lowest index on ties).
pub fn match_detections(
    preds: &[ScoredBox],
    truth: &[MosaicAnnotation],
    iou_threshold: f64,
) -> DetectionMatching {
    let sick: Vec<(usize, [f64; 4])> = truth
        .iter()
        .enumerate()
        .filter(|(_, a)| a.sick == 1)
        .map(|(k, a)| (k, a.bbox.corners()))
        .collect();
    let mut taken = vec![false; sick.len()];
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| priority_order(&preds[a], &preds[b]).then(a.cmp(&b)));

    let mut out = DetectionMatching::default();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (s, (_, corners)) in sick.iter().enumerate() {
            if taken[s] {
                continue;
            }
            let overlap = corner_iou(&preds[p].corners, corners);
            if overlap >= iou_threshold && best.is_none_or(|(_, o)| overlap > o) {
                best = Some((s, overlap));
            }
        }
        match best {
            Some((s, overlap)) => {
                taken[s] = true;
                out.pairs.push(MatchedPair {
                    pred: p,
                    truth: sick[s].0,
                    iou: overlap,
                    score: preds[p].score,
                });
            }
            None => {
                out.unmatched_preds.push(p);
                out.unmatched_pred_scores.push(preds[p].score);
            }
        }
    }
    out.unmatched_truth = sick
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|((k, _), _)| *k)
        .collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub avg_positive_confidence: f64,
    pub avg_negative_confidence: f64,
    pub matched: usize,
    pub unmatched: usize,
}

impl ConfidenceSummary {
    /// Pool two summaries, weighting each average by its population.
    pub fn merge(&self, other: &ConfidenceSummary) -> ConfidenceSummary {
        let avg = |a: f64, na: usize, b: f64, nb: usize| {
            if na + nb == 0 {
                0.0
            } else {
                (a * na as f64 + b * nb as f64) / (na + nb) as f64
            }
        };
        ConfidenceSummary {
            avg_positive_confidence: avg(
                self.avg_positive_confidence,
                self.matched,
                other.avg_positive_confidence,
                other.matched,
            ),
            avg_negative_confidence: avg(
                self.avg_negative_confidence,
                self.unmatched,
                other.avg_negative_confidence,
                other.unmatched,
            ),
            matched: self.matched + other.matched,
            unmatched: self.unmatched + other.unmatched,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

pub fn confidence_summary(matching: &DetectionMatching) -> ConfidenceSummary {
    let (pos, matched) = mean(matching.pairs.iter().map(|p| p.score));
    let (neg, unmatched) = mean(matching.unmatched_pred_scores.iter().copied());
    ConfidenceSummary {
        avg_positive_confidence: pos,
        avg_negative_confidence: neg,
        matched,
        unmatched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineAccuracyBounds {
    /// Errors of the two stages independent: `a_i * a_c`.
    pub independent_estimate: f64,
    /// Error sets disjoint: `1 - (1 - a_i) - (1 - a_c)`, floored at 0.
    pub lower_bound: f64,
    /// Classifier errors nested inside identifier errors: `min(a_i, a_c)`.
    pub upper_bound: f64,
}

pub fn pipeline_bounds(identifier_acc: f64, classifier_acc: f64) -> Result<PipelineAccuracyBounds, MetricsError> {
    for (name, value) in [("identifier_acc", identifier_acc), ("classifier_acc", classifier_acc)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricsError::OutOfRange { name, value });
        }
    }
    Ok(PipelineAccuracyBounds {
        independent_estimate: identifier_acc * classifier_acc,
        lower_bound: (1.0 - (1.0 - identifier_acc) - (1.0 - classifier_acc)).max(0.0),
        upper_bound: identifier_acc.min(classifier_acc),
    })
}

/// JSON evaluation report; absent sections serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub confusion: Option<ConfusionMatrix>,
    pub per_class: Option<Vec<ClassMetrics>>,
    pub accuracy: Option<f64>,
    pub confidence: Option<ConfidenceSummary>,
    pub bounds: Option<PipelineAccuracyBounds>,
}
