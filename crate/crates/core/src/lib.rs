//! Fieldforge: data engineering and evaluation tooling for two-step crop
//! disease detection.
//!
//! A low-fidelity *identifier* flags potentially diseased plants in a wide
//! field-of-view image, and a high-fidelity *classifier* diagnoses close-up
//! photos of the flagged plants. This crate provides everything around those
//! two models:
//!
//! 1. [`corpus`] – the high-fidelity label table (`image_id` + one-hot classes).
//! 2. [`rebalance`] – quota planning and pluggable synthetic image generators
//!    for fixing class imbalance.
//! 3. [`mosaic`] – assembly of high-fidelity tiles and soil patches into
//!    synthetic far-field images with per-tile annotation tables.
//! 4. [`augment`] – cutout and grid-aligned CutMix over mosaics.
//! 5. [`fusion`] – IoU, greedy NMS, weighted boxes fusion and test-time
//!    augmentation.
//! 6. [`schedule`] – ramp / sustain / exponential-decay learning rate curve.
//! 7. [`metrics`] – confusion matrices, per-class scores, detection matching
//!    and composed pipeline accuracy bounds.
//! 8. [`pipeline`] – the identifier → classifier flow in simulation, with
//!    oracle and baseline models.

pub mod augment;
pub mod corpus;
pub mod fusion;
pub mod metrics;
pub mod mosaic;
pub mod pipeline;
pub mod rebalance;
pub mod rng;
pub mod schedule;

pub use corpus::{DiseaseClass, HighFidelityRecord};
pub use fusion::ScoredBox;
pub use mosaic::{Bbox, MosaicAnnotation, MosaicItem, MosaicSpec};

/// RGB pixel grid used throughout the crate.
pub type Image = image::RgbImage;
