//! Anonymization of scanned documents by fusing automatically detected
//! sensitive regions with redactions transferred from a manually
//! anonymized reference document of the same model, plus the evaluation
//! harness comparing the fused method against its two naive baselines.
//!
//! The pipeline: embed the target scan and retrieve the reference document
//! by cosine similarity ([`retrieval`]), align the two scans with keypoint
//! matching and RANSAC ([`features`]), transfer the reference redactions
//! and merge them per class with detector output ([`redactor`]), and score
//! everything against ground truth ([`metrics`]). The [`synthdoc`] module
//! generates deterministic synthetic corpora so the whole chain can be
//! exercised without any real document scans or neural models.

pub mod detectors;
pub mod error;
pub mod features;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod redactor;
pub mod retrieval;
pub mod synthdoc;

mod fsutil;
mod rng;

pub use error::{Error, Result};
