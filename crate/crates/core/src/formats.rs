//! Bit-exact persistence: the annotation JSON schema shared by ground
//! truth, sidecar detections, and redaction outputs; the embedding JSONL
//! store; the corpus manifest; and the pipeline config file.
//!
//! Writing is canonical: fixed key order, shortest round-trip float
//! representation, a trailing newline. Writing the same value twice yields
//! byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorParams;
use crate::error::{Error, Result};
use crate::features::AlignParams;
use crate::fsutil;
use crate::geometry::{BBox, BoxSource, RedactionClass};
use crate::redactor::{AnnotatedDocument, RedactionPolicy, DEFAULT_CLIP_DROP_RATIO};
use crate::retrieval::{EmbeddingRecord, EmbeddingStore};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    schema_version: u64,
    doc_id: String,
    image: String,
    width: usize,
    height: usize,
    boxes: Vec<BoxRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxRecord {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    class: String,
    score: f64,
    source: String,
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Parse and validate an annotation document from JSON text. Class and
/// source names are case-insensitive and canonicalized to lowercase.
pub fn parse_annotation(text: &str) -> Result<AnnotatedDocument> {
    let file: AnnotationFile =
        serde_json::from_str(text).map_err(|e| schema_err("<annotation>", e.to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion(file.schema_version));
    }
    if file.doc_id.is_empty() {
        return Err(schema_err("doc_id", "must be non-empty"));
    }
    if file.width < 1 || file.height < 1 {
        return Err(schema_err("width", "image dimensions must be >= 1"));
    }
    let mut boxes = Vec::with_capacity(file.boxes.len());
    for (i, rec) in file.boxes.iter().enumerate() {
        let class = RedactionClass::parse(&rec.class)
            .ok_or_else(|| schema_err(format!("boxes[{i}].class"), format!("unknown class {:?}", rec.class)))?;
        let source = BoxSource::parse(&rec.source)
            .ok_or_else(|| schema_err(format!("boxes[{i}].source"), format!("unknown source {:?}", rec.source)))?;
        let b = BBox::new(rec.x, rec.y, rec.w, rec.h, class)
            .map_err(|e| schema_err(format!("boxes[{i}].w"), e.to_string()))?
            .with_score(rec.score)
            .map_err(|e| schema_err(format!("boxes[{i}].score"), e.to_string()))?
            .with_source(source);
        boxes.push(b);
    }
    Ok(AnnotatedDocument {
        doc_id: file.doc_id,
        image: file.image,
        width: file.width,
        height: file.height,
        boxes,
    })
}

/// Canonical JSON serialization of an annotation document.
pub fn annotation_to_json(doc: &AnnotatedDocument) -> String {
    let file = AnnotationFile {
        schema_version: SCHEMA_VERSION,
        doc_id: doc.doc_id.clone(),
        image: doc.image.clone(),
        width: doc.width,
        height: doc.height,
        boxes: doc
            .boxes
            .iter()
            .map(|b| BoxRecord {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                class: b.class.as_str().to_string(),
                score: b.score,
                source: b.source.as_str().to_string(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("annotation serializes");
    text.push('\n');
    text
}

pub fn read_annotation(path: &Path) -> Result<AnnotatedDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation(&text).map_err(|e| match e {
        Error::Schema { path: p, message } => Error::Schema {
            path: format!("{}: {p}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_annotation(doc: &AnnotatedDocument, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, annotation_to_json(doc).as_bytes())
}

// ---------------------------------------------------------------------------
// Embedding store (JSON Lines)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    doc_id: String,
    model_id: String,
    vector: Vec<f32>,
}

/// One record per line; vectors are persisted at 32-bit precision.
pub fn embeddings_to_jsonl(store: &EmbeddingStore) -> String {
    let mut out = String::new();
    for r in store.records() {
        let line = EmbeddingLine {
            doc_id: r.doc_id.clone(),
            model_id: r.model_id.clone(),
            vector: r.vector.iter().map(|&v| v as f32).collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("embedding serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingStore> {
    let mut store: Option<EmbeddingStore> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingLine = serde_json::from_str(line)
            .map_err(|e| schema_err(format!("line {}", i + 1), e.to_string()))?;
        let vector: Vec<f64> = rec.vector.iter().map(|&v| v as f64).collect();
        let store = store.get_or_insert_with(|| EmbeddingStore::new(vector.len()));
        store
            .insert(EmbeddingRecord {
                doc_id: rec.doc_id,
                model_id: rec.model_id,
                vector,
            })
            .map_err(|e| schema_err(format!("line {}", i + 1), e.to_string()))?;
    }
    store.ok_or(Error::EmptyStore)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

pub fn write_embeddings(store: &EmbeddingStore, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, embeddings_to_jsonl(store).as_bytes())
}

// ---------------------------------------------------------------------------
// Corpus manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub model_id: String,
    /// Paths relative to the manifest's directory.
    pub image: String,
    pub annotation: String,
    pub reference: bool,
}

pub fn manifest_to_json(entries: &[ManifestEntry]) -> String {
    let mut text = serde_json::to_string_pretty(entries).expect("manifest serializes");
    text.push('\n');
    text
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, manifest_to_json(entries).as_bytes())
}

// ---------------------------------------------------------------------------
// Pipeline config
// ---------------------------------------------------------------------------

/// All tunables of the pipeline in one place. Every field of the config
/// file is optional; missing keys take the documented defaults.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub policy: RedactionPolicy,
    pub align: AlignParams,
    pub detectors: DetectorParams,
    pub clip_drop_ratio: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            policy: RedactionPolicy::default(),
            align: AlignParams::default(),
            detectors: DetectorParams::default(),
            clip_drop_ratio: DEFAULT_CLIP_DROP_RATIO,
        }
    }
}

impl PipelineConfig {
    pub fn fusion_params(&self) -> crate::redactor::FusionParams {
        crate::redactor::FusionParams {
            policy: self.policy,
            align: self.align.clone(),
            clip_drop_ratio: self.clip_drop_ratio,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    policy: Option<RawPolicy>,
    ransac: Option<RawRansac>,
    detectors: Option<RawDetectors>,
    clip_drop_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    iou_gate: Option<f64>,
    face_overlap_epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRansac {
    threshold: Option<f64>,
    iterations: Option<usize>,
    seed: Option<u64>,
    max_keypoints: Option<usize>,
    match_distance_max: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetectors {
    mrz_wide_kernel_divisor: Option<usize>,
    mrz_square_kernel_divisor: Option<usize>,
    mrz_erode_iterations: Option<usize>,
    text_blackhat_divisor: Option<usize>,
    text_close_advance_factor: Option<f64>,
}

fn range_err(path: &str, message: impl Into<String>) -> Error {
    Error::ConfigRange {
        path: path.to_string(),
        message: message.into(),
    }
}

fn check_range(path: &str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(range_err(path, format!("{value} outside [{lo}, {hi}]")))
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| schema_err("<config>", e.to_string()))?;
    let mut config = PipelineConfig::default();

    if let Some(policy) = raw.policy {
        if let Some(gate) = policy.iou_gate {
            check_range("policy.iou_gate", gate, 0.0, 1.0)?;
            if gate >= 1.0 {
                return Err(range_err("policy.iou_gate", format!("{gate} outside [0, 1)")));
            }
            config.policy.iou_gate = gate;
        }
        if let Some(eps) = policy.face_overlap_epsilon {
            config.policy.face_overlap_epsilon =
                check_range("policy.face_overlap_epsilon", eps, 0.0, 1.0)?;
        }
    }
    if let Some(ransac) = raw.ransac {
        if let Some(threshold) = ransac.threshold {
            config.align.ransac_threshold = check_range("ransac.threshold", threshold, 1e-6, 1e6)?;
        }
        if let Some(iterations) = ransac.iterations {
            if iterations == 0 {
                return Err(range_err("ransac.iterations", "must be >= 1"));
            }
            config.align.ransac_iterations = iterations;
        }
        if let Some(seed) = ransac.seed {
            config.align.seed = seed;
        }
        if let Some(max_keypoints) = ransac.max_keypoints {
            if max_keypoints < 3 {
                return Err(range_err("ransac.max_keypoints", "must be >= 3"));
            }
            config.align.max_keypoints = max_keypoints;
        }
        if let Some(d) = ransac.match_distance_max {
            if d > 256 {
                return Err(range_err("ransac.match_distance_max", "must be <= 256"));
            }
            config.align.match_distance_max = d;
        }
    }
    if let Some(det) = raw.detectors {
        if let Some(v) = det.mrz_wide_kernel_divisor {
            if v == 0 {
                return Err(range_err("detectors.mrz_wide_kernel_divisor", "must be >= 1"));
            }
            config.detectors.mrz.wide_kernel_divisor = v;
        }
        if let Some(v) = det.mrz_square_kernel_divisor {
            if v == 0 {
                return Err(range_err("detectors.mrz_square_kernel_divisor", "must be >= 1"));
            }
            config.detectors.mrz.square_kernel_divisor = v;
        }
        if let Some(v) = det.mrz_erode_iterations {
            config.detectors.mrz.erode_iterations = v;
        }
        if let Some(v) = det.text_blackhat_divisor {
            if v == 0 {
                return Err(range_err("detectors.text_blackhat_divisor", "must be >= 1"));
            }
            config.detectors.text.blackhat_divisor = v;
        }
        if let Some(v) = det.text_close_advance_factor {
            config.detectors.text.close_advance_factor =
                check_range("detectors.text_close_advance_factor", v, 0.1, 100.0)?;
        }
    }
    if let Some(ratio) = raw.clip_drop_ratio {
        config.clip_drop_ratio = check_range("clip_drop_ratio", ratio, 0.0, 1.0)?;
    }
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Atomic write of arbitrary bytes; exposed for CLI outputs.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    fsutil::write_atomic(path, bytes)
}
