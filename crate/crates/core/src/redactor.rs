//! The fusion engine: transforms reference redactions into target
//! coordinates and merges them per class with predicted detections; also
//! the two naive baselines and box rendering.
//!
//! Per class the rules are:
//! - Text, Barcode, Mrz: each transformed reference box takes the width of
//!   its best-matching prediction (`w = w_pred - (x_ref - x_pred)`) when
//!   their IoU exceeds the gate, and passes through unchanged otherwise.
//!   Unmatched predictions are non-PII and are discarded.
//! - Face: all predictions are kept; reference boxes are added only where
//!   they overlap no prediction.
//! - Signature: no detector exists, so transformed reference boxes are the
//!   final redactions.
//!
//! Every reference redaction surviving the clip step yields exactly one
//! output box: fusion never drops a PII region.

use std::collections::BTreeMap;

use crate::detectors::DetectionSet;
use crate::error::{Error, Result};
use crate::features::{align_with, AlignParams};
use crate::geometry::{apply_transform, iou, AffineTransform, BBox, BoxSource, RedactionClass};
use crate::raster::{draw_rect_mut, DrawMode, Raster};

/// An image's worth of boxes: ground truth, detections, and final
/// redactions all use this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    /// Relative path of the raster this annotation belongs to; may be
    /// empty for in-memory documents.
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BBox>,
}

/// Thresholds of the per-class fusion rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedactionPolicy {
    /// A reference box is width-adjusted only when its best prediction
    /// overlaps with IoU strictly greater than this.
    pub iou_gate: f64,
    /// A reference face box is kept only when its IoU with every predicted
    /// face is at most this; 0.0 means any positive overlap suppresses it.
    pub face_overlap_epsilon: f64,
}

impl Default for RedactionPolicy {
    fn default() -> Self {
        RedactionPolicy {
            iou_gate: 0.1,
            face_overlap_epsilon: 0.0,
        }
    }
}

impl RedactionPolicy {
    pub fn new(iou_gate: f64, face_overlap_epsilon: f64) -> Result<RedactionPolicy> {
        if !(0.0..1.0).contains(&iou_gate) {
            return Err(Error::ConfigRange {
                path: "policy.iou_gate".into(),
                message: format!("{iou_gate} outside [0, 1)"),
            });
        }
        if !(0.0..=1.0).contains(&face_overlap_epsilon) {
            return Err(Error::ConfigRange {
                path: "policy.face_overlap_epsilon".into(),
                message: format!("{face_overlap_epsilon} outside [0, 1]"),
            });
        }
        Ok(RedactionPolicy {
            iou_gate,
            face_overlap_epsilon,
        })
    }
}

/// Transformed boxes clipped to the target page are dropped when less than
/// this fraction of their area survives.
pub const DEFAULT_CLIP_DROP_RATIO: f64 = 0.25;

/// Map the reference boxes into target coordinates, clip to the target
/// page, and drop boxes that mostly fell off it.
pub fn transform_reference(
    reference: &AnnotatedDocument,
    t: &AffineTransform,
    target_width: usize,
    target_height: usize,
) -> Result<Vec<BBox>> {
    transform_reference_with(reference, t, target_width, target_height, DEFAULT_CLIP_DROP_RATIO)
}

pub fn transform_reference_with(
    reference: &AnnotatedDocument,
    t: &AffineTransform,
    target_width: usize,
    target_height: usize,
    min_survive_ratio: f64,
) -> Result<Vec<BBox>> {
    let mut out = Vec::with_capacity(reference.boxes.len());
    for b in &reference.boxes {
        let mapped = apply_transform(t, b)?;
        let full = mapped.area();
        if let Some(clipped) = mapped.clip(target_width as f64, target_height as f64) {
            if clipped.area() >= min_survive_ratio * full {
                out.push(clipped);
            }
        }
    }
    Ok(out)
}

fn check_class(boxes: &[BBox], expected: RedactionClass) -> Result<()> {
    for b in boxes {
        if b.class != expected {
            return Err(Error::ClassMismatch {
                expected: expected.as_str().to_string(),
                found: b.class.as_str().to_string(),
            });
        }
    }
    Ok(())
}

/// The shared matching scheme: assign predictions to reference boxes
/// one-to-one in descending IoU order; adjust widths above the gate, pass
/// references through otherwise. Output order follows `refs`; exactly one
/// box per reference.
fn fuse_width_adjust(refs: &[BBox], preds: &[BBox], gate: f64) -> Vec<BBox> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (ri, r) in refs.iter().enumerate() {
        for (pi, p) in preds.iter().enumerate() {
            let overlap = iou(r, p);
            if overlap > gate {
                candidates.push((overlap, ri, pi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut assigned: Vec<Option<usize>> = vec![None; refs.len()];
    let mut consumed = vec![false; preds.len()];
    for (_, ri, pi) in candidates {
        if assigned[ri].is_none() && !consumed[pi] {
            assigned[ri] = Some(pi);
            consumed[pi] = true;
        }
    }

    refs.iter()
        .enumerate()
        .map(|(ri, r)| {
            if let Some(pi) = assigned[ri] {
                let p = &preds[pi];
                let adjusted_width = p.w - (r.x - p.x);
                if adjusted_width > 0.0 {
                    let mut out = r.clone();
                    out.w = adjusted_width;
                    out.score = p.score;
                    out.source = BoxSource::Adjusted;
                    return out;
                }
                // A non-positive adjusted width would erase the redaction;
                // keep the transformed reference box instead.
            }
            r.clone()
        })
        .collect()
}

/// Text fusion: width adjustment against the text detector's runs.
pub fn fuse_text(refs: &[BBox], preds: &[BBox], policy: &RedactionPolicy) -> Result<Vec<BBox>> {
    check_class(refs, RedactionClass::Text)?;
    check_class(preds, RedactionClass::Text)?;
    Ok(fuse_width_adjust(refs, preds, policy.iou_gate))
}

/// Barcode and Mrz share the text matching scheme. Both inputs must be a
/// single class, either Barcode or Mrz.
pub fn fuse_matched(refs: &[BBox], preds: &[BBox], policy: &RedactionPolicy) -> Result<Vec<BBox>> {
    let class = refs
        .first()
        .or_else(|| preds.first())
        .map(|b| b.class)
        .unwrap_or(RedactionClass::Barcode);
    if !matches!(class, RedactionClass::Barcode | RedactionClass::Mrz) {
        return Err(Error::ClassMismatch {
            expected: "barcode or mrz".into(),
            found: class.as_str().to_string(),
        });
    }
    check_class(refs, class)?;
    check_class(preds, class)?;
    Ok(fuse_width_adjust(refs, preds, policy.iou_gate))
}

/// Face fusion: keep every prediction and add each reference box that
/// overlaps none of them.
pub fn fuse_face(refs: &[BBox], preds: &[BBox], policy: &RedactionPolicy) -> Vec<BBox> {
    let mut out: Vec<BBox> = preds.to_vec();
    for r in refs {
        if preds.iter().all(|p| iou(r, p) <= policy.face_overlap_epsilon) {
            out.push(r.clone());
        }
    }
    out
}

/// Signature fusion: no detector, transformed reference boxes are the
/// final redactions.
pub fn fuse_signature(refs: &[BBox]) -> Vec<BBox> {
    refs.to_vec()
}

/// Knobs for the full per-document redaction.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub policy: RedactionPolicy,
    pub align: AlignParams,
    pub clip_drop_ratio: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            policy: RedactionPolicy::default(),
            align: AlignParams::default(),
            clip_drop_ratio: DEFAULT_CLIP_DROP_RATIO,
        }
    }
}

fn split_by_class(boxes: &[BBox]) -> BTreeMap<RedactionClass, Vec<BBox>> {
    let mut map: BTreeMap<RedactionClass, Vec<BBox>> = BTreeMap::new();
    for b in boxes {
        map.entry(b.class).or_default().push(b.clone());
    }
    map
}

/// The full fused redaction of one target: align the reference scan to the
/// target, transfer its redactions, and dispatch per class. The reference
/// must be of the same document model as the target (the caller guarantees
/// this via retrieval). Alignment failures propagate; the caller may fall
/// back to [`baseline_copy`].
pub fn redact(
    target: &Raster,
    reference_image: &Raster,
    reference: &AnnotatedDocument,
    detections: &DetectionSet,
    params: &FusionParams,
) -> Result<AnnotatedDocument> {
    let t = align_with(reference_image, target, &params.align)?.transform;
    redact_with_transform(target, &t, reference, detections, params)
}

/// [`redact`] with a precomputed reference-to-target transform.
pub fn redact_with_transform(
    target: &Raster,
    t: &AffineTransform,
    reference: &AnnotatedDocument,
    detections: &DetectionSet,
    params: &FusionParams,
) -> Result<AnnotatedDocument> {
    let (tw, th) = (target.width(), target.height());
    let refs = transform_reference_with(reference, t, tw, th, params.clip_drop_ratio)?;
    let mut ref_by_class = split_by_class(&refs);
    let pred_by_class = split_by_class(&detections.boxes);

    let empty = Vec::new();
    let mut boxes = Vec::new();
    for class in RedactionClass::ALL {
        let r = ref_by_class.remove(&class).unwrap_or_default();
        let p = pred_by_class.get(&class).unwrap_or(&empty);
        let fused = match class {
            RedactionClass::Text => fuse_text(&r, p, &params.policy)?,
            RedactionClass::Face => fuse_face(&r, p, &params.policy),
            // Predicted signatures are not used; reference transfer is the
            // final word for this class.
            RedactionClass::Signature => fuse_signature(&r),
            RedactionClass::Mrz | RedactionClass::Barcode => fuse_matched(&r, p, &params.policy)?,
        };
        boxes.extend(fused);
    }
    Ok(AnnotatedDocument {
        doc_id: detections.doc_id.clone(),
        image: String::new(),
        width: tw,
        height: th,
        boxes,
    })
}

/// Baseline: the automatic detections are the final redactions.
pub fn baseline_auto(detections: &DetectionSet, width: usize, height: usize) -> AnnotatedDocument {
    AnnotatedDocument {
        doc_id: detections.doc_id.clone(),
        image: String::new(),
        width,
        height,
        boxes: detections.boxes.clone(),
    }
}

/// Baseline: copy the reference boxes onto the target page with no
/// transform and no fusion, clipping to the target bounds.
pub fn baseline_copy(
    reference: &AnnotatedDocument,
    target_width: usize,
    target_height: usize,
) -> AnnotatedDocument {
    let boxes = reference
        .boxes
        .iter()
        .filter_map(|b| {
            let full = b.area();
            b.clip(target_width as f64, target_height as f64)
                .filter(|c| c.area() >= DEFAULT_CLIP_DROP_RATIO * full)
                .map(|c| c.with_source(BoxSource::ReferenceTransformed))
        })
        .collect();
    AnnotatedDocument {
        doc_id: reference.doc_id.clone(),
        image: String::new(),
        width: target_width,
        height: target_height,
        boxes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Fill every box with black: the actual anonymization output.
    Blackout,
    /// Draw class-colored outlines for review.
    Overlay,
}

/// Outline color per class: faces yellow, text green, signatures blue,
/// the MRZ black, and barcodes red.
pub fn class_color(class: RedactionClass) -> [u8; 3] {
    match class {
        RedactionClass::Face => [255, 255, 0],
        RedactionClass::Text => [0, 255, 0],
        RedactionClass::Signature => [0, 0, 255],
        RedactionClass::Mrz => [0, 0, 0],
        RedactionClass::Barcode => [255, 0, 0],
    }
}

/// Render boxes onto an RGB copy of the image.
pub fn render(img: &Raster, boxes: &[BBox], mode: RenderMode) -> Raster {
    let mut out = img.to_rgb();
    for b in boxes {
        match mode {
            RenderMode::Blackout => draw_rect_mut(&mut out, b, [0, 0, 0], DrawMode::Fill),
            RenderMode::Overlay => draw_rect_mut(&mut out, b, class_color(b.class), DrawMode::Outline),
        }
    }
    out
}
