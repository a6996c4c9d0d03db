//! Per-class candidate boxes: a classical MRZ detector and a dark-run
//! text-line detector implemented natively, plus a sidecar loader for
//! detections produced by external models (faces, barcodes, and optionally
//! better text). The native detectors keep the pipeline runnable end to
//! end without any model; sidecar files take precedence per class when
//! present.

use std::path::Path;

use crate::error::Result;
use crate::formats;
use crate::geometry::{BBox, BoxSource, RedactionClass};
use crate::raster::{binarize, connected_components, morph, otsu_threshold, scharr_x, MorphOp, Raster};

/// Detections for one document; every box carries source `Predicted`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub doc_id: String,
    pub boxes: Vec<BBox>,
}

/// MRZ detector knobs. Kernel sizes scale with image width so the
/// detector works across resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct MrzParams {
    /// Wide rectangular kernel: width/this by width/(4*this), odd.
    pub wide_kernel_divisor: usize,
    /// Square closing kernel: width/this, odd.
    pub square_kernel_divisor: usize,
    /// 3x3 erosions applied after the square closing.
    pub erode_iterations: usize,
    /// Keep components with w/h at least this.
    pub min_aspect: f64,
    /// Keep components at least this fraction of the image width.
    pub min_width_ratio: f64,
    /// Grow kept boxes by this fraction of their dimensions on each side.
    pub pad_ratio: f64,
    /// Below this peak |gradient| the page has no printed band at all and
    /// min-max normalization would only amplify noise.
    pub min_gradient: f64,
}

impl Default for MrzParams {
    fn default() -> Self {
        MrzParams {
            wide_kernel_divisor: 40,
            square_kernel_divisor: 25,
            erode_iterations: 2,
            min_aspect: 5.0,
            min_width_ratio: 0.75,
            pad_ratio: 0.02,
            min_gradient: 480.0,
        }
    }
}

/// Text-line detector knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TextParams {
    /// Square blackhat kernel: width/this, odd.
    pub blackhat_divisor: usize,
    /// Closing kernel width as a multiple of the estimated glyph advance.
    pub close_advance_factor: f64,
    /// Keep components with w/h at least this.
    pub min_aspect: f64,
    /// Component height bounds as fractions of the page height.
    pub min_height_ratio: f64,
    pub max_height_ratio: f64,
    /// Otsu floor: dark structures must clear this blackhat response, so
    /// faint background patterns never binarize into foreground.
    pub min_contrast: u8,
}

impl Default for TextParams {
    fn default() -> Self {
        TextParams {
            blackhat_divisor: 60,
            close_advance_factor: 1.5,
            min_aspect: 1.2,
            min_height_ratio: 0.005,
            max_height_ratio: 0.10,
            min_contrast: 40,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorParams {
    pub mrz: MrzParams,
    pub text: TextParams,
}

fn odd(n: usize) -> usize {
    (n | 1).max(1)
}

/// Machine-readable-zone detection: blackhat with a wide kernel, the
/// horizontal Scharr gradient, closing, Otsu, another closing plus
/// erosion, then connected components filtered to wide full-width bands.
pub fn detect_mrz(img: &Raster) -> Result<Vec<BBox>> {
    detect_mrz_with(img, &MrzParams::default())
}

pub fn detect_mrz_with(img: &Raster, params: &MrzParams) -> Result<Vec<BBox>> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Ok(Vec::new());
    }
    let wide = (
        odd(w / params.wide_kernel_divisor),
        odd(w / (params.wide_kernel_divisor * 4)),
    );
    let square = odd(w / params.square_kernel_divisor);

    let black = morph(img, wide, MorphOp::Blackhat)?;
    let grad = scharr_x(&black)?;
    if grad.max_abs() < params.min_gradient {
        return Ok(Vec::new());
    }
    let norm = grad.abs_normalized();
    let closed = morph(&norm, wide, MorphOp::Close)?;
    let t = otsu_threshold(&closed)?;
    let mut bin = binarize(&closed, t)?;
    bin = morph(&bin, (square, square), MorphOp::Close)?;
    for _ in 0..params.erode_iterations {
        bin = morph(&bin, (3, 3), MorphOp::Erode)?;
    }

    let mut out = Vec::new();
    for b in connected_components(&bin, RedactionClass::Mrz) {
        if b.w / b.h >= params.min_aspect && b.w >= params.min_width_ratio * w as f64 {
            let dx = params.pad_ratio * b.w;
            let dy = params.pad_ratio * b.h;
            let padded = BBox::new(b.x - dx, b.y - dy, b.w + 2.0 * dx, b.h + 2.0 * dy, b.class)
                .expect("padded box is positive");
            if let Some(clipped) = padded.clip(w as f64, h as f64) {
                out.push(clipped);
            }
        }
    }
    Ok(out)
}

/// Dark text-run detection: blackhat, Otsu with a contrast floor, a
/// horizontal closing sized from the estimated glyph advance, and
/// aspect/height filtering of the components.
pub fn detect_text_lines(img: &Raster) -> Result<Vec<BBox>> {
    detect_text_lines_with(img, &TextParams::default())
}

pub fn detect_text_lines_with(img: &Raster, params: &TextParams) -> Result<Vec<BBox>> {
    let (w, h) = (img.width(), img.height());
    let k = odd(w / params.blackhat_divisor);
    let black = morph(img, (k, k), MorphOp::Blackhat)?;
    let t = otsu_threshold(&black)?.max(params.min_contrast);
    let bin = binarize(&black, t)?;

    // Glyph advance estimated from the median height of the raw dark
    // blobs; the closing must bridge inter-glyph gaps but not the gap
    // between separate runs.
    let blobs = connected_components(&bin, RedactionClass::Text);
    if blobs.is_empty() {
        return Ok(Vec::new());
    }
    let mut heights: Vec<f64> = blobs.iter().map(|b| b.h).collect();
    heights.sort_by(f64::total_cmp);
    let advance = heights[heights.len() / 2];
    let close_w = odd((params.close_advance_factor * advance).round() as usize);
    let closed = morph(&bin, (close_w, 1), MorphOp::Close)?;

    let min_h = params.min_height_ratio * h as f64;
    let max_h = params.max_height_ratio * h as f64;
    Ok(connected_components(&closed, RedactionClass::Text)
        .into_iter()
        .filter(|b| b.w / b.h >= params.min_aspect && b.h >= min_h && b.h <= max_h)
        .collect())
}

/// Read externally produced detections from an annotation file; all
/// sources are forced to `Predicted`.
pub fn load_sidecar(path: &Path) -> Result<DetectionSet> {
    let doc = formats::read_annotation(path)?;
    Ok(DetectionSet {
        doc_id: doc.doc_id,
        boxes: doc
            .boxes
            .into_iter()
            .map(|b| b.with_source(BoxSource::Predicted))
            .collect(),
    })
}

/// Union of the native detectors and the sidecar. For any class the
/// sidecar supplies, its boxes replace the native ones (dedicated models
/// beat the classical fallbacks).
pub fn detect_all(img: &Raster, sidecar: Option<&DetectionSet>) -> Result<DetectionSet> {
    detect_all_with(img, sidecar, &DetectorParams::default())
}

pub fn detect_all_with(
    img: &Raster,
    sidecar: Option<&DetectionSet>,
    params: &DetectorParams,
) -> Result<DetectionSet> {
    let gray = img.to_gray();
    let sidecar_classes: Vec<RedactionClass> = sidecar
        .map(|s| s.boxes.iter().map(|b| b.class).collect())
        .unwrap_or_default();

    // Sidecar boxes are clipped to the page: everything emitted from here
    // must lie within the image bounds.
    let mut boxes: Vec<BBox> = sidecar
        .map(|s| {
            s.boxes
                .iter()
                .filter_map(|b| b.clip(img.width() as f64, img.height() as f64))
                .map(|b| b.with_source(BoxSource::Predicted))
                .collect()
        })
        .unwrap_or_default();
    if !sidecar_classes.contains(&RedactionClass::Mrz) {
        boxes.extend(detect_mrz_with(&gray, &params.mrz)?);
    }
    if !sidecar_classes.contains(&RedactionClass::Text) {
        boxes.extend(detect_text_lines_with(&gray, &params.text)?);
    }
    Ok(DetectionSet {
        doc_id: sidecar.map(|s| s.doc_id.clone()).unwrap_or_default(),
        boxes,
    })
}
