//! Deterministic generator of synthetic document models: ID-card-like
//! rasters with text fields, a face placeholder, an MRZ band, a barcode,
//! and a signature, plus ground-truth annotations and affine
//! perturbations.
//!
//! Text is rendered as pseudo-glyphs (dark blocks with inter-glyph gaps),
//! not real fonts; the pipeline only needs localizable dark runs. Text
//! values get seed-dependent glyph counts, so transferring a reference
//! redaction verbatim is measurably wrong in width: the name on the target
//! document rarely has the same length as on the reference. Background
//! decorations include faint stripe patterns under some regions to stand
//! in for microscript-like security printing.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats::{write_annotation, write_manifest, ManifestEntry};
use crate::geometry::{apply_transform, compose, AffineTransform, BBox, RedactionClass};
use crate::raster::{write_pnm, Raster};
use crate::redactor::AnnotatedDocument;
use crate::rng;

/// Horizontal advance of one rendered PII glyph cell in pixels; a k-glyph
/// text value occupies exactly `k * TEXT_GLYPH_ADVANCE` columns.
pub const TEXT_GLYPH_ADVANCE: f64 = 10.0;
const TEXT_GLYPH_WIDTH: usize = 7;
const TEXT_VERTICAL_INSET: f64 = 2.0;

const LABEL_ADVANCE: usize = 8;
const LABEL_GLYPH_WIDTH: usize = 6;
const LABEL_GLYPH_HEIGHT: usize = 10;

const BACKGROUND: u8 = 245;
const TEMPLATE_SEED: u64 = 0x7e3d_0c5a;

/// One PII region of a template. The glyph range only matters for Text
/// fields; other classes render fixed content filling the region.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub region: BBox,
    pub min_glyphs: usize,
    pub max_glyphs: usize,
}

impl FieldSpec {
    pub fn text(region: BBox, min_glyphs: usize, max_glyphs: usize) -> FieldSpec {
        FieldSpec {
            region,
            min_glyphs,
            max_glyphs,
        }
    }

    pub fn fixed(region: BBox) -> FieldSpec {
        FieldSpec {
            region,
            min_glyphs: 0,
            max_glyphs: 0,
        }
    }
}

/// Static, non-PII page content.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoration {
    /// A short pseudo-glyph caption (field label).
    Label { x: usize, y: usize, glyphs: usize },
    /// Faint horizontal stripe pattern.
    Stripes {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    },
    /// A dark page frame, 2 px thick, inset from the page edge.
    Frame { inset: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTemplate {
    pub model_id: String,
    pub width: usize,
    pub height: usize,
    pub fields: Vec<FieldSpec>,
    pub decorations: Vec<Decoration>,
}

impl DocumentTemplate {
    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::BadTemplate {
            model_id: self.model_id.clone(),
            message,
        };
        if self.model_id.is_empty() {
            return Err(err("model_id must be non-empty".into()));
        }
        for f in &self.fields {
            let r = &f.region;
            if r.x < 0.0 || r.y < 0.0 || r.x2() > self.width as f64 || r.y2() > self.height as f64 {
                return Err(err(format!("field region {r:?} outside the page")));
            }
            if r.class == RedactionClass::Text {
                if f.min_glyphs < 1 || f.max_glyphs < f.min_glyphs {
                    return Err(err("text field glyph range must satisfy 1 <= min <= max".into()));
                }
                if f.max_glyphs as f64 * TEXT_GLYPH_ADVANCE > r.w {
                    return Err(err("text region too narrow for max_glyphs".into()));
                }
                if r.h < 6.0 {
                    return Err(err("text region too short for glyph rendering".into()));
                }
            }
            if r.class == RedactionClass::Mrz {
                if r.w < 0.75 * self.width as f64 {
                    return Err(err("mrz band must span at least 0.75 of the page width".into()));
                }
                if r.w / r.h < 5.0 {
                    return Err(err("mrz band aspect ratio must be at least 5".into()));
                }
                if r.h < 6.0 {
                    return Err(err("mrz band too short to render two rows".into()));
                }
            }
            if r.class == RedactionClass::Signature && (r.w < 16.0 || r.h < 12.0) {
                return Err(err("signature region too small for a polyline".into()));
            }
        }
        Ok(())
    }
}

/// Affine disturbance applied to a rendered document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
    pub noise: u8,
    pub seed: u64,
}

pub const MAX_ROTATION_DEG: f64 = 20.0;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.25);

impl PerturbationParams {
    pub fn identity() -> PerturbationParams {
        PerturbationParams {
            rotation_deg: 0.0,
            scale: 1.0,
            dx: 0.0,
            dy: 0.0,
            noise: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation_deg.abs() > MAX_ROTATION_DEG || !self.rotation_deg.is_finite() {
            return Err(Error::OutsideEnvelope {
                name: "rotation_deg",
                value: self.rotation_deg,
                min: -MAX_ROTATION_DEG,
                max: MAX_ROTATION_DEG,
            });
        }
        if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&self.scale) {
            return Err(Error::OutsideEnvelope {
                name: "scale",
                value: self.scale,
                min: SCALE_RANGE.0,
                max: SCALE_RANGE.1,
            });
        }
        Ok(())
    }

    /// The forward transform: scale and rotate about the page center,
    /// then translate.
    pub fn transform(&self, width: usize, height: usize) -> AffineTransform {
        let cx = width as f64 / 2.0;
        let cy = height as f64 / 2.0;
        let back = AffineTransform::translation(cx + self.dx, cy + self.dy);
        let rot = AffineTransform::rotation_deg(self.rotation_deg);
        let scale = AffineTransform::scaling(self.scale);
        let center = AffineTransform::translation(-cx, -cy);
        compose(&compose(&compose(&back, &rot), &scale), &center)
    }
}

/// Sampling ranges for corpus perturbations. The defaults stay well inside
/// the envelope so scans remain alignable and detectable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbEnvelope {
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_translation: f64,
    pub noise: u8,
}

impl Default for PerturbEnvelope {
    fn default() -> Self {
        PerturbEnvelope {
            max_rotation_deg: 2.0,
            scale_min: 0.98,
            scale_max: 1.03,
            max_translation: 6.0,
            noise: 8,
        }
    }
}

impl PerturbEnvelope {
    pub fn sample(&self, seed: u64) -> PerturbationParams {
        let mut r = rng::from_seed(rng::mix(seed, 0x9e7b_a11d));
        PerturbationParams {
            rotation_deg: rng::range_f64(&mut r, -self.max_rotation_deg, self.max_rotation_deg),
            scale: rng::range_f64(&mut r, self.scale_min, self.scale_max),
            dx: rng::range_f64(&mut r, -self.max_translation, self.max_translation),
            dy: rng::range_f64(&mut r, -self.max_translation, self.max_translation),
            noise: self.noise,
            seed,
        }
    }
}

fn fill_block(img: &mut Raster, x0: usize, y0: usize, w: usize, h: usize, value: u8) {
    let x1 = (x0 + w).min(img.width());
    let y1 = (y0 + h).min(img.height());
    for y in y0.min(y1)..y1 {
        for x in x0.min(x1)..x1 {
            img.set(x, y, 0, value);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn draw_glyph_run(
    img: &mut Raster,
    rng: &mut ChaCha8Rng,
    x: usize,
    y: usize,
    count: usize,
    advance: usize,
    glyph_w: usize,
    glyph_h: usize,
) {
    for g in 0..count {
        let gx = x + g * advance;
        let value = 20 + rng::below(rng, 70) as u8;
        fill_block(img, gx, y, glyph_w, glyph_h, value);
        // A lighter notch column inside some glyphs keeps neighborhoods
        // distinguishable for descriptor matching.
        if rng::below(rng, 2) == 0 && glyph_w > 2 {
            let col = gx + 1 + rng::below(rng, glyph_w - 2);
            fill_block(img, col, y, 1, glyph_h, value.saturating_add(90));
        }
    }
}

fn draw_line(img: &mut Raster, from: (f64, f64), to: (f64, f64), thickness: usize, value: u8) {
    let steps = (to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil() as usize + 1;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = from.0 + t * (to.0 - from.0);
        let y = from.1 + t * (to.1 - from.1);
        fill_block(img, x.round() as usize, y.round() as usize, thickness, thickness, value);
    }
}

fn render_field(img: &mut Raster, rng: &mut ChaCha8Rng, field: &FieldSpec) -> BBox {
    let r = &field.region;
    let (x, y) = (r.x as usize, r.y as usize);
    let (w, h) = (r.w as usize, r.h as usize);
    match r.class {
        RedactionClass::Text => {
            let k = rng::range_usize(rng, field.min_glyphs, field.max_glyphs);
            let gy = y + TEXT_VERTICAL_INSET as usize;
            let gh = h - 2 * TEXT_VERTICAL_INSET as usize;
            draw_glyph_run(img, rng, x, gy, k, TEXT_GLYPH_ADVANCE as usize, TEXT_GLYPH_WIDTH, gh);
            BBox::new(
                r.x,
                r.y + TEXT_VERTICAL_INSET,
                k as f64 * TEXT_GLYPH_ADVANCE,
                r.h - 2.0 * TEXT_VERTICAL_INSET,
                RedactionClass::Text,
            )
            .expect("text ground truth box is positive")
        }
        RedactionClass::Face => {
            fill_block(img, x, y, w, h, 185);
            let head_w = w / 2;
            let head_h = h * 11 / 20;
            let head_x = x + (w - head_w) / 2;
            let head_y = y + h / 10;
            fill_block(img, head_x, head_y, head_w, head_h, 90);
            let eye_y = head_y + head_h * 3 / 10;
            fill_block(img, head_x + head_w / 4, eye_y, 2, 2, 30);
            fill_block(img, head_x + head_w * 3 / 4 - 2, eye_y, 2, 2, 30);
            fill_block(img, head_x + head_w / 3, head_y + head_h * 7 / 10, head_w / 3, 2, 50);
            fill_block(img, x + w / 10, y + h * 3 / 4, w * 8 / 10, h / 5, 110);
            r.clone()
        }
        RedactionClass::Mrz => {
            let row_h = (h - 4) / 2;
            for row in 0..2 {
                let y0 = y + row * (row_h + 4);
                let mut cx = x;
                while cx + 2 <= x + w {
                    if rng::below(rng, 10) != 0 {
                        fill_block(img, cx, y0, 2, row_h, 25);
                    }
                    cx += 3;
                }
            }
            r.clone()
        }
        RedactionClass::Barcode => {
            let mut cx = x;
            while cx < x + w {
                let bar = 2 + rng::below(rng, 3);
                fill_block(img, cx, y, bar.min(x + w - cx), h, 30);
                cx += bar + 2 + rng::below(rng, 2);
            }
            r.clone()
        }
        RedactionClass::Signature => {
            let points = 7 + rng::below(rng, 4);
            let mut prev = (
                r.x + 4.0,
                r.y + 4.0 + rng::below(rng, h - 8) as f64,
            );
            for p in 1..points {
                let px = r.x + 4.0 + p as f64 * (r.w - 8.0) / (points - 1) as f64;
                let py = r.y + 4.0 + rng::below(rng, h - 8) as f64;
                draw_line(img, prev, (px, py), 2, 45);
                prev = (px, py);
            }
            r.clone()
        }
    }
}

/// Render a document instance: deterministic for `(template, seed)`.
/// Ground-truth boxes tightly follow the rendered value for Text fields
/// and equal the template region for the fixed-content classes.
pub fn render(template: &DocumentTemplate, seed: u64) -> Result<(Raster, AnnotatedDocument)> {
    template.validate()?;
    let mut rng = rng::from_seed(rng::mix(seed, rng::fnv1a64(template.model_id.as_bytes())));
    let mut img = Raster::new_gray(template.width, template.height, BACKGROUND);

    for deco in &template.decorations {
        match *deco {
            Decoration::Frame { inset } => {
                let w = template.width - 2 * inset;
                let h = template.height - 2 * inset;
                fill_block(&mut img, inset, inset, w, 2, 90);
                fill_block(&mut img, inset, inset + h - 2, w, 2, 90);
                fill_block(&mut img, inset, inset, 2, h, 90);
                fill_block(&mut img, inset + w - 2, inset, 2, h, 90);
            }
            Decoration::Stripes { x, y, w, h } => {
                for row in (0..h).step_by(3) {
                    fill_block(&mut img, x, y + row, w, 1, 225);
                }
            }
            Decoration::Label { x, y, glyphs } => {
                draw_glyph_run(
                    &mut img,
                    &mut rng,
                    x,
                    y,
                    glyphs,
                    LABEL_ADVANCE,
                    LABEL_GLYPH_WIDTH,
                    LABEL_GLYPH_HEIGHT,
                );
            }
        }
    }

    let boxes: Vec<BBox> = template
        .fields
        .iter()
        .map(|f| render_field(&mut img, &mut rng, f))
        .collect();

    Ok((
        img,
        AnnotatedDocument {
            doc_id: format!("{}-{seed:016x}", template.model_id),
            image: String::new(),
            width: template.width,
            height: template.height,
            boxes,
        },
    ))
}

/// Warp a rendered document. Returns the perturbed raster (inverse-mapped,
/// nearest-neighbor, background fill), the ground truth mapped through the
/// same transform and clipped to the page, and the exact applied
/// transform (the planted oracle for alignment tests).
pub fn perturb(
    img: &Raster,
    ann: &AnnotatedDocument,
    params: &PerturbationParams,
) -> Result<(Raster, AnnotatedDocument, AffineTransform)> {
    params.validate()?;
    let t = params.transform(img.width(), img.height());
    let inv = t.inverse()?;
    let (w, h) = (img.width(), img.height());
    let gray = img.to_gray();

    let mut out = Raster::new_gray(w, h, 255);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let (sx, sy) = (sx.round() as i64, sy.round() as i64);
            if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                out.set(x, y, 0, gray.get(sx as usize, sy as usize, 0));
            }
        }
    }
    if params.noise > 0 {
        let amplitude = params.noise as i32;
        let mut noise_rng = rng::from_seed(rng::mix(params.seed, 0x6e01_5e00));
        for y in 0..h {
            for x in 0..w {
                let delta = rng::below(&mut noise_rng, 2 * amplitude as usize + 1) as i32 - amplitude;
                let v = (out.get(x, y, 0) as i32 + delta).clamp(0, 255) as u8;
                out.set(x, y, 0, v);
            }
        }
    }

    let mut boxes = Vec::with_capacity(ann.boxes.len());
    for b in &ann.boxes {
        let mapped = apply_transform(&t, b)?;
        if let Some(clipped) = mapped.clip(w as f64, h as f64) {
            boxes.push(clipped.with_source(b.source));
        }
    }
    Ok((
        out,
        AnnotatedDocument {
            doc_id: ann.doc_id.clone(),
            image: ann.image.clone(),
            width: w,
            height: h,
            boxes,
        },
        t,
    ))
}

/// Deterministic family of ID-card-like layouts. Model `i` varies page
/// size, field placement, layout side, and barcode presence so thumbnails
/// of different models are clearly distinguishable while documents of one
/// model stay close.
pub fn builtin_templates(count: usize) -> Vec<DocumentTemplate> {
    (0..count)
        .map(|i| {
            let mut r = rng::from_seed(rng::mix(TEMPLATE_SEED, i as u64));
            let width = 600 + 24 * (i % 4);
            let height = 400 + 16 * (i % 3);
            // Odd models mirror the whole layout horizontally; every
            // second pair shifts the value column and drops the barcode.
            let mirrored = i % 2 == 1;
            let has_barcode = (i / 2) % 2 == 0;
            let value_shift = 36 * ((i / 2) % 2);
            let face_drop = 24 * ((i / 2) % 2) + 24 * ((i / 4) % 2);
            // The text block drops only on barcode-free models, which have
            // four rows; five rows plus the drop would crowd the lower
            // bands within the square-closing bridge distance.
            let block_drop = if i % 2 == 0 { 40 * ((i / 2) % 2) } else { 0 };
            // Raising the band stays 25 px clear of the signature block so
            // the MRZ detector's square closing cannot bridge them.
            let mrz_raise = 20 * ((i / 2) % 2);

            let face_x = 32 + 8 * rng::below(&mut r, 3);
            let face_y = 54 + face_drop + 6 * rng::below(&mut r, 4);
            let face_w = 104 + 6 * rng::below(&mut r, 3);
            let face_h = 132;
            let rows = 4 + i % 2;
            let y0 = 56 + block_drop + 4 * rng::below(&mut r, 3);
            let step = 34 + 2 * rng::below(&mut r, 3);
            let value_x = 228 + value_shift + 6 * rng::below(&mut r, 4);

            let mirror = |x: usize, w: usize| if mirrored { width - x - w } else { x };

            let mut fields = vec![FieldSpec::fixed(
                BBox::new(
                    mirror(face_x, face_w) as f64,
                    face_y as f64,
                    face_w as f64,
                    face_h as f64,
                    RedactionClass::Face,
                )
                .unwrap(),
            )];
            // No page frame: a dark connected ring would bridge into the
            // MRZ band under the detector's square closing and swallow it.
            let mut decorations = vec![Decoration::Stripes {
                x: mirror(32, 120),
                y: height - 176,
                w: 120,
                h: 14,
            }];
            for row in 0..rows {
                let y = y0 + row * step;
                let glyphs = 3 + (i + row) % 2;
                decorations.push(Decoration::Label {
                    x: mirror(166, glyphs * LABEL_ADVANCE),
                    y: y + 3,
                    glyphs,
                });
                fields.push(FieldSpec::text(
                    BBox::new(
                        mirror(value_x, 200) as f64,
                        y as f64,
                        200.0,
                        18.0,
                        RedactionClass::Text,
                    )
                    .unwrap(),
                    8,
                    19,
                ));
            }
            fields.push(FieldSpec::fixed(
                BBox::new(
                    mirror(180, 170) as f64,
                    (height - 150) as f64,
                    170.0,
                    48.0,
                    RedactionClass::Signature,
                )
                .unwrap(),
            ));
            if has_barcode {
                fields.push(FieldSpec::fixed(
                    BBox::new(
                        mirror(width - 160, 116) as f64,
                        (height - 160) as f64,
                        116.0,
                        52.0,
                        RedactionClass::Barcode,
                    )
                    .unwrap(),
                ));
            }
            fields.push(FieldSpec::fixed(
                BBox::new(
                    (0.035 * width as f64).round(),
                    (height - 56 - mrz_raise) as f64,
                    (0.92 * width as f64).round(),
                    26.0,
                    RedactionClass::Mrz,
                )
                .unwrap(),
            ));

            DocumentTemplate {
                model_id: format!("m{i:02}"),
                width,
                height,
                fields,
                decorations,
            }
        })
        .collect()
}

/// Generate a corpus on disk: `docs_per_model` documents per template, the
/// first of which is the unperturbed reference. Writes PNM rasters,
/// annotation JSON, and `manifest.json`; byte-identical for the same seed.
pub fn make_corpus(
    templates: &[DocumentTemplate],
    docs_per_model: usize,
    envelope: &PerturbEnvelope,
    seed: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<ManifestEntry>> {
    for t in templates {
        t.validate()?;
    }
    let images_dir = out_dir.join("images");
    let ann_dir = out_dir.join("annotations");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::create_dir_all(&ann_dir).map_err(|e| Error::io(&ann_dir, e))?;

    struct Task<'a> {
        template: &'a DocumentTemplate,
        doc_index: usize,
        entry: ManifestEntry,
    }
    let mut tasks = Vec::new();
    for (ti, template) in templates.iter().enumerate() {
        for di in 0..docs_per_model {
            let doc_id = format!("{}-d{di:03}", template.model_id);
            tasks.push(Task {
                template,
                doc_index: di,
                entry: ManifestEntry {
                    doc_id: doc_id.clone(),
                    model_id: template.model_id.clone(),
                    image: format!("images/{doc_id}.pnm"),
                    annotation: format!("annotations/{doc_id}.json"),
                    reference: di == 0,
                },
            });
            let _ = ti;
        }
    }

    let build = |task: &Task| -> Result<()> {
        let doc_seed = rng::mix(
            seed,
            rng::mix(rng::fnv1a64(task.template.model_id.as_bytes()), task.doc_index as u64),
        );
        let (img, mut ann) = render(task.template, doc_seed)?;
        let (img, mut ann) = if task.entry.reference {
            (img, ann)
        } else {
            let params = envelope.sample(doc_seed);
            let (warped, warped_ann, _) = perturb(&img, &ann, &params)?;
            ann = warped_ann;
            (warped, ann)
        };
        ann.doc_id = task.entry.doc_id.clone();
        ann.image = task.entry.image.clone();
        crate::fsutil::write_atomic(&out_dir.join(&task.entry.image), &write_pnm(&img))?;
        write_annotation(&ann, &out_dir.join(&task.entry.annotation))
    };

    let jobs = jobs.max(1).min(tasks.len().max(1));
    if jobs <= 1 {
        for task in &tasks {
            build(task)?;
        }
    } else {
        let chunk = tasks.len().div_ceil(jobs);
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for part in tasks.chunks(chunk) {
                handles.push(scope.spawn(move || -> Result<()> {
                    for task in part {
                        build(task)?;
                    }
                    Ok(())
                }));
            }
            for handle in handles {
                handle.join().expect("corpus worker panicked")?;
            }
            Ok(())
        })?;
    }

    let entries: Vec<ManifestEntry> = tasks.into_iter().map(|t| t.entry).collect();
    write_manifest(&entries, &out_dir.join("manifest.json"))?;
    Ok(entries)
}
