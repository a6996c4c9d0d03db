//! Axis-aligned boxes, affine transforms, and the IoU primitive used by
//! every other module.
//!
//! Boxes are stored as `(x, y, w, h)` floats with a top-left origin and y
//! increasing downward, matching the raster convention. Transformed boxes
//! become the axis-aligned hull of the mapped corners; rotated rectangles
//! are out of scope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The kinds of content a redaction box can cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedactionClass {
    Text,
    Face,
    Signature,
    Mrz,
    Barcode,
}

impl RedactionClass {
    pub const ALL: [RedactionClass; 5] = [
        RedactionClass::Text,
        RedactionClass::Face,
        RedactionClass::Signature,
        RedactionClass::Mrz,
        RedactionClass::Barcode,
    ];

    /// Canonical lowercase name used in annotation files.
    pub fn as_str(self) -> &'static str {
        match self {
            RedactionClass::Text => "text",
            RedactionClass::Face => "face",
            RedactionClass::Signature => "signature",
            RedactionClass::Mrz => "mrz",
            RedactionClass::Barcode => "barcode",
        }
    }

    /// Case-insensitive parse of the canonical class names.
    pub fn parse(s: &str) -> Option<RedactionClass> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Some(RedactionClass::Text),
            "face" => Some(RedactionClass::Face),
            "signature" => Some(RedactionClass::Signature),
            "mrz" => Some(RedactionClass::Mrz),
            "barcode" => Some(RedactionClass::Barcode),
            _ => None,
        }
    }
}

impl std::fmt::Display for RedactionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a box came from: a detector, the transferred reference, or the
/// width-adjustment step of the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSource {
    Predicted,
    #[serde(rename = "reference")]
    ReferenceTransformed,
    Adjusted,
}

impl BoxSource {
    pub fn as_str(self) -> &'static str {
        match self {
            BoxSource::Predicted => "predicted",
            BoxSource::ReferenceTransformed => "reference",
            BoxSource::Adjusted => "adjusted",
        }
    }

    pub fn parse(s: &str) -> Option<BoxSource> {
        match s.to_ascii_lowercase().as_str() {
            "predicted" => Some(BoxSource::Predicted),
            "reference" => Some(BoxSource::ReferenceTransformed),
            "adjusted" => Some(BoxSource::Adjusted),
            _ => None,
        }
    }
}

/// An axis-aligned redaction box.
///
/// Degenerate boxes (`w <= 0` or `h <= 0`) are rejected at construction,
/// not silently clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class: RedactionClass,
    pub score: f64,
    pub source: BoxSource,
}

impl BBox {
    /// A box with score 1.0 and source `Predicted`.
    pub fn new(x: f64, y: f64, w: f64, h: f64, class: RedactionClass) -> Result<BBox> {
        if w <= 0.0 || h <= 0.0 || !w.is_finite() || !h.is_finite() {
            return Err(Error::InvalidBox { w, h });
        }
        Ok(BBox {
            x,
            y,
            w,
            h,
            class,
            score: 1.0,
            source: BoxSource::Predicted,
        })
    }

    pub fn with_score(mut self, score: f64) -> Result<BBox> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        self.score = score;
        Ok(self)
    }

    pub fn with_source(mut self, source: BoxSource) -> BBox {
        self.source = source;
        self
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersect with the page rectangle `[0, width] x [0, height]`.
    /// Returns `None` when nothing of the box remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.x2().min(width);
        let y1 = self.y2().min(height);
        if x1 - x0 > 0.0 && y1 - y0 > 0.0 {
            let mut b = self.clone();
            b.x = x0;
            b.y = y0;
            b.w = x1 - x0;
            b.h = y1 - y0;
            Some(b)
        } else {
            None
        }
    }
}

/// Intersection over union of two boxes. Symmetric, in `[0, 1]`.
///
/// Areas are derived from the same corner coordinates as the intersection
/// extents, so identical boxes score exactly 1.0 even when `x + w` is not
/// representable.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax2, ay2) = (a.x2(), a.y2());
    let (bx2, by2) = (b.x2(), b.y2());
    let ix = (ax2.min(bx2) - a.x.max(b.x)).max(0.0);
    let iy = (ay2.min(by2) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let area_a = (ax2 - a.x) * (ay2 - a.y);
    let area_b = (bx2 - b.x) * (by2 - b.y);
    inter / (area_a + area_b - inter)
}

/// A 2x3 affine transform `[[a, b, tx], [c, d, ty]]` mapping reference
/// coordinates to target coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

const DET_EPS: f64 = 1e-12;

impl AffineTransform {
    pub fn identity() -> AffineTransform {
        AffineTransform {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> AffineTransform {
        AffineTransform {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    pub fn scaling(s: f64) -> AffineTransform {
        AffineTransform {
            m: [[s, 0.0, 0.0], [0.0, s, 0.0]],
        }
    }

    /// Rotation about the origin; positive angles rotate `(1, 0)` toward
    /// `(0, 1)` (clockwise on screen with y pointing down).
    pub fn rotation_deg(deg: f64) -> AffineTransform {
        let r = deg.to_radians();
        let (sin, cos) = r.sin_cos();
        AffineTransform {
            m: [[cos, -sin, 0.0], [sin, cos, 0.0]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Determinant of the 2x2 linear part.
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > DET_EPS
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.det();
        if det.abs() <= DET_EPS {
            return Err(Error::DegenerateTransform { det });
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Ok(AffineTransform {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }
}

/// Composition: the result applies `second` first, then `first`.
pub fn compose(first: &AffineTransform, second: &AffineTransform) -> AffineTransform {
    let f = &first.m;
    let s = &second.m;
    let mut m = [[0.0; 3]; 2];
    for row in 0..2 {
        for col in 0..3 {
            m[row][col] = f[row][0] * s[0][col] + f[row][1] * s[1][col];
        }
        m[row][2] += f[row][2];
    }
    AffineTransform { m }
}

/// Map all four corners of `b` through `t` and return the axis-aligned
/// hull. Class and score are preserved; the source becomes
/// `ReferenceTransformed`.
pub fn apply_transform(t: &AffineTransform, b: &BBox) -> Result<BBox> {
    if !t.is_invertible() {
        return Err(Error::DegenerateTransform { det: t.det() });
    }
    let corners = [
        t.apply(b.x, b.y),
        t.apply(b.x2(), b.y),
        t.apply(b.x, b.y2()),
        t.apply(b.x2(), b.y2()),
    ];
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for (cx, cy) in corners {
        x0 = x0.min(cx);
        y0 = y0.min(cy);
        x1 = x1.max(cx);
        y1 = y1.max(cy);
    }
    let mut out = b.clone();
    out.x = x0;
    out.y = y0;
    out.w = x1 - x0;
    out.h = y1 - y0;
    out.source = BoxSource::ReferenceTransformed;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn text_box(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h, RedactionClass::Text).unwrap()
    }

    #[test]
    fn iou_identity_is_one() {
        let a = text_box(3.0, 4.0, 10.0, 5.0);
        assert_eq!(iou(&a, &a), 1.0);
        // Exact even when x + w is not representable.
        let b = text_box(0.1, 0.3, 0.2, 0.7);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = text_box(0.0, 0.0, 10.0, 10.0);
        let b = text_box(20.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // intersection 50, union 150
        let a = text_box(0.0, 0.0, 10.0, 10.0);
        let b = text_box(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0, RedactionClass::Text).is_err());
        assert!(BBox::new(0.0, 0.0, 5.0, -1.0, RedactionClass::Text).is_err());
        assert!(text_box(0.0, 0.0, 1.0, 1.0).with_score(1.5).is_err());
    }

    #[test]
    fn apply_identity_preserves_geometry() {
        let b = text_box(10.0, 10.0, 20.0, 20.0);
        let out = apply_transform(&AffineTransform::identity(), &b).unwrap();
        assert_eq!((out.x, out.y, out.w, out.h), (10.0, 10.0, 20.0, 20.0));
        assert_eq!(out.source, BoxSource::ReferenceTransformed);
    }

    #[test]
    fn apply_translation() {
        let b = text_box(10.0, 10.0, 20.0, 20.0);
        let t = AffineTransform::translation(5.0, -3.0);
        let out = apply_transform(&t, &b).unwrap();
        assert_eq!((out.x, out.y, out.w, out.h), (15.0, 7.0, 20.0, 20.0));
    }

    #[test]
    fn apply_rotation_hull() {
        // 90 degrees about the origin maps (x, y) -> (-y, x); the hull of
        // (0,0,10,20) is (-20,0,20,10).
        let b = text_box(0.0, 0.0, 10.0, 20.0);
        let t = AffineTransform::rotation_deg(90.0);
        let out = apply_transform(&t, &b).unwrap();
        assert!((out.x - -20.0).abs() < 1e-9);
        assert!((out.y - 0.0).abs() < 1e-9);
        assert!((out.w - 20.0).abs() < 1e-9);
        assert!((out.h - 10.0).abs() < 1e-9);
    }

    #[test]
    fn apply_degenerate_transform_errors() {
        let t = AffineTransform {
            m: [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
        };
        let b = text_box(0.0, 0.0, 1.0, 1.0);
        assert!(apply_transform(&t, &b).is_err());
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = compose(
            &AffineTransform::rotation_deg(30.0),
            &AffineTransform::translation(4.0, 9.0),
        );
        let id = compose(&AffineTransform::identity(), &t);
        assert_eq!(id.m, t.m);

        let round = compose(&t, &t.inverse().unwrap());
        for row in 0..2 {
            for col in 0..3 {
                let expect = AffineTransform::identity().m[row][col];
                assert!((round.m[row][col] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn compose_translations_add() {
        let t = compose(
            &AffineTransform::translation(1.0, 2.0),
            &AffineTransform::translation(3.0, 4.0),
        );
        assert_eq!(t.m[0][2], 4.0);
        assert_eq!(t.m[1][2], 6.0);
    }

    #[test]
    fn clip_drops_offpage_box() {
        let b = text_box(-30.0, 5.0, 20.0, 10.0);
        assert!(b.clip(100.0, 100.0).is_none());
        let c = text_box(90.0, 5.0, 20.0, 10.0).clip(100.0, 100.0).unwrap();
        assert_eq!((c.x, c.w), (90.0, 10.0));
    }

    #[test]
    fn class_names_round_trip() {
        for class in RedactionClass::ALL {
            assert_eq!(RedactionClass::parse(class.as_str()), Some(class));
        }
        assert_eq!(RedactionClass::parse("MRZ"), Some(RedactionClass::Mrz));
        assert_eq!(RedactionClass::parse("bogus"), None);
        assert_eq!(
            BoxSource::parse("reference"),
            Some(BoxSource::ReferenceTransformed)
        );
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            aw in 0.1..40.0f64, ah in 0.1..40.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            bw in 0.1..40.0f64, bh in 0.1..40.0f64,
        ) {
            let a = text_box(ax, ay, aw, ah);
            let b = text_box(bx, by, bw, bh);
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn composed_transform_equals_sequential(
            deg in -20.0..20.0f64,
            s in 0.8..1.25f64,
            tx in -30.0..30.0f64,
            ty in -30.0..30.0f64,
            px in -100.0..100.0f64,
            py in -100.0..100.0f64,
        ) {
            let first = AffineTransform::rotation_deg(deg);
            let second = compose(&AffineTransform::scaling(s), &AffineTransform::translation(tx, ty));
            let both = compose(&first, &second);
            let (sx, sy) = second.apply(px, py);
            let (ex, ey) = first.apply(sx, sy);
            let (cx, cy) = both.apply(px, py);
            prop_assert!((cx - ex).abs() < 1e-6);
            prop_assert!((cy - ey).abs() < 1e-6);
        }
    }
}
