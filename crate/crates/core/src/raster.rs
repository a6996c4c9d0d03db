//! Pixel-grid container, PNM file IO, and the classical image operators
//! (Scharr, morphology, Otsu, connected components) used by the detectors
//! and the synthetic generator.
//!
//! The interchange format is binary PNM (P5 gray / P6 RGB, maxval 255):
//! trivially bit-exact and dependency-free. Border policy for convolution
//! and morphology is edge replication.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{BBox, RedactionClass};

/// Row-major 8-bit image, 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new_gray(width: usize, height: usize, fill: u8) -> Raster {
        assert!(width >= 1 && height >= 1, "raster dimensions must be >= 1");
        Raster {
            width,
            height,
            channels: 1,
            data: vec![fill; width * height],
        }
    }

    pub fn new_rgb(width: usize, height: usize, fill: [u8; 3]) -> Raster {
        assert!(width >= 1 && height >= 1, "raster dimensions must be >= 1");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Raster {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Raster> {
        if width < 1 || height < 1 {
            return Err(Error::PnmFormat(format!(
                "dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::PnmFormat(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::PnmFormat(format!(
                "payload length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Sample channel 0 with coordinates clamped to the image bounds.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[(y * self.width + x) * self.channels]
    }

    /// Grayscale view of the image: identity for single-channel input,
    /// BT.601 luma for RGB.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            let (r, g, b) = (px[0] as u32, px[1] as u32, px[2] as u32);
            data.push(((77 * r + 150 * g + 29 * b + 128) >> 8) as u8);
        }
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// RGB view: identity for 3-channel input, channel replication for gray.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn load_pnm(path: &Path) -> Result<Raster> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        read_pnm(&bytes)
    }

    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &write_pnm(self))
    }
}

/// Signed convolution responses with the same dimensions as the source.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GradientMap {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Min-max normalize `|values|` to a 0..=255 gray raster. A constant
    /// map yields an all-zero raster.
    pub fn abs_normalized(&self) -> Raster {
        let abs: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        let max = abs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let min = abs.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let span = max - min;
        let data = if span <= 0.0 {
            vec![0u8; abs.len()]
        } else {
            abs.iter()
                .map(|v| ((v - min) / span * 255.0).round() as u8)
                .collect()
        };
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

// ---------------------------------------------------------------------------
// PNM
// ---------------------------------------------------------------------------

/// Parse a binary PNM file (P5 gray or P6 RGB, maxval 255).
pub fn read_pnm(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0usize;
    let magic = take_token(bytes, &mut pos)
        .ok_or_else(|| Error::PnmFormat("missing magic number".into()))?;
    let channels = match magic.as_slice() {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::PnmFormat(format!(
                "unsupported magic {:?}, expected P5 or P6",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = take_number(bytes, &mut pos, "width")?;
    let height = take_number(bytes, &mut pos, "height")?;
    let maxval = take_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::PnmFormat(format!("unsupported maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::PnmFormat("missing whitespace after maxval".into())),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::PnmFormat("dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::PnmFormat(format!(
            "truncated payload: expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::PnmFormat(format!(
            "trailing {} bytes after payload",
            payload.len() - expected
        )));
    }
    Raster::from_data(width, height, channels, payload.to_vec())
}

/// Serialize to canonical binary PNM: `read_pnm(write_pnm(r))` reproduces
/// `r` and canonical files round-trip byte-identically.
pub fn write_pnm(img: &Raster) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

fn take_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(bytes[start..*pos].to_vec())
    } else {
        None
    }
}

fn take_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::PnmFormat(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::PnmFormat(format!("malformed {what}")))
}

// ---------------------------------------------------------------------------
// Convolution and morphology
// ---------------------------------------------------------------------------

fn require_gray(img: &Raster) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::NotGrayscale {
            channels: img.channels,
        });
    }
    Ok(())
}

/// Horizontal Scharr derivative (3x3 kernel, outer-column weights +-3 and
/// +-10), borders by edge replication.
pub fn scharr_x(img: &Raster) -> Result<GradientMap> {
    require_gray(img)?;
    if img.width < 3 || img.height < 3 {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            min: 3,
        });
    }
    let mut values = vec![0.0f64; img.width * img.height];
    for y in 0..img.height as i64 {
        for x in 0..img.width as i64 {
            let mut acc = 0.0;
            for (dy, wy) in [(-1i64, 3.0), (0, 10.0), (1, 3.0)] {
                let right = img.get_clamped(x + 1, y + dy) as f64;
                let left = img.get_clamped(x - 1, y + dy) as f64;
                acc += wy * (right - left);
            }
            values[y as usize * img.width + x as usize] = acc;
        }
    }
    Ok(GradientMap {
        width: img.width,
        height: img.height,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
    Blackhat,
}

/// Grayscale min/max morphology with a `kw x kh` rectangular kernel (both
/// odd). `Blackhat` is `close(img) - img`. Borders by edge replication,
/// which for min/max reduces to clipping the window.
pub fn morph(img: &Raster, kernel: (usize, usize), op: MorphOp) -> Result<Raster> {
    require_gray(img)?;
    let (kw, kh) = kernel;
    if kw == 0 || kh == 0 || kw % 2 == 0 || kh % 2 == 0 {
        return Err(Error::BadKernel { w: kw, h: kh });
    }
    match op {
        MorphOp::Erode => Ok(erode_dilate(img, kw, kh, false)),
        MorphOp::Dilate => Ok(erode_dilate(img, kw, kh, true)),
        MorphOp::Open => {
            let e = erode_dilate(img, kw, kh, false);
            Ok(erode_dilate(&e, kw, kh, true))
        }
        MorphOp::Close => {
            let d = erode_dilate(img, kw, kh, true);
            Ok(erode_dilate(&d, kw, kh, false))
        }
        MorphOp::Blackhat => {
            let closed = morph(img, kernel, MorphOp::Close)?;
            let data = closed
                .data
                .iter()
                .zip(&img.data)
                .map(|(&c, &i)| c.saturating_sub(i))
                .collect();
            Ok(Raster {
                width: img.width,
                height: img.height,
                channels: 1,
                data,
            })
        }
    }
}

/// Running min/max over one line with edge replication, O(1) per pixel
/// (van Herk/Gil-Werman): block-aligned prefix/suffix extrema over a
/// replication-padded copy.
fn line_min_max(line: &[u8], radius: usize, take_max: bool, scratch: &mut Vec<u8>, out: &mut [u8]) {
    debug_assert_eq!(line.len(), out.len());
    if radius == 0 {
        out.copy_from_slice(line);
        return;
    }
    let n = line.len();
    let k = 2 * radius + 1;
    let pick = |a: u8, b: u8| if take_max { a.max(b) } else { a.min(b) };

    // Padded input: radius replicated samples on each side.
    scratch.clear();
    scratch.resize(n + 2 * radius, 0);
    scratch[..radius].fill(line[0]);
    scratch[radius..radius + n].copy_from_slice(line);
    scratch[radius + n..].fill(line[n - 1]);
    let padded = &scratch[..];
    let m = padded.len();

    // g: running extremum from the left within each k-block;
    // h: running extremum from the right within each k-block.
    let mut g = vec![0u8; m];
    let mut h = vec![0u8; m];
    for i in 0..m {
        g[i] = if i % k == 0 {
            padded[i]
        } else {
            pick(g[i - 1], padded[i])
        };
    }
    for i in (0..m).rev() {
        h[i] = if i % k == k - 1 || i == m - 1 {
            padded[i]
        } else {
            pick(h[i + 1], padded[i])
        };
    }
    for (i, slot) in out.iter_mut().enumerate() {
        // Window [i, i + 2*radius] in padded coordinates.
        *slot = pick(h[i], g[i + 2 * radius]);
    }
}

/// Separable running min/max: rows then columns.
fn erode_dilate(img: &Raster, kw: usize, kh: usize, take_max: bool) -> Raster {
    let (w, h) = (img.width, img.height);
    let mut scratch = Vec::new();

    let mut horiz = vec![0u8; img.data.len()];
    for y in 0..h {
        line_min_max(
            &img.data[y * w..(y + 1) * w],
            kw / 2,
            take_max,
            &mut scratch,
            &mut horiz[y * w..(y + 1) * w],
        );
    }

    let mut out = vec![0u8; img.data.len()];
    let mut column = vec![0u8; h];
    let mut column_out = vec![0u8; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = horiz[y * w + x];
        }
        line_min_max(&column, kh / 2, take_max, &mut scratch, &mut column_out);
        for y in 0..h {
            out[y * w + x] = column_out[y];
        }
    }
    Raster {
        width: img.width,
        height: img.height,
        channels: 1,
        data: out,
    }
}

/// Threshold maximizing between-class variance over the splits
/// `{v <= t} / {v > t}`; ties broken by the smallest threshold. A constant
/// image returns its single value.
pub fn otsu_threshold(img: &Raster) -> Result<u8> {
    require_gray(img)?;
    let mut hist = [0u64; 256];
    for &v in &img.data {
        hist[v as usize] += 1;
    }
    let total = img.data.len() as f64;
    let total_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &n)| v as f64 * n as f64)
        .sum();

    let mut best_t: Option<u8> = None;
    let mut best_var = f64::NEG_INFINITY;
    let mut count0 = 0.0;
    let mut sum0 = 0.0;
    for (t, &bin) in hist.iter().enumerate() {
        count0 += bin as f64;
        sum0 += t as f64 * bin as f64;
        let count1 = total - count0;
        if count0 == 0.0 || count1 == 0.0 {
            continue;
        }
        let mean0 = sum0 / count0;
        let mean1 = (total_sum - sum0) / count1;
        let var = count0 * count1 * (mean0 - mean1) * (mean0 - mean1);
        if var > best_var {
            best_var = var;
            best_t = Some(t as u8);
        }
    }
    Ok(best_t.unwrap_or_else(|| {
        // Constant image: every split leaves one class empty.
        img.data[0]
    }))
}

/// Binarize: foreground (255) where `value > t`.
pub fn binarize(img: &Raster, t: u8) -> Result<Raster> {
    require_gray(img)?;
    let data = img.data.iter().map(|&v| if v > t { 255 } else { 0 }).collect();
    Ok(Raster {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    })
}

/// One tight bounding box (with the given class, score 1.0) per
/// 8-connected foreground component, where foreground is `value > 0`.
/// Sorted by `(y, x)` of the box origin.
pub fn connected_components(img: &Raster, class: RedactionClass) -> Vec<BBox> {
    debug_assert_eq!(img.channels, 1, "connected_components expects gray input");
    let (w, h) = (img.width, img.height);
    let mut visited = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();

    for seed in 0..w * h {
        if visited[seed] || img.data[seed * img.channels] == 0 {
            continue;
        }
        visited[seed] = true;
        stack.push(seed);
        let (mut x0, mut y0) = (seed % w, seed / w);
        let (mut x1, mut y1) = (x0, y0);
        while let Some(idx) = stack.pop() {
            let (cx, cy) = (idx % w, idx / w);
            x0 = x0.min(cx);
            y0 = y0.min(cy);
            x1 = x1.max(cx);
            y1 = y1.max(cy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = cx as i64 + dx;
                    let ny = cy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if !visited[nidx] && img.data[nidx * img.channels] > 0 {
                        visited[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        boxes.push(
            BBox::new(
                x0 as f64,
                y0 as f64,
                (x1 - x0 + 1) as f64,
                (y1 - y0 + 1) as f64,
                class,
            )
            .expect("component extents are positive"),
        );
    }
    boxes.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap());
    boxes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawMode {
    Fill,
    Outline,
}

/// Draw a box clipped to the image bounds; `Fill` paints the interior,
/// `Outline` the 1-px border. For gray rasters only `color[0]` is used.
pub fn draw_rect(img: &Raster, b: &BBox, color: [u8; 3], mode: DrawMode) -> Raster {
    let mut out = img.clone();
    draw_rect_mut(&mut out, b, color, mode);
    out
}

pub fn draw_rect_mut(img: &mut Raster, b: &BBox, color: [u8; 3], mode: DrawMode) {
    let x0 = b.x.round().max(0.0) as i64;
    let y0 = b.y.round().max(0.0) as i64;
    let x1 = (b.x2().round() as i64).min(img.width as i64);
    let y1 = (b.y2().round() as i64).min(img.height as i64);
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let mut paint = |x: i64, y: i64| {
        for c in 0..img.channels {
            img.set(x as usize, y as usize, c, color[c.min(2)]);
        }
    };
    match mode {
        DrawMode::Fill => {
            for y in y0..y1 {
                for x in x0..x1 {
                    paint(x, y);
                }
            }
        }
        DrawMode::Outline => {
            for x in x0..x1 {
                paint(x, y0);
                paint(x, y1 - 1);
            }
            for y in y0..y1 {
                paint(x0, y);
                paint(x1 - 1, y);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pnm_p5_single_pixel() {
        let img = read_pnm(b"P5\n1 1\n255\n\x00").unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (1, 1, 1));
        assert_eq!(img.data(), &[0]);
    }

    #[test]
    fn pnm_p6_sample_order() {
        let mut img = Raster::new_rgb(2, 1, [0, 0, 0]);
        img.set(0, 0, 0, 255);
        img.set(1, 0, 1, 255);
        let bytes = write_pnm(&img);
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 0, 0, 0, 255, 0]);
        assert_eq!(read_pnm(&bytes).unwrap(), img);
    }

    #[test]
    fn pnm_rejects_malformed() {
        assert!(read_pnm(b"P4\n1 1\n255\n\x00").is_err());
        assert!(read_pnm(b"P5\n2 2\n255\n\x00\x00").is_err()); // truncated
        assert!(read_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err()); // maxval
        assert!(read_pnm(b"P5\n1 1\n255\n\x00\x00").is_err()); // trailing
    }

    #[test]
    fn scharr_constant_and_stripes_are_zero() {
        let img = Raster::new_gray(8, 8, 100);
        let g = scharr_x(&img).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));

        // Horizontal stripes: constant along x.
        let mut img = Raster::new_gray(8, 8, 0);
        for y in (0..8).step_by(2) {
            for x in 0..8 {
                img.set(x, y, 0, 200);
            }
        }
        let g = scharr_x(&img).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scharr_vertical_step_response() {
        // Step 0 -> 255 between columns 3 and 4: the full kernel weight
        // (3 + 10 + 3 = 16) times 255 shows up on both columns adjacent
        // to the step at interior rows.
        let mut img = Raster::new_gray(9, 9, 0);
        for y in 0..9 {
            for x in 4..9 {
                img.set(x, y, 0, 255);
            }
        }
        let g = scharr_x(&img).unwrap();
        let max = g.max_abs();
        assert_eq!(max, 255.0 * 16.0);
        for y in 1..8 {
            assert_eq!(g.values[y * 9 + 4].abs(), 255.0 * 16.0);
            assert_eq!(g.values[y * 9 + 3].abs(), 255.0 * 16.0);
            assert_eq!(g.values[y * 9 + 1], 0.0);
        }
        assert!(scharr_x(&Raster::new_rgb(8, 8, [0, 0, 0])).is_err());
    }

    #[test]
    fn morph_dilate_point_and_constants() {
        let mut img = Raster::new_gray(7, 7, 0);
        img.set(3, 3, 0, 255);
        let d = morph(&img, (3, 3), MorphOp::Dilate).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(d.get(x, y, 0), if inside { 255 } else { 0 });
            }
        }

        let flat = Raster::new_gray(6, 5, 77);
        for op in [MorphOp::Erode, MorphOp::Close, MorphOp::Open] {
            assert_eq!(morph(&flat, (3, 3), op).unwrap(), flat);
        }
        let bh = morph(&flat, (5, 3), MorphOp::Blackhat).unwrap();
        assert!(bh.data().iter().all(|&v| v == 0));
        assert!(morph(&flat, (4, 3), MorphOp::Erode).is_err());
    }

    #[test]
    fn otsu_bimodal_and_constant() {
        let mut img = Raster::new_gray(4, 4, 0);
        for x in 0..4 {
            for y in 2..4 {
                img.set(x, y, 0, 255);
            }
        }
        let t = otsu_threshold(&img).unwrap();
        assert!(t < 255);
        let bin = binarize(&img, t).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(bin.get(x, y, 0) == 255, y >= 2);
            }
        }
        assert_eq!(otsu_threshold(&Raster::new_gray(3, 3, 42)).unwrap(), 42);
    }

    /// Independent oracle: exhaustive search over all 256 thresholds with
    /// per-class means computed directly from the pixel list.
    fn otsu_brute_force(img: &Raster) -> u8 {
        let mut best = (f64::NEG_INFINITY, None);
        for t in 0..256u32 {
            let lo: Vec<f64> = img
                .data()
                .iter()
                .filter(|&&v| (v as u32) <= t)
                .map(|&v| v as f64)
                .collect();
            let hi: Vec<f64> = img
                .data()
                .iter()
                .filter(|&&v| (v as u32) > t)
                .map(|&v| v as f64)
                .collect();
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let m0: f64 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1: f64 = hi.iter().sum::<f64>() / hi.len() as f64;
            let var = lo.len() as f64 * hi.len() as f64 * (m0 - m1) * (m0 - m1);
            if var > best.0 {
                best = (var, Some(t as u8));
            }
        }
        best.1.unwrap_or(img.data()[0])
    }

    #[test]
    fn otsu_matches_brute_force_on_random_images() {
        let mut rng = crate::rng::from_seed(11);
        for _ in 0..50 {
            let data: Vec<u8> = (0..64).map(|_| crate::rng::byte(&mut rng)).collect();
            let img = Raster::from_data(8, 8, 1, data).unwrap();
            assert_eq!(otsu_threshold(&img).unwrap(), otsu_brute_force(&img));
        }
    }

    #[test]
    fn components_blocks_and_diagonal() {
        let mut img = Raster::new_gray(10, 10, 0);
        for y in 1..4 {
            for x in 1..5 {
                img.set(x, y, 0, 255);
            }
        }
        let boxes = connected_components(&img, RedactionClass::Text);
        assert_eq!(boxes.len(), 1);
        assert_eq!(
            (boxes[0].x, boxes[0].y, boxes[0].w, boxes[0].h),
            (1.0, 1.0, 4.0, 3.0)
        );

        img.set(8, 8, 0, 200);
        assert_eq!(connected_components(&img, RedactionClass::Text).len(), 2);

        // Two diagonally touching pixels form one 8-connected component.
        let mut diag = Raster::new_gray(5, 5, 0);
        diag.set(1, 1, 0, 255);
        diag.set(2, 2, 0, 255);
        let boxes = connected_components(&diag, RedactionClass::Text);
        assert_eq!(boxes.len(), 1);
        assert_eq!((boxes[0].w, boxes[0].h), (2.0, 2.0));
    }

    #[test]
    fn draw_rect_fill_and_outline() {
        let img = Raster::new_gray(5, 5, 200);
        let full = BBox::new(0.0, 0.0, 5.0, 5.0, RedactionClass::Text).unwrap();
        let filled = draw_rect(&img, &full, [0, 0, 0], DrawMode::Fill);
        assert!(filled.data().iter().all(|&v| v == 0));

        let off = BBox::new(10.0, 10.0, 3.0, 3.0, RedactionClass::Text).unwrap();
        assert_eq!(draw_rect(&img, &off, [0, 0, 0], DrawMode::Fill), img);

        let b = BBox::new(1.0, 1.0, 3.0, 3.0, RedactionClass::Text).unwrap();
        let outlined = draw_rect(&img, &b, [0, 0, 0], DrawMode::Outline);
        let mut dark = 0;
        for y in 0..5 {
            for x in 0..5 {
                if outlined.get(x, y, 0) == 0 {
                    dark += 1;
                    assert!((1..4).contains(&x) && (1..4).contains(&y));
                    assert!(x == 1 || x == 3 || y == 1 || y == 3);
                }
            }
        }
        assert_eq!(dark, 8);
        assert_eq!(outlined.get(2, 2, 0), 200);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn erode_dilate_match_naive_window(
            seed in any::<u64>(),
            kw in 0usize..4,
            kh in 0usize..4,
            take_max in any::<bool>(),
        ) {
            let mut rng = crate::rng::from_seed(seed);
            let (w, h) = (13usize, 8usize);
            let data: Vec<u8> = (0..w * h).map(|_| crate::rng::byte(&mut rng)).collect();
            let img = Raster::from_data(w, h, 1, data).unwrap();
            let kernel = (2 * kw + 1, 2 * kh + 1);
            let op = if take_max { MorphOp::Dilate } else { MorphOp::Erode };
            let fast = morph(&img, kernel, op).unwrap();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut v = img.get_clamped(x, y);
                    for dy in -(kh as i64)..=kh as i64 {
                        for dx in -(kw as i64)..=kw as i64 {
                            let p = img.get_clamped(x + dx, y + dy);
                            v = if take_max { v.max(p) } else { v.min(p) };
                        }
                    }
                    prop_assert_eq!(fast.get(x as usize, y as usize, 0), v);
                }
            }
        }

        #[test]
        fn close_is_extensive_open_is_anti_extensive(
            seed in any::<u64>(),
            kw in 0usize..3,
            kh in 0usize..3,
        ) {
            let mut rng = crate::rng::from_seed(seed);
            let data: Vec<u8> = (0..12 * 9).map(|_| crate::rng::byte(&mut rng)).collect();
            let img = Raster::from_data(12, 9, 1, data).unwrap();
            let kernel = (2 * kw + 1, 2 * kh + 1);
            let closed = morph(&img, kernel, MorphOp::Close).unwrap();
            let opened = morph(&img, kernel, MorphOp::Open).unwrap();
            for i in 0..img.data().len() {
                prop_assert!(closed.data()[i] >= img.data()[i]);
                prop_assert!(opened.data()[i] <= img.data()[i]);
            }
        }

        #[test]
        fn pnm_round_trip(seed in any::<u64>(), rgb in any::<bool>()) {
            let mut rng = crate::rng::from_seed(seed);
            let channels = if rgb { 3 } else { 1 };
            let data: Vec<u8> = (0..7 * 5 * channels).map(|_| crate::rng::byte(&mut rng)).collect();
            let img = Raster::from_data(7, 5, channels, data).unwrap();
            let bytes = write_pnm(&img);
            prop_assert_eq!(read_pnm(&bytes).unwrap(), img);
            // Canonical files round-trip byte-identically.
            prop_assert_eq!(write_pnm(&read_pnm(&bytes).unwrap()), bytes);
        }

        #[test]
        fn components_cover_foreground(seed in any::<u64>()) {
            let mut rng = crate::rng::from_seed(seed);
            let data: Vec<u8> = (0..16 * 12)
                .map(|_| if crate::rng::below(&mut rng, 4) == 0 { 255 } else { 0 })
                .collect();
            let img = Raster::from_data(16, 12, 1, data).unwrap();
            let boxes = connected_components(&img, RedactionClass::Text);
            for b in &boxes {
                // Every box contains at least one foreground pixel.
                let mut any = false;
                for y in b.y as usize..(b.y + b.h) as usize {
                    for x in b.x as usize..(b.x + b.w) as usize {
                        any |= img.get(x, y, 0) > 0;
                    }
                }
                prop_assert!(any);
            }
        }
    }
}
