//! Keypoint detection with binary descriptors, Hamming best-fit matching,
//! and RANSAC affine estimation: the chain that aligns a reference scan
//! with a target scan.
//!
//! The detector is a FAST-style corner score with a BRIEF-256 descriptor
//! computed on box-smoothed samples. Documents are near-upright (the
//! perturbation envelope stays within +-20 degrees), so no orientation
//! normalization is applied; mismatches that slip through the cross-check
//! are RANSAC's problem.

use std::sync::OnceLock;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{compose, AffineTransform};
use crate::raster::Raster;
use crate::rng;

/// 256-bit binary descriptor.
pub type Descriptor = [u8; 32];

#[derive(Debug, Clone)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
    pub descriptor: Descriptor,
}

/// A query-to-train correspondence by Hamming distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub query: usize,
    pub train: usize,
    pub distance: u32,
}

/// A source point paired with its target point.
pub type PointPair = ((f64, f64), (f64, f64));

pub const DEFAULT_MAX_KEYPOINTS: usize = 1200;
pub const DEFAULT_MATCH_DISTANCE: u32 = 64;
pub const DEFAULT_RANSAC_THRESHOLD: f64 = 3.0;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 2000;

const FAST_THRESHOLD: i32 = 20;
const FAST_ARC: usize = 9;
const NMS_RADIUS: i64 = 3;
const DETECT_MARGIN: i64 = 16;
const MIN_IMAGE_SIDE: usize = 32;
const PATTERN_SEED: u64 = 0xb41e_f256;
const ALIGN_SEED: u64 = 0x0a11_0b5e;

pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    let mut dist = 0;
    for i in 0..4 {
        let x = u64::from_le_bytes(a[i * 8..i * 8 + 8].try_into().unwrap());
        let y = u64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
        dist += (x ^ y).count_ones();
    }
    dist
}

/// The fixed sampling pattern for the 256 descriptor comparisons, offsets
/// in `[-13, 13]^2` so a 5x5 smoothing window stays inside a 31x31 patch.
fn brief_pattern() -> &'static [(i8, i8, i8, i8); 256] {
    static PATTERN: OnceLock<[(i8, i8, i8, i8); 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = rng::from_seed(PATTERN_SEED);
        let coord = |rng: &mut ChaCha8Rng| rng::below(rng, 27) as i8 - 13;
        std::array::from_fn(|_| {
            (
                coord(&mut rng),
                coord(&mut rng),
                coord(&mut rng),
                coord(&mut rng),
            )
        })
    })
}

const CIRCLE: [(i64, i64); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

struct Integral {
    width: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn build(img: &Raster) -> Integral {
        let (w, h) = (img.width(), img.height());
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += img.get(x, y, 0) as u64;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { width: w, sums }
    }

    /// Mean over the clamped 5x5 window centered at (x, y).
    fn smoothed(&self, x: i64, y: i64, img_w: i64, img_h: i64) -> f64 {
        let x0 = (x - 2).clamp(0, img_w - 1) as usize;
        let y0 = (y - 2).clamp(0, img_h - 1) as usize;
        let x1 = (x + 2).clamp(0, img_w - 1) as usize + 1;
        let y1 = (y + 2).clamp(0, img_h - 1) as usize + 1;
        let w = self.width + 1;
        let sum = self.sums[y1 * w + x1] + self.sums[y0 * w + x0]
            - self.sums[y0 * w + x1]
            - self.sums[y1 * w + x0];
        sum as f64 / ((x1 - x0) * (y1 - y0)) as f64
    }
}

/// Corner-like keypoints with descriptors, strongest first, at most
/// `max_count` after spatial non-max suppression. Deterministic.
pub fn detect_keypoints(img: &Raster, max_count: usize) -> Result<Vec<Keypoint>> {
    if img.channels() != 1 {
        return Err(Error::NotGrayscale {
            channels: img.channels(),
        });
    }
    if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MIN_IMAGE_SIDE,
        });
    }
    let (w, h) = (img.width() as i64, img.height() as i64);

    // FAST-9: a contiguous arc of at least 9 circle pixels all brighter or
    // all darker than the center by the threshold.
    let mut candidates: Vec<(f64, i64, i64)> = Vec::new();
    for y in DETECT_MARGIN..h - DETECT_MARGIN {
        for x in DETECT_MARGIN..w - DETECT_MARGIN {
            let center = img.get_clamped(x, y) as i32;
            let mut ring = [0i8; 16];
            for (i, (dx, dy)) in CIRCLE.iter().enumerate() {
                let p = img.get_clamped(x + dx, y + dy) as i32;
                ring[i] = if p > center + FAST_THRESHOLD {
                    1
                } else if p < center - FAST_THRESHOLD {
                    -1
                } else {
                    0
                };
            }
            let mut best_run = 0usize;
            let mut run = 0usize;
            let mut kind = 0i8;
            for i in 0..32 {
                let s = ring[i % 16];
                if s != 0 && s == kind {
                    run += 1;
                } else {
                    kind = s;
                    run = usize::from(s != 0);
                }
                if s != 0 {
                    best_run = best_run.max(run);
                }
            }
            if best_run >= FAST_ARC {
                let response: f64 = CIRCLE
                    .iter()
                    .map(|(dx, dy)| {
                        let p = img.get_clamped(x + dx, y + dy) as i32;
                        ((p - center).abs() - FAST_THRESHOLD).max(0) as f64
                    })
                    .sum();
                candidates.push((response, y, x));
            }
        }
    }

    // Non-max suppression: strongest first, ties broken by (y, x).
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let cell = NMS_RADIUS.max(1);
    let mut occupied = std::collections::HashMap::new();
    let mut kept: Vec<(f64, i64, i64)> = Vec::new();
    'cand: for &(resp, y, x) in &candidates {
        if kept.len() >= max_count {
            break;
        }
        let (gx, gy) = (x / cell, y / cell);
        for ny in gy - 1..=gy + 1 {
            for nx in gx - 1..=gx + 1 {
                if let Some(&idx) = occupied.get(&(nx, ny)) {
                    let (_, ky, kx): (f64, i64, i64) = kept[idx];
                    if (kx - x).abs() <= NMS_RADIUS && (ky - y).abs() <= NMS_RADIUS {
                        continue 'cand;
                    }
                }
            }
        }
        occupied.insert((gx, gy), kept.len());
        kept.push((resp, y, x));
    }

    let integral = Integral::build(img);
    let pattern = brief_pattern();
    let keypoints = kept
        .into_iter()
        .map(|(response, y, x)| {
            let mut descriptor = [0u8; 32];
            for (bit, &(x1, y1, x2, y2)) in pattern.iter().enumerate() {
                let a = integral.smoothed(x + x1 as i64, y + y1 as i64, w, h);
                let b = integral.smoothed(x + x2 as i64, y + y2 as i64, w, h);
                if a < b {
                    descriptor[bit / 8] |= 1 << (bit % 8);
                }
            }
            Keypoint {
                x: x as f64,
                y: y as f64,
                response,
                descriptor,
            }
        })
        .collect();
    Ok(keypoints)
}

/// Mutual nearest-neighbor matching by Hamming distance with the default
/// distance cutoff, sorted by ascending distance.
pub fn match_descriptors(query: &[Keypoint], train: &[Keypoint]) -> Vec<Match> {
    match_descriptors_with(query, train, DEFAULT_MATCH_DISTANCE)
}

pub fn match_descriptors_with(
    query: &[Keypoint],
    train: &[Keypoint],
    distance_max: u32,
) -> Vec<Match> {
    if query.is_empty() || train.is_empty() {
        return Vec::new();
    }
    let nearest = |from: &[Keypoint], to: &[Keypoint]| -> Vec<(usize, u32)> {
        from.iter()
            .map(|kp| {
                let mut best = (0usize, u32::MAX);
                for (j, other) in to.iter().enumerate() {
                    let d = hamming(&kp.descriptor, &other.descriptor);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect()
    };
    let q_best = nearest(query, train);
    let t_best = nearest(train, query);

    let mut matches: Vec<Match> = q_best
        .iter()
        .enumerate()
        .filter_map(|(qi, &(ti, d))| {
            (d <= distance_max && t_best[ti].0 == qi).then_some(Match {
                query: qi,
                train: ti,
                distance: d,
            })
        })
        .collect();
    matches.sort_by(|a, b| a.distance.cmp(&b.distance).then(a.query.cmp(&b.query)));
    matches
}

/// Least-squares 2x3 affine fit minimizing squared target residuals.
/// Points are similarity-normalized before solving so the degeneracy check
/// does not depend on the coordinate scale.
pub fn estimate_affine_lsq(pairs: &[PointPair]) -> Result<AffineTransform> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientPairs {
            got: pairs.len(),
            need: 3,
        });
    }
    let src_norm = normalize_points(pairs.iter().map(|p| p.0))?;
    let dst_norm = normalize_points(pairs.iter().map(|p| p.1))?;

    let mut g = [[0.0f64; 3]; 3];
    let mut rx = [0.0f64; 3];
    let mut ry = [0.0f64; 3];
    for &(src, dst) in pairs {
        let (ux, uy) = src_norm.apply(src.0, src.1);
        let (vx, vy) = dst_norm.apply(dst.0, dst.1);
        let u = [ux, uy, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += u[i] * u[j];
            }
            rx[i] += vx * u[i];
            ry[i] += vy * u[i];
        }
    }
    let row_x = solve3(g, rx).ok_or(Error::DegenerateGeometry)?;
    let row_y = solve3(g, ry).ok_or(Error::DegenerateGeometry)?;
    let fitted = AffineTransform {
        m: [row_x, row_y],
    };
    Ok(compose(&compose(&dst_norm.inverse()?, &fitted), &src_norm))
}

/// Similarity transform moving the centroid to the origin and the mean
/// radius to sqrt(2).
fn normalize_points(points: impl Iterator<Item = (f64, f64)> + Clone) -> Result<AffineTransform> {
    let mut n = 0usize;
    let (mut cx, mut cy) = (0.0, 0.0);
    for (x, y) in points.clone() {
        cx += x;
        cy += y;
        n += 1;
    }
    let n_f = n as f64;
    cx /= n_f;
    cy /= n_f;
    let mean_dist: f64 = points
        .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n_f;
    if mean_dist <= f64::EPSILON {
        return Err(Error::DegenerateGeometry);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(compose(
        &AffineTransform::scaling(s),
        &AffineTransform::translation(-cx, -cy),
    ))
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
#[allow(clippy::needless_range_loop)]
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// RANSAC affine estimation: repeatedly fit on 3 sampled pairs, count
/// pairs with reprojection error below the threshold, and least-squares
/// refit on the largest consensus set. Deterministic for a fixed seed:
/// sampling indexes a canonical sorted order of the pairs, so the result
/// does not depend on input order.
pub fn ransac_affine(
    pairs: &[PointPair],
    inlier_threshold: f64,
    max_iterations: usize,
    seed: u64,
) -> Result<(AffineTransform, Vec<bool>)> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::InsufficientPairs { got: n, need: 3 });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let a = pairs[i];
        let b = pairs[j];
        (a.0 .0, a.0 .1, a.1 .0, a.1 .1)
            .partial_cmp(&(b.0 .0, b.0 .1, b.1 .0, b.1 .1))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let thr_sq = inlier_threshold * inlier_threshold;
    let inlier_mask = |t: &AffineTransform| -> (usize, Vec<bool>) {
        let mut mask = vec![false; n];
        let mut count = 0;
        for (i, &(src, dst)) in pairs.iter().enumerate() {
            let (px, py) = t.apply(src.0, src.1);
            let err = (px - dst.0).powi(2) + (py - dst.1).powi(2);
            if err < thr_sq {
                mask[i] = true;
                count += 1;
            }
        }
        (count, mask)
    };

    let mut rng = rng::from_seed(seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..max_iterations {
        let mut sample = [0usize; 3];
        for slot in 0..3 {
            loop {
                let pick = order[rng::below(&mut rng, n)];
                if !sample[..slot].contains(&pick) {
                    sample[slot] = pick;
                    break;
                }
            }
        }
        let minimal = [pairs[sample[0]], pairs[sample[1]], pairs[sample[2]]];
        let Ok(hypothesis) = estimate_affine_lsq(&minimal) else {
            continue;
        };
        let (count, mask) = inlier_mask(&hypothesis);
        if count > best.as_ref().map_or(0, |(c, _)| *c) {
            let done = count == n;
            best = Some((count, mask));
            if done {
                break;
            }
        }
    }

    let (count, mask) = best.ok_or(Error::NoConsensus { need: 3 })?;
    if count < 3 {
        return Err(Error::NoConsensus { need: 3 });
    }
    let consensus: Vec<PointPair> = mask
        .iter()
        .zip(pairs)
        .filter_map(|(&keep, &pair)| keep.then_some(pair))
        .collect();
    let refit = estimate_affine_lsq(&consensus)?;
    Ok((refit, mask))
}

#[derive(Debug, Clone)]
pub struct AlignParams {
    pub max_keypoints: usize,
    pub match_distance_max: u32,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            max_keypoints: DEFAULT_MAX_KEYPOINTS,
            match_distance_max: DEFAULT_MATCH_DISTANCE,
            ransac_threshold: DEFAULT_RANSAC_THRESHOLD,
            ransac_iterations: DEFAULT_RANSAC_ITERATIONS,
            seed: ALIGN_SEED,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    /// Reference-to-target transform.
    pub transform: AffineTransform,
    pub inlier_count: usize,
    pub match_count: usize,
}

/// Detect, match, and fit: returns the reference-to-target transform.
pub fn align(reference: &Raster, target: &Raster) -> Result<AffineTransform> {
    Ok(align_with(reference, target, &AlignParams::default())?.transform)
}

pub fn align_with(reference: &Raster, target: &Raster, params: &AlignParams) -> Result<Alignment> {
    let ref_gray = reference.to_gray();
    let tgt_gray = target.to_gray();
    let ref_kps = detect_keypoints(&ref_gray, params.max_keypoints)?;
    if ref_kps.len() < 3 {
        return Err(Error::InsufficientKeypoints {
            side: "reference",
            found: ref_kps.len(),
            need: 3,
        });
    }
    let tgt_kps = detect_keypoints(&tgt_gray, params.max_keypoints)?;
    if tgt_kps.len() < 3 {
        return Err(Error::InsufficientKeypoints {
            side: "target",
            found: tgt_kps.len(),
            need: 3,
        });
    }
    let matches = match_descriptors_with(&ref_kps, &tgt_kps, params.match_distance_max);
    if matches.len() < 3 {
        return Err(Error::InsufficientMatches {
            found: matches.len(),
            need: 3,
        });
    }
    let pairs: Vec<PointPair> = matches
        .iter()
        .map(|m| {
            let q = &ref_kps[m.query];
            let t = &tgt_kps[m.train];
            ((q.x, q.y), (t.x, t.y))
        })
        .collect();
    let (transform, mask) = ransac_affine(
        &pairs,
        params.ransac_threshold,
        params.ransac_iterations,
        params.seed,
    )?;
    Ok(Alignment {
        transform,
        inlier_count: mask.iter().filter(|&&b| b).count(),
        match_count: matches.len(),
    })
}
