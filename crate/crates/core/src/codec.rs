//! Ground-truth target encoding and box decoding for center-keypoint
//! detection.
//!
//! A box is represented on an output grid downscaled by an integer factor
//! `n`. Its center `(cu/n, cv/n)` is quantized to the nearest cell (ties to
//! even); the cell gets a Gaussian peak of exactly 1 on the heatmap, the
//! scaled extent `(w/n, h/n)` on the width-height map, and the quantization
//! residual on the offset map. Decoding reverses the three steps, so a
//! collision-free encode/decode round trip is lossless up to `f32` storage.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, RoiRect};

pub const DEFAULT_DOWNSIZE: u32 = 4;
pub const DEFAULT_TOP_K: usize = 100;
pub const DEFAULT_SCORE_THRESH: f64 = 0.05;
pub const DEFAULT_MIN_IOU: f64 = 0.7;

/// Center-format box in continuous input-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cu: f64,
    pub cv: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cu: f64, cv: f64, w: f64, h: f64) -> Result<Self> {
        if ![cu, cv, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::usage("box parameters must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::usage(format!("box extent must be positive, got {w}x{h}")));
        }
        Ok(Self { cu, cv, w, h })
    }

    /// Tight box around the inclusive pixel range `col0..=col1`, `row0..=row1`.
    pub fn from_pixel_range(col0: usize, row0: usize, col1: usize, row1: usize) -> Self {
        Self {
            cu: (col0 + col1) as f64 / 2.0,
            cv: (row0 + row1) as f64 / 2.0,
            w: (col1 - col0 + 1) as f64,
            h: (row1 - row0 + 1) as f64,
        }
    }

    pub fn left(&self) -> f64 {
        self.cu - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cu + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cv - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cv + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn roi(&self) -> RoiRect {
        RoiRect {
            cu: self.cu,
            cv: self.cv,
            w: self.w,
            h: self.h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::usage(format!("score must lie in [0, 1], got {score}")));
        }
        Ok(Self { bbox, score })
    }
}

/// A quantized center on the output grid and the box it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenterCell {
    pub row: usize,
    pub col: usize,
    pub box_index: usize,
}

/// One Gaussian peak: `exp(-d^2 / (2 sigma^2))` around `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub row: usize,
    pub col: usize,
    pub radius: u32,
    pub sigma: f64,
}

impl GaussianSpec {
    /// `sigma = radius / 3`, floored at `1/3` so a zero radius still draws
    /// a one-cell peak.
    pub fn new(row: usize, col: usize, radius: u32) -> Self {
        Self {
            row,
            col,
            radius,
            sigma: radius.max(1) as f64 / 3.0,
        }
    }

    /// Half-width of the square render window, `3 sigma`.
    pub fn window(&self) -> usize {
        self.radius.max(1) as usize
    }

    pub fn value_at(&self, drow: f64, dcol: f64) -> f64 {
        (-(drow * drow + dcol * dcol) / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Draws the peak into a single-channel map, keeping the elementwise
    /// maximum with what is already there.
    pub fn render_max(&self, heatmap: &mut FeatureMap) {
        let win = self.window() as isize;
        let (h, w) = (heatmap.height() as isize, heatmap.width() as isize);
        for dr in -win..=win {
            let r = self.row as isize + dr;
            if r < 0 || r >= h {
                continue;
            }
            for dc in -win..=win {
                let c = self.col as isize + dc;
                if c < 0 || c >= w {
                    continue;
                }
                let value = self.value_at(dr as f64, dc as f64) as f32;
                let (r, c) = (r as usize, c as usize);
                if value > heatmap.get(0, r, c) {
                    heatmap.set(0, r, c, value);
                }
            }
        }
    }
}

/// Training targets for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTargets {
    /// `1 x H' x W'`, values in `[0, 1]`, exactly 1 at every center.
    pub heatmap: FeatureMap,
    /// `2 x H' x W'`: `(w/n, h/n)` at centers, zero elsewhere.
    pub wh_map: FeatureMap,
    /// `2 x H' x W'`: `(cu/n - col, cv/n - row)` at centers, zero elsewhere.
    pub offset_map: FeatureMap,
    /// One entry per occupied cell, in first-seen order.
    pub centers: Vec<CenterCell>,
    pub downsize: u32,
    /// Boxes whose center landed on a cell that was already taken.
    pub collisions: usize,
}

/// Largest center displacement (in grid cells) that still keeps a box of
/// size `w x h` above `min_iou` overlap with itself.
///
/// Takes the smallest root over the three overlap cases of the corner-shift
/// derivation: both corners moved inward, both moved outward, and one in /
/// one out (a pure translation). Each root is the exact solution of its
/// quadratic; the result is floored and never negative.
pub fn gaussian_radius(w: f64, h: f64, min_iou: f64) -> u32 {
    if !(min_iou > 0.0 && min_iou < 1.0) || !(w > 0.0 && h > 0.0) {
        return 0;
    }
    let t = min_iou;
    let sum = w + h;
    let prod = w * h;

    // translation: (w-r)(h-r) / (2wh - (w-r)(h-r)) = t
    let c1 = prod * (1.0 - t) / (1.0 + t);
    let r1 = (sum - (sum * sum - 4.0 * c1).max(0.0).sqrt()) / 2.0;

    // shrink: (w-2r)(h-2r) = t*wh
    let b2 = 2.0 * sum;
    let r2 = (b2 - (b2 * b2 - 16.0 * (1.0 - t) * prod).max(0.0).sqrt()) / 8.0;

    // grow: wh = t*(w+2r)(h+2r)
    let a3 = 4.0 * t;
    let b3 = 2.0 * t * sum;
    let c3 = -(1.0 - t) * prod;
    let r3 = (-b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / (2.0 * a3);

    let r = r1.min(r2).min(r3);
    if r.is_finite() && r > 0.0 {
        r.floor() as u32
    } else {
        0
    }
}

fn output_extent(pixels: usize, n: u32) -> usize {
    pixels.div_ceil(n as usize)
}

/// Encodes ground-truth boxes into heatmap, width-height and offset targets.
pub fn encode_targets(
    boxes: &[BBox],
    image_h: usize,
    image_w: usize,
    n: u32,
    min_iou: f64,
) -> Result<DetectionTargets> {
    if n == 0 {
        return Err(Error::usage("downsize factor must be at least 1"));
    }
    if image_h == 0 || image_w == 0 {
        return Err(Error::usage("image size must be positive"));
    }
    let (out_h, out_w) = (output_extent(image_h, n), output_extent(image_w, n));
    let nf = n as f64;
    let mut heatmap = FeatureMap::zeros(1, out_h, out_w);
    let mut wh_map = FeatureMap::zeros(2, out_h, out_w);
    let mut offset_map = FeatureMap::zeros(2, out_h, out_w);
    let mut centers: Vec<CenterCell> = Vec::with_capacity(boxes.len());
    let mut occupied: HashMap<(usize, usize), usize> = HashMap::new();
    let mut collisions = 0;

    for (index, b) in boxes.iter().enumerate() {
        if !(b.cu >= -0.5 && b.cu <= image_w as f64 - 0.5 && b.cv >= -0.5 && b.cv <= image_h as f64 - 0.5)
        {
            return Err(Error::usage(format!(
                "box {index} center ({}, {}) lies outside the {image_w}x{image_h} image",
                b.cu, b.cv
            )));
        }
        let (su, sv) = (b.cu / nf, b.cv / nf);
        let col = su.round_ties_even().clamp(0.0, (out_w - 1) as f64) as usize;
        let row = sv.round_ties_even().clamp(0.0, (out_h - 1) as f64) as usize;

        let radius = gaussian_radius(b.w / nf, b.h / nf, min_iou);
        GaussianSpec::new(row, col, radius).render_max(&mut heatmap);
        heatmap.set(0, row, col, 1.0);

        wh_map.set(0, row, col, (b.w / nf) as f32);
        wh_map.set(1, row, col, (b.h / nf) as f32);
        offset_map.set(0, row, col, (su - col as f64) as f32);
        offset_map.set(1, row, col, (sv - row as f64) as f32);

        match occupied.get(&(row, col)) {
            Some(&slot) => {
                collisions += 1;
                centers[slot].box_index = index;
            }
            None => {
                occupied.insert((row, col), centers.len());
                centers.push(CenterCell {
                    row,
                    col,
                    box_index: index,
                });
            }
        }
    }

    Ok(DetectionTargets {
        heatmap,
        wh_map,
        offset_map,
        centers,
        downsize: n,
        collisions,
    })
}

/// 3x3 max-pool suppression: keeps a value where it is at least as large as
/// every neighbor in its edge-clamped 3x3 window, zero elsewhere.
pub fn nms_maxpool(heatmap: &FeatureMap) -> Result<FeatureMap> {
    heatmap.require_single_channel("heatmap")?;
    let (h, w) = (heatmap.height(), heatmap.width());
    let src = heatmap.data();
    let mut out = vec![0.0f32; src.len()];
    for r in 0..h {
        let rows = r.saturating_sub(1)..=(r + 1).min(h - 1);
        for c in 0..w {
            let v = src[r * w + c];
            let cols = c.saturating_sub(1)..=(c + 1).min(w - 1);
            let is_peak = rows
                .clone()
                .all(|rr| cols.clone().all(|cc| src[rr * w + cc] <= v));
            if is_peak {
                out[r * w + c] = v;
            }
        }
    }
    FeatureMap::new(1, h, w, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub downsize: u32,
    pub top_k: usize,
    pub score_thresh: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            downsize: DEFAULT_DOWNSIZE,
            top_k: DEFAULT_TOP_K,
            score_thresh: DEFAULT_SCORE_THRESH,
        }
    }
}

/// Turns predicted maps into scored boxes in input-image pixels, best first.
///
/// Equal scores are ordered by `(row, col)`.
pub fn decode_boxes(
    heatmap: &FeatureMap,
    wh_map: &FeatureMap,
    offset_map: &FeatureMap,
    params: &DecodeParams,
) -> Result<Vec<Detection>> {
    heatmap.require_single_channel("heatmap")?;
    let (h, w) = (heatmap.height(), heatmap.width());
    for (name, map) in [("wh map", wh_map), ("offset map", offset_map)] {
        if map.shape() != (2, h, w) {
            return Err(Error::Shape(format!(
                "{name} must be 2x{h}x{w} to match the heatmap, got {:?}",
                map.shape()
            )));
        }
    }
    if params.downsize == 0 {
        return Err(Error::usage("downsize factor must be at least 1"));
    }
    if let Some(bad) = heatmap.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::usage(format!("heatmap value {bad} outside [0, 1]")));
    }

    let peaks = nms_maxpool(heatmap)?;
    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let s = peaks.get(0, r, c);
            if s as f64 >= params.score_thresh {
                candidates.push((s, r, c));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    candidates.truncate(params.top_k);

    let n = params.downsize as f64;
    let mut out = Vec::with_capacity(candidates.len());
    for (score, r, c) in candidates {
        let bw = wh_map.get(0, r, c) as f64 * n;
        let bh = wh_map.get(1, r, c) as f64 * n;
        if bw <= 0.0 || bh <= 0.0 {
            continue;
        }
        let cu = (c as f64 + offset_map.get(0, r, c) as f64) * n;
        let cv = (r as f64 + offset_map.get(1, r, c) as f64) * n;
        out.push(Detection {
            bbox: BBox {
                cu,
                cv,
                w: bw,
                h: bh,
            },
            score: score as f64,
        });
    }
    Ok(out)
}

/// Reads a two-channel map at each center, e.g. to build `(w, h)` or offset
/// pairs for the regression losses.
pub fn gather_center_pairs(map: &FeatureMap, centers: &[CenterCell]) -> Result<Vec<[f64; 2]>> {
    if map.channels() != 2 {
        return Err(Error::Shape(format!(
            "expected a 2-channel map, got {}",
            map.channels()
        )));
    }
    centers
        .iter()
        .map(|c| {
            if c.row >= map.height() || c.col >= map.width() {
                return Err(Error::usage(format!("center ({}, {}) outside map", c.row, c.col)));
            }
            Ok([map.get(0, c.row, c.col) as f64, map.get(1, c.row, c.col) as f64])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_limits() {
        assert_eq!(gaussian_radius(40.0, 30.0, 0.999_999), 0);
        assert_eq!(gaussian_radius(1.0, 1.0, 0.7), 0);
        assert_eq!(gaussian_radius(5.0, 5.0, 1.0), 0);
    }

    #[test]
    fn radius_for_square_24() {
        // shrink root: (48 - sqrt(48^2 - 4*0.3*576)) / 4 = 1.96.. -> 1
        assert_eq!(gaussian_radius(24.0, 24.0, 0.7), 1);
        // translation root alone would be 2.22..; the shrink case is tighter
        assert!(gaussian_radius(24.0, 24.0, 0.7) <= 2);
    }

    #[test]
    fn radius_grows_with_size() {
        let mut last = 0;
        for s in 1..200 {
            let r = gaussian_radius(s as f64, s as f64, 0.7);
            assert!(r >= last);
            last = r;
        }
        assert!(last > 10);
    }

    #[test]
    fn encode_offset_arithmetic() {
        let b = BBox::new(9.0, 8.0, 6.0, 6.0).unwrap();
        let t = encode_targets(&[b], 32, 32, 4, 0.7).unwrap();
        let c = t.centers[0];
        assert_eq!((c.row, c.col), (2, 2));
        assert_eq!(t.offset_map.get(0, 2, 2), 0.25);
        assert_eq!(t.offset_map.get(1, 2, 2), 0.0);
        assert_eq!(t.wh_map.get(0, 2, 2), 1.5);
        assert_eq!(t.heatmap.get(0, 2, 2), 1.0);
    }

    #[test]
    fn encode_quantizes_half_to_even() {
        // 10/4 = 2.5 -> 2, 14/4 = 3.5 -> 4
        let t = encode_targets(
            &[BBox::new(10.0, 14.0, 8.0, 8.0).unwrap()],
            32,
            32,
            4,
            0.7,
        )
        .unwrap();
        assert_eq!((t.centers[0].row, t.centers[0].col), (4, 2));
        assert_eq!(t.offset_map.get(0, 4, 2), 0.5);
        assert_eq!(t.offset_map.get(1, 4, 2), -0.5);
    }

    #[test]
    fn encode_reports_collisions_last_wins() {
        let a = BBox::new(8.0, 8.0, 10.0, 10.0).unwrap();
        let b = BBox::new(8.5, 7.6, 20.0, 12.0).unwrap();
        let t = encode_targets(&[a, b], 32, 32, 4, 0.7).unwrap();
        assert_eq!(t.collisions, 1);
        assert_eq!(t.centers.len(), 1);
        assert_eq!(t.centers[0].box_index, 1);
        assert_eq!(t.wh_map.get(0, 2, 2), 5.0);
    }

    #[test]
    fn encode_rejects_center_outside_image() {
        let b = BBox::new(40.0, 8.0, 4.0, 4.0).unwrap();
        assert!(encode_targets(&[b], 32, 32, 4, 0.7).unwrap_err().is_usage());
    }

    #[test]
    fn gaussian_is_radially_symmetric() {
        let g = GaussianSpec::new(10, 10, 6);
        for (a, b) in [(1.0, 2.0), (3.0, 0.0), (2.0, 2.0)] {
            let v = g.value_at(a, b);
            assert_eq!(v, g.value_at(-a, b));
            assert_eq!(v, g.value_at(a, -b));
            assert_eq!(v, g.value_at(b, a));
        }
        assert_eq!(g.value_at(0.0, 0.0), 1.0);
    }

    #[test]
    fn nms_constant_and_single_peak() {
        let flat = FeatureMap::filled(1, 4, 5, 0.3);
        assert_eq!(nms_maxpool(&flat).unwrap(), flat);

        let mut m = FeatureMap::zeros(1, 5, 5);
        m.set(0, 2, 3, 0.9);
        m.set(0, 2, 2, 0.4);
        m.set(0, 1, 3, 0.5);
        let out = nms_maxpool(&m).unwrap();
        let kept: Vec<_> = out.data().iter().filter(|&&v| v > 0.0).collect();
        assert_eq!(kept, vec![&0.9]);
    }

    #[test]
    fn decode_empty_and_shape_errors() {
        let hm = FeatureMap::zeros(1, 8, 8);
        let wh = FeatureMap::zeros(2, 8, 8);
        let off = FeatureMap::zeros(2, 8, 8);
        assert!(decode_boxes(&hm, &wh, &off, &DecodeParams::default())
            .unwrap()
            .is_empty());
        let bad = FeatureMap::zeros(2, 8, 7);
        assert!(decode_boxes(&hm, &bad, &off, &DecodeParams::default())
            .unwrap_err()
            .is_usage());
    }

    #[test]
    fn decode_orders_ties_by_row_then_col() {
        let mut hm = FeatureMap::zeros(1, 8, 8);
        let mut wh = FeatureMap::zeros(2, 8, 8);
        let off = FeatureMap::zeros(2, 8, 8);
        for &(r, c) in &[(5, 1), (1, 6), (1, 2)] {
            hm.set(0, r, c, 0.8);
            wh.set(0, r, c, 1.0);
            wh.set(1, r, c, 1.0);
        }
        let dets = decode_boxes(&hm, &wh, &off, &DecodeParams::default()).unwrap();
        let cells: Vec<_> = dets
            .iter()
            .map(|d| ((d.bbox.cv / 4.0) as usize, (d.bbox.cu / 4.0) as usize))
            .collect();
        assert_eq!(cells, vec![(1, 2), (1, 6), (5, 1)]);
    }

    #[test]
    fn decode_drops_degenerate_extent_and_caps_top_k() {
        let mut hm = FeatureMap::zeros(1, 8, 8);
        let mut wh = FeatureMap::zeros(2, 8, 8);
        let off = FeatureMap::zeros(2, 8, 8);
        hm.set(0, 1, 1, 0.9);
        hm.set(0, 4, 4, 0.8);
        hm.set(0, 6, 6, 0.7);
        wh.set(0, 4, 4, 2.0);
        wh.set(1, 4, 4, 2.0);
        wh.set(0, 6, 6, 2.0);
        wh.set(1, 6, 6, 2.0);
        let params = DecodeParams {
            top_k: 2,
            ..DecodeParams::default()
        };
        let dets = decode_boxes(&hm, &wh, &off, &params).unwrap();
        // (1,1) has zero extent and is dropped after top-k selection
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].score, 0.800000011920929);
    }
}
