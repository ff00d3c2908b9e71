//! From a decoded box to a full-image instance mask.
//!
//! The box is cropped from every pyramid level at a size-adaptive grid
//! (`round(extent / stride)` cells per axis), a mask head turns the crops
//! into a probability patch, and the patch is pasted back into the image by
//! splatting each sample onto its four surrounding pixels with bilinear
//! weights. The splat is normalized by the accumulated weight, thresholded,
//! and clipped to the pixels whose centers fall inside the box.

use crate::codec::{BBox, Detection};
use crate::error::{Error, Result};
use crate::eval::box_iou;
use crate::mask::{BinaryMask, InstanceMask};
use crate::tensor::{bilinear_neighbors, grid_sample_crop, roi_sample_axis, FeatureMap};

pub const DEFAULT_MASK_THRESH: f64 = 0.5;

/// ROIs narrower or shorter than this many cells at the finest level are
/// dropped.
pub const MIN_ROI_CELLS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub map: FeatureMap,
    /// Input-image pixels per cell.
    pub stride: f64,
}

/// Feature maps of one image ordered from finest to coarsest stride.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevels {
    image_h: usize,
    image_w: usize,
    levels: Vec<PyramidLevel>,
}

impl PyramidLevels {
    /// Checks that strides are positive and strictly increasing and that each
    /// level's size is within one cell of `image / stride`.
    pub fn new(image_h: usize, image_w: usize, levels: Vec<PyramidLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::usage("pyramid needs at least one level"));
        }
        let mut last = 0.0;
        for (i, level) in levels.iter().enumerate() {
            if !(level.stride > last && level.stride.is_finite()) {
                return Err(Error::usage(format!(
                    "level {i}: strides must be positive and strictly increasing"
                )));
            }
            last = level.stride;
            let eh = image_h as f64 / level.stride;
            let ew = image_w as f64 / level.stride;
            if (level.map.height() as f64 - eh).abs() > 1.0 || (level.map.width() as f64 - ew).abs() > 1.0
            {
                return Err(Error::Shape(format!(
                    "level {i} is {}x{}, expected about {eh:.1}x{ew:.1} for stride {}",
                    level.map.height(),
                    level.map.width(),
                    level.stride
                )));
            }
        }
        Ok(Self {
            image_h,
            image_w,
            levels,
        })
    }

    pub fn image_h(&self) -> usize {
        self.image_h
    }

    pub fn image_w(&self) -> usize {
        self.image_w
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn finest_stride(&self) -> f64 {
        self.levels[0].stride
    }
}

/// True when the box overlaps the image extent `[-0.5, W - 0.5] x [-0.5, H - 0.5]`.
pub fn box_intersects_image(b: &BBox, image_h: usize, image_w: usize) -> bool {
    b.right() > -0.5
        && b.left() < image_w as f64 - 0.5
        && b.bottom() > -0.5
        && b.top() < image_h as f64 - 0.5
}

/// Grid size used for a box at a given stride: `(rows, cols)`.
pub fn roi_grid_size(b: &BBox, stride: f64) -> (usize, usize) {
    let cells = |extent: f64| ((extent / stride).round_ties_even() as usize).max(1);
    (cells(b.h), cells(b.w))
}

/// Crops the box from every level. An empty result means the ROI was
/// rejected: it misses the image or spans fewer than two cells on an axis at
/// the finest stride.
pub fn crop_roi_pyramid(levels: &PyramidLevels, b: &BBox) -> Result<Vec<FeatureMap>> {
    if !box_intersects_image(b, levels.image_h, levels.image_w) {
        return Ok(Vec::new());
    }
    let s0 = levels.finest_stride();
    if b.w / s0 < MIN_ROI_CELLS || b.h / s0 < MIN_ROI_CELLS {
        return Ok(Vec::new());
    }
    let roi = b.roi();
    levels
        .levels
        .iter()
        .map(|level| {
            let (rows, cols) = roi_grid_size(b, level.stride);
            grid_sample_crop(&level.map, &roi, level.stride, rows, cols)
        })
        .collect()
}

/// 1 where `prob >= thresh`, else 0.
pub fn threshold_mask(prob: &FeatureMap, thresh: f64) -> Result<FeatureMap> {
    prob.require_single_channel("probability map")?;
    Ok(prob.map(|v| if v as f64 >= thresh { 1.0 } else { 0.0 }))
}

/// Image-frame positions of the samples of an `rows x cols` patch laid over
/// the box: `(u per column, v per row)`.
pub fn patch_sample_positions(b: &BBox, rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    (
        roi_sample_axis(b.cu, b.w, 1.0, cols),
        roi_sample_axis(b.cv, b.h, 1.0, rows),
    )
}

/// Accumulators over the window of image pixels a paste can reach.
struct VoteWindow {
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
    accum: Vec<f64>,
    weight: Vec<f64>,
}

fn pixel_span(positions: &[f64], extent: usize) -> (usize, usize) {
    let lo = positions.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = positions.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor() + 1.0;
    let last = extent as f64 - 1.0;
    (lo.clamp(0.0, last) as usize, hi.clamp(0.0, last) as usize)
}

fn splat(roi_values: &FeatureMap, b: &BBox, image_h: usize, image_w: usize) -> VoteWindow {
    let (us, vs) = patch_sample_positions(b, roi_values.height(), roi_values.width());
    let (col0, col1) = pixel_span(&us, image_w);
    let (row0, row1) = pixel_span(&vs, image_h);
    let (rows, cols) = (row1 - row0 + 1, col1 - col0 + 1);
    let mut accum = vec![0.0f64; rows * cols];
    let mut weight = vec![0.0f64; rows * cols];
    let values = roi_values.channel(0);
    for (i, &v) in vs.iter().enumerate() {
        for (j, &u) in us.iter().enumerate() {
            let value = values[i * roi_values.width() + j] as f64;
            for (r, c, w) in bilinear_neighbors(u, v, image_h, image_w) {
                let k = (r - row0) * cols + (c - col0);
                accum[k] += value * w;
                weight[k] += w;
            }
        }
    }
    VoteWindow {
        row0,
        col0,
        rows,
        cols,
        accum,
        weight,
    }
}

/// Splats every ROI sample onto its four surrounding image pixels.
///
/// Returns `(accum, weight)`; the per-pixel estimate is `accum / weight`
/// wherever `weight > 0`. Samples beyond the image edge land on the nearest
/// edge pixel, so both rasters conserve mass.
pub fn hough_vote_paste(
    roi_values: &FeatureMap,
    b: &BBox,
    image_h: usize,
    image_w: usize,
) -> Result<(FeatureMap, FeatureMap)> {
    roi_values.require_single_channel("ROI values")?;
    if image_h == 0 || image_w == 0 {
        return Err(Error::usage("image size must be positive"));
    }
    let win = splat(roi_values, b, image_h, image_w);
    let mut accum = FeatureMap::zeros(1, image_h, image_w);
    let mut weight = FeatureMap::zeros(1, image_h, image_w);
    for r in 0..win.rows {
        for c in 0..win.cols {
            let k = r * win.cols + c;
            accum.set(0, win.row0 + r, win.col0 + c, win.accum[k] as f32);
            weight.set(0, win.row0 + r, win.col0 + c, win.weight[k] as f32);
        }
    }
    Ok((accum, weight))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledMask {
    pub instance: InstanceMask,
    /// No vote reached the image, so the mask is empty by construction.
    pub degenerate: bool,
}

/// Pastes a probability patch into the image, thresholds it and attaches
/// the detection.
///
/// Pixels are kept only when their center lies inside the box, so a vote
/// spilling over the box edge cannot grow the mask.
pub fn assemble_instance(
    prob_roi: &FeatureMap,
    b: &BBox,
    image_h: usize,
    image_w: usize,
    thresh: f64,
    det: Detection,
) -> Result<AssembledMask> {
    prob_roi.require_single_channel("probability patch")?;
    if image_h == 0 || image_w == 0 {
        return Err(Error::usage("image size must be positive"));
    }
    let mut mask = BinaryMask::empty(image_h, image_w);
    if !box_intersects_image(b, image_h, image_w) {
        return Ok(AssembledMask {
            instance: InstanceMask::new(mask, det),
            degenerate: true,
        });
    }
    let win = splat(prob_roi, b, image_h, image_w);
    let (left, right, top, bottom) = (b.left(), b.right(), b.top(), b.bottom());
    let mut touched = false;
    for r in 0..win.rows {
        let y = (win.row0 + r) as f64;
        for c in 0..win.cols {
            let k = r * win.cols + c;
            if win.weight[k] <= 0.0 {
                continue;
            }
            touched = true;
            let x = (win.col0 + c) as f64;
            let inside = x >= left && x <= right && y >= top && y <= bottom;
            if inside && win.accum[k] / win.weight[k] >= thresh {
                mask.set(win.row0 + r, win.col0 + c, true);
            }
        }
    }
    Ok(AssembledMask {
        instance: InstanceMask::new(mask, det),
        degenerate: !touched,
    })
}

/// Produces a single-channel probability patch for one detection from its
/// pyramid crops. Stands in for the learned segmentation head.
pub trait MaskHead {
    fn predict(&self, crops: &[FeatureMap], det: &Detection) -> Result<FeatureMap>;
}

/// Passes one channel of one level's crop through, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelHead {
    pub level: usize,
    pub channel: usize,
}

impl MaskHead for ChannelHead {
    fn predict(&self, crops: &[FeatureMap], _det: &Detection) -> Result<FeatureMap> {
        let crop = crops
            .get(self.level)
            .ok_or_else(|| Error::usage(format!("no pyramid level {}", self.level)))?;
        Ok(crop.extract_channel(self.channel)?.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Head for membership pyramids: channel 0 is the foreground union and
/// channel `k >= 1` is the soft membership of object `k - 1`.
///
/// For each detection it picks the object channel whose own extent overlaps
/// the detected box best, which separates a target from neighbors that
/// reach into the same ROI. With no object channels it falls back to
/// channel 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedMembershipHead {
    level: usize,
    channel_boxes: Vec<Option<BBox>>,
}

impl GuidedMembershipHead {
    pub fn from_pyramid(levels: &PyramidLevels, level: usize) -> Result<Self> {
        let lvl = levels
            .levels
            .get(level)
            .ok_or_else(|| Error::usage(format!("no pyramid level {level}")))?;
        let map = &lvl.map;
        let s = lvl.stride;
        let channel_boxes = (1..map.channels())
            .map(|c| {
                let plane = map.channel(c);
                let mut range: Option<(usize, usize, usize, usize)> = None;
                for r in 0..map.height() {
                    for col in 0..map.width() {
                        if plane[r * map.width() + col] as f64 >= DEFAULT_MASK_THRESH {
                            range = Some(match range {
                                None => (col, r, col, r),
                                Some((c0, r0, c1, r1)) => {
                                    (c0.min(col), r0.min(r), c1.max(col), r1.max(r))
                                }
                            });
                        }
                    }
                }
                // level cells a..=b cover image pixel edges [a*s, (b+1)*s]
                range.map(|(c0, r0, c1, r1)| {
                    let (x0, x1) = (c0 as f64 * s, (c1 + 1) as f64 * s);
                    let (y0, y1) = (r0 as f64 * s, (r1 + 1) as f64 * s);
                    BBox {
                        cu: (x0 + x1) / 2.0 - 0.5,
                        cv: (y0 + y1) / 2.0 - 0.5,
                        w: x1 - x0,
                        h: y1 - y0,
                    }
                })
            })
            .collect();
        Ok(Self {
            level,
            channel_boxes,
        })
    }

    /// Membership channel chosen for a box, or 0 when none overlaps.
    pub fn select_channel(&self, b: &BBox) -> usize {
        let mut best = (0.0, 0usize);
        for (k, cb) in self.channel_boxes.iter().enumerate() {
            if let Some(cb) = cb {
                let iou = box_iou(b, cb);
                if iou > best.0 {
                    best = (iou, k + 1);
                }
            }
        }
        best.1
    }
}

impl MaskHead for GuidedMembershipHead {
    fn predict(&self, crops: &[FeatureMap], det: &Detection) -> Result<FeatureMap> {
        ChannelHead {
            level: self.level,
            channel: self.select_channel(&det.bbox),
        }
        .predict(crops, det)
    }
}

/// What happened to one detection in [`segment_detection`].
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentOutcome {
    Mask(AssembledMask),
    /// The ROI missed the image or was too small to crop.
    Rejected,
}

/// Crop, predict, paste and threshold for one detection.
pub fn segment_detection(
    levels: &PyramidLevels,
    det: &Detection,
    head: &dyn MaskHead,
    thresh: f64,
) -> Result<SegmentOutcome> {
    let crops = crop_roi_pyramid(levels, &det.bbox)?;
    if crops.is_empty() {
        return Ok(SegmentOutcome::Rejected);
    }
    let prob = head.predict(&crops, det)?;
    let assembled = assemble_instance(&prob, &det.bbox, levels.image_h, levels.image_w, thresh, *det)?;
    Ok(SegmentOutcome::Mask(assembled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: BBox) -> Detection {
        Detection::new(b, 1.0).unwrap()
    }

    fn single_level(map: FeatureMap) -> PyramidLevels {
        let (h, w) = (map.height(), map.width());
        PyramidLevels::new(h, w, vec![PyramidLevel { map, stride: 1.0 }]).unwrap()
    }

    #[test]
    fn pyramid_validation() {
        let l = |h, w, s| PyramidLevel {
            map: FeatureMap::zeros(1, h, w),
            stride: s,
        };
        assert!(PyramidLevels::new(16, 16, vec![l(16, 16, 1.0), l(8, 8, 2.0)]).is_ok());
        assert!(PyramidLevels::new(16, 16, vec![l(8, 8, 2.0), l(16, 16, 1.0)]).is_err());
        assert!(PyramidLevels::new(16, 16, vec![l(16, 16, 2.0)]).is_err());
        assert!(PyramidLevels::new(16, 16, vec![]).is_err());
    }

    #[test]
    fn crop_sizes_follow_stride() {
        let levels = PyramidLevels::new(
            64,
            64,
            vec![
                PyramidLevel {
                    map: FeatureMap::zeros(1, 64, 64),
                    stride: 1.0,
                },
                PyramidLevel {
                    map: FeatureMap::zeros(3, 16, 16),
                    stride: 4.0,
                },
            ],
        )
        .unwrap();
        let b = BBox::new(30.0, 30.0, 32.0, 16.0).unwrap();
        let crops = crop_roi_pyramid(&levels, &b).unwrap();
        assert_eq!(crops[0].shape(), (1, 16, 32));
        assert_eq!(crops[1].shape(), (3, 4, 8));
    }

    #[test]
    fn small_or_outside_boxes_rejected() {
        let levels = single_level(FeatureMap::zeros(1, 32, 32));
        let thin = BBox::new(10.0, 10.0, 1.5, 8.0).unwrap();
        assert!(crop_roi_pyramid(&levels, &thin).unwrap().is_empty());
        let outside = BBox::new(-20.0, 10.0, 8.0, 8.0).unwrap();
        assert!(crop_roi_pyramid(&levels, &outside).unwrap().is_empty());
        let ok = BBox::new(10.0, 10.0, 2.0, 2.0).unwrap();
        assert_eq!(crop_roi_pyramid(&levels, &ok).unwrap().len(), 1);
    }

    #[test]
    fn aligned_crop_is_subarray() {
        let map = FeatureMap::from_fn(1, 12, 12, |_, r, c| (r * 12 + c) as f32);
        let levels = single_level(map.clone());
        let b = BBox::from_pixel_range(3, 4, 8, 6);
        let crop = &crop_roi_pyramid(&levels, &b).unwrap()[0];
        assert_eq!(crop.shape(), (1, 3, 6));
        for r in 0..3 {
            for c in 0..6 {
                assert_eq!(crop.get(0, r, c), map.get(0, r + 4, c + 3));
            }
        }
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let p = FeatureMap::new(1, 1, 3, vec![0.49, 0.5, 0.9]).unwrap();
        assert_eq!(threshold_mask(&p, 0.5).unwrap().data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn single_vote_weights() {
        // one sample at (1.25, 2.75): a 1x1 patch over a box centered there
        let b = BBox::new(1.25, 2.75, 1.0, 1.0).unwrap();
        let patch = FeatureMap::filled(1, 1, 1, 1.0);
        let (accum, weight) = hough_vote_paste(&patch, &b, 5, 5).unwrap();
        assert_eq!(weight.get(0, 2, 1), 0.1875);
        assert_eq!(weight.get(0, 2, 2), 0.0625);
        assert_eq!(weight.get(0, 3, 1), 0.5625);
        assert_eq!(weight.get(0, 3, 2), 0.1875);
        assert_eq!(accum, weight);
        let total: f32 = weight.data().iter().sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn vote_on_integer_pixel_lands_whole() {
        let b = BBox::new(2.0, 3.0, 1.0, 1.0).unwrap();
        let patch = FeatureMap::filled(1, 1, 1, 0.7);
        let (accum, weight) = hough_vote_paste(&patch, &b, 5, 5).unwrap();
        assert_eq!(accum.get(0, 3, 2), 0.7);
        assert_eq!(weight.get(0, 3, 2), 1.0);
        assert_eq!(weight.data().iter().filter(|&&w| w > 0.0).count(), 1);
    }

    #[test]
    fn zero_probability_gives_empty_mask() {
        let b = BBox::new(8.0, 8.0, 6.0, 6.0).unwrap();
        let out = assemble_instance(&FeatureMap::zeros(1, 6, 6), &b, 16, 16, 0.5, det(b)).unwrap();
        assert!(out.instance.mask.is_empty());
        assert!(!out.degenerate);
    }

    #[test]
    fn box_off_image_is_degenerate() {
        let b = BBox::new(-30.0, 8.0, 6.0, 6.0).unwrap();
        let out = assemble_instance(&FeatureMap::filled(1, 6, 6, 1.0), &b, 16, 16, 0.5, det(b)).unwrap();
        assert!(out.degenerate);
        assert!(out.instance.mask.is_empty());
    }

    #[test]
    fn guided_head_picks_own_channel() {
        // two overlapping squares in channels 1 and 2
        let map = FeatureMap::from_fn(3, 20, 20, |c, r, col| {
            let a = (2..10).contains(&r) && (2..10).contains(&col);
            let b = (6..16).contains(&r) && (6..16).contains(&col);
            match c {
                0 => (a || b) as u8 as f32,
                1 => a as u8 as f32,
                _ => b as u8 as f32,
            }
        });
        let levels = single_level(map);
        let head = GuidedMembershipHead::from_pyramid(&levels, 0).unwrap();
        assert_eq!(head.select_channel(&BBox::from_pixel_range(2, 2, 9, 9)), 1);
        assert_eq!(head.select_channel(&BBox::from_pixel_range(6, 6, 15, 15)), 2);

        let d = det(BBox::from_pixel_range(2, 2, 9, 9));
        let SegmentOutcome::Mask(m) = segment_detection(&levels, &d, &head, 0.5).unwrap() else {
            panic!("rejected");
        };
        assert_eq!(m.instance.mask.area(), 64);
    }
}
