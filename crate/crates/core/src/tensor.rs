//! Dense rasters and the sampling kernels built on them.
//!
//! A [`FeatureMap`] is a `C x H x W` block of `f32` in channel-major,
//! row-major order. Samplers work in `f64` internally and return `f64`
//! so that downstream losses and statistics do not inherit `f32` rounding.
//!
//! Out-of-range bilinear neighbors are clamped to the nearest edge pixel.

use crate::error::{Error, Result};

/// Stabilizer used by [`instance_normalize`] when the caller has no opinion.
pub const DEFAULT_NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Builds a map from raw channel-major data.
    ///
    /// Rejects zero-sized dimensions, a length that does not match
    /// `channels * height * width`, and any NaN or infinity.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::usage(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::usage("feature map dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} map needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// A map filled with `value`.
    ///
    /// # Panics
    ///
    /// Panics on a zero dimension or a non-finite fill value.
    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "feature map dimensions must be positive"
        );
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    /// Builds a map by evaluating `f(channel, row, col)` at every position.
    ///
    /// # Panics
    ///
    /// Panics if a dimension is zero or `f` returns a non-finite value.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut map = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    map.set(c, y, x, f(c, y, x));
                }
            }
        }
        map
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        debug_assert!(channel < self.channels && row < self.height && col < self.width);
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(channel, row, col)]
    }

    /// # Panics
    ///
    /// Panics on a non-finite value or an out-of-range position.
    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f32) {
        assert!(value.is_finite(), "feature map values must be finite");
        let i = self.index(channel, row, col);
        self.data[i] = value;
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[channel * plane..(channel + 1) * plane]
    }

    /// Copies one channel out as a single-channel map.
    pub fn extract_channel(&self, channel: usize) -> Result<FeatureMap> {
        self.check_channel(channel)?;
        Ok(FeatureMap {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(channel).to_vec(),
        })
    }

    /// Smallest and largest stored value.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Elementwise transform. The closure must keep values finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> FeatureMap {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub(crate) fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels {
            return Err(Error::usage(format!(
                "channel {channel} out of range for a {}-channel map",
                self.channels
            )));
        }
        Ok(())
    }

    pub(crate) fn require_single_channel(&self, what: &str) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::Shape(format!(
                "{what} must have one channel, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    pub(crate) fn require_same_shape(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Continuous position in pixel coordinates: `u` is horizontal (column),
/// `v` is vertical (row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub u: f64,
    pub v: f64,
}

impl SamplePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Axis-aligned region in continuous input-image pixels, center format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiRect {
    pub cu: f64,
    pub cv: f64,
    pub w: f64,
    pub h: f64,
}

impl RoiRect {
    pub fn new(cu: f64, cv: f64, w: f64, h: f64) -> Result<Self> {
        if ![cu, cv, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::usage("ROI parameters must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::usage(format!("ROI extent must be positive, got {w}x{h}")));
        }
        Ok(Self { cu, cv, w, h })
    }
}

/// The four clamped neighbors of `(u, v)` as `(row, col, weight)`.
///
/// Weights are the standard bilinear weights of the unclamped neighbors,
/// so they are non-negative and sum to one; clamping only relocates them.
#[inline]
pub fn bilinear_neighbors(u: f64, v: f64, height: usize, width: usize) -> [(usize, usize, f64); 4] {
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let clamp = |i: f64, n: usize| -> usize {
        if i <= 0.0 {
            0
        } else if i >= (n - 1) as f64 {
            n - 1
        } else {
            i as usize
        }
    };
    let (c0, c1) = (clamp(x0, width), clamp(x0 + 1.0, width));
    let (r0, r1) = (clamp(y0, height), clamp(y0 + 1.0, height));
    [
        (r0, c0, (1.0 - fx) * (1.0 - fy)),
        (r0, c1, fx * (1.0 - fy)),
        (r1, c0, (1.0 - fx) * fy),
        (r1, c1, fx * fy),
    ]
}

#[inline]
pub(crate) fn sample_unchecked(map: &FeatureMap, channel: usize, u: f64, v: f64) -> f64 {
    let plane = map.channel(channel);
    bilinear_neighbors(u, v, map.height, map.width)
        .iter()
        .map(|&(r, c, w)| w * plane[r * map.width + c] as f64)
        .sum()
}

/// Bilinear interpolation of one channel at a continuous point.
pub fn bilinear_sample(map: &FeatureMap, p: SamplePoint, channel: usize) -> Result<f64> {
    map.check_channel(channel)?;
    if !(p.u.is_finite() && p.v.is_finite()) {
        return Err(Error::usage("sample point must be finite"));
    }
    Ok(sample_unchecked(map, channel, p.u, p.v))
}

/// Positions of `count` evenly spaced cell centers spanning an interval of
/// input-image pixels, expressed in the pixel-center frame of a level with
/// the given stride.
///
/// The interval `[center - extent/2, center + extent/2]` is converted to
/// pixel edges (`+0.5`), divided by the stride, split into `count` equal
/// cells, and each cell center is moved back into the level's pixel-center
/// frame (`-0.5`). At stride 1 an interval tightly covering pixels
/// `a..=b` with `count = b - a + 1` yields exactly `a, a+1, ..., b`.
pub fn roi_sample_axis(center: f64, extent: f64, stride: f64, count: usize) -> Vec<f64> {
    let start = (center - extent / 2.0 + 0.5) / stride;
    let cell = extent / stride / count as f64;
    (0..count)
        .map(|i| start + (i as f64 + 0.5) * cell - 0.5)
        .collect()
}

/// Crops `roi` out of `map` on an `out_h x out_w` grid of bilinear samples.
///
/// `stride` is the number of input-image pixels per cell of `map`.
pub fn grid_sample_crop(
    map: &FeatureMap,
    roi: &RoiRect,
    stride: f64,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::usage("crop output size must be at least 1x1"));
    }
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(Error::usage(format!("stride must be positive, got {stride}")));
    }
    let us = roi_sample_axis(roi.cu, roi.w, stride, out_w);
    let vs = roi_sample_axis(roi.cv, roi.h, stride, out_h);
    let mut data = Vec::with_capacity(map.channels * out_h * out_w);
    for c in 0..map.channels {
        for &v in &vs {
            for &u in &us {
                data.push(sample_unchecked(map, c, u, v) as f32);
            }
        }
    }
    FeatureMap::new(map.channels, out_h, out_w, data)
}

/// Source index for output index `i` when resizing `src` samples to `dst`
/// under the pixel-center convention; exact ties go to the smaller index.
fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    // position = ((2i + 1) * src - dst) / (2 * dst); answer = ceil(position - 1/2)
    let num = (2 * i as i64 + 1) * src as i64 - 2 * dst as i64;
    let den = 2 * dst as i64;
    let idx = num.div_euclid(den) + i64::from(num.rem_euclid(den) != 0);
    idx.clamp(0, src as i64 - 1) as usize
}

/// Nearest-neighbor resize of every channel.
pub fn nearest_resize(map: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::usage("resize output size must be at least 1x1"));
    }
    let rows: Vec<usize> = (0..out_h).map(|i| nearest_source(i, map.height, out_h)).collect();
    let cols: Vec<usize> = (0..out_w).map(|i| nearest_source(i, map.width, out_w)).collect();
    let mut data = Vec::with_capacity(map.channels * out_h * out_w);
    for c in 0..map.channels {
        let plane = map.channel(c);
        for &r in &rows {
            data.extend(cols.iter().map(|&col| plane[r * map.width + col]));
        }
    }
    FeatureMap::new(map.channels, out_h, out_w, data)
}

/// Per-channel standardization followed by an affine `gamma`, `eta`.
///
/// Uses the population variance over the channel's `H x W` values.
pub fn instance_normalize(
    patch: &FeatureMap,
    gamma: &[f32],
    eta: &[f32],
    eps: f32,
) -> Result<FeatureMap> {
    if gamma.len() != patch.channels || eta.len() != patch.channels {
        return Err(Error::Shape(format!(
            "gamma/eta need {} entries, got {}/{}",
            patch.channels,
            gamma.len(),
            eta.len()
        )));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::usage("eps must be a finite non-negative number"));
    }
    let count = (patch.height * patch.width) as f64;
    let mut data = Vec::with_capacity(patch.data.len());
    for c in 0..patch.channels {
        let plane = patch.channel(c);
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / count;
        let var = plane
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / count;
        let scale = gamma[c] as f64 / (var + eps as f64).sqrt();
        let shift = eta[c] as f64;
        data.extend(plane.iter().map(|&v| ((v as f64 - mean) * scale + shift) as f32));
    }
    FeatureMap::new(patch.channels, patch.height, patch.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> FeatureMap {
        FeatureMap::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            FeatureMap::new(1, 2, 2, vec![0.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            FeatureMap::new(1, 1, 2, vec![0.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn bilinear_center_of_two_by_two_is_mean() {
        let m = two_by_two();
        assert_eq!(bilinear_sample(&m, SamplePoint::new(0.5, 0.5), 0).unwrap(), 1.5);
    }

    #[test]
    fn bilinear_hits_grid_nodes_exactly() {
        let m = FeatureMap::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f32 * 0.37);
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let s = bilinear_sample(&m, SamplePoint::new(x as f64, y as f64), c).unwrap();
                    assert_eq!(s, m.get(c, y, x) as f64);
                }
            }
        }
    }

    #[test]
    fn bilinear_quarter_point() {
        // (1-.25)(1-.75)*0 + .25*.25*1 + .75*.75*2 + .25*.75*3
        let m = two_by_two();
        let s = bilinear_sample(&m, SamplePoint::new(0.25, 0.75), 0).unwrap();
        assert!((s - 1.75).abs() < 1e-12);
    }

    #[test]
    fn bilinear_clamps_outside() {
        let m = two_by_two();
        assert_eq!(bilinear_sample(&m, SamplePoint::new(-3.0, -1.0), 0).unwrap(), 0.0);
        assert_eq!(bilinear_sample(&m, SamplePoint::new(5.0, 9.0), 0).unwrap(), 3.0);
        assert_eq!(bilinear_sample(&m, SamplePoint::new(-2.0, 0.5), 0).unwrap(), 1.0);
    }

    #[test]
    fn bilinear_rejects_bad_channel() {
        let m = two_by_two();
        assert!(bilinear_sample(&m, SamplePoint::new(0.0, 0.0), 1).unwrap_err().is_usage());
    }

    #[test]
    fn crop_of_aligned_subgrid_is_subarray() {
        let m = FeatureMap::from_fn(1, 6, 7, |_, y, x| (y * 7 + x) as f32);
        // pixels cols 2..=5, rows 1..=3 at stride 1
        let roi = RoiRect::new(3.5, 2.0, 4.0, 3.0).unwrap();
        let crop = grid_sample_crop(&m, &roi, 1.0, 3, 4).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(crop.get(0, y, x), m.get(0, y + 1, x + 2));
            }
        }
        // same cells at stride 2: level cols 1..=2, rows 0..=1
        let roi = RoiRect::new(3.5, 1.5, 4.0, 4.0).unwrap();
        let crop = grid_sample_crop(&m, &roi, 2.0, 2, 2).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(crop.get(0, y, x), m.get(0, y, x + 1));
            }
        }
    }

    #[test]
    fn one_by_one_crop_samples_roi_center() {
        let m = FeatureMap::from_fn(1, 5, 5, |_, y, x| (y * y + 3 * x) as f32);
        let roi = RoiRect::new(1.3, 2.6, 3.0, 1.7).unwrap();
        let crop = grid_sample_crop(&m, &roi, 1.0, 1, 1).unwrap();
        let direct = bilinear_sample(&m, SamplePoint::new(1.3, 2.6), 0).unwrap();
        assert_eq!(crop.get(0, 0, 0), direct as f32);
    }

    #[test]
    fn nearest_resize_rules() {
        let m = FeatureMap::from_fn(1, 3, 5, |_, y, x| (y * 5 + x) as f32);
        assert_eq!(nearest_resize(&m, 3, 5).unwrap(), m);

        let even = two_by_two();
        let one = nearest_resize(&even, 1, 1).unwrap();
        assert_eq!(one.get(0, 0, 0), 0.0, "ties go to the smaller index");
        let odd = nearest_resize(&m, 1, 1).unwrap();
        assert_eq!(odd.get(0, 0, 0), m.get(0, 1, 2));

        let up = nearest_resize(&even, 4, 4).unwrap();
        let expected = [
            0.0, 0.0, 1.0, 1.0, //
            0.0, 0.0, 1.0, 1.0, //
            2.0, 2.0, 3.0, 3.0, //
            2.0, 2.0, 3.0, 3.0,
        ];
        assert_eq!(up.data(), &expected);
    }

    #[test]
    fn nearest_downscale_by_two_picks_first_of_pair() {
        // centers of 2 output cells over 4 inputs sit at 0.5 and 2.5: ties go down
        let m = FeatureMap::from_fn(1, 1, 4, |_, _, x| x as f32);
        assert_eq!(nearest_resize(&m, 1, 2).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn instance_norm_standardizes() {
        let m = FeatureMap::from_fn(2, 4, 3, |c, y, x| ((c + 1) * (y * 3 + x) * (x + 1)) as f32);
        let out = instance_normalize(&m, &[1.0, 1.0], &[0.0, 0.0], DEFAULT_NORM_EPS).unwrap();
        for c in 0..2 {
            let ch = out.channel(c);
            let n = ch.len() as f64;
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn instance_norm_of_constant_is_eta() {
        let m = FeatureMap::filled(1, 3, 3, 7.25);
        let out = instance_normalize(&m, &[1.0], &[0.5], DEFAULT_NORM_EPS).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn instance_norm_checks_parameter_lengths() {
        let m = FeatureMap::zeros(2, 2, 2);
        assert!(matches!(
            instance_normalize(&m, &[1.0], &[0.0, 0.0], 1e-5),
            Err(Error::Shape(_))
        ));
    }
}
