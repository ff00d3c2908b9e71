//! Binary masks and row-major run-length encoding.

use crate::codec::{BBox, Detection};
use crate::error::{Error, Result};
use crate::tensor::{nearest_resize, FeatureMap};

/// `H x W` raster of 0/1 values, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                bits.len()
            )));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Data(format!("mask value {} at {i} is not 0 or 1", bits[i])));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(u8::from(f(r, c)));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    /// Reads a single-channel map whose values are exactly 0 or 1.
    pub fn from_map(map: &FeatureMap) -> Result<Self> {
        map.require_single_channel("binary mask")?;
        let mut bits = Vec::with_capacity(map.data().len());
        for (i, &v) in map.data().iter().enumerate() {
            bits.push(match v {
                0.0 => 0,
                1.0 => 1,
                _ => return Err(Error::usage(format!("mask value {v} at {i} is not binary"))),
            });
        }
        Ok(Self {
            height: map.height(),
            width: map.width(),
            bits,
        })
    }

    pub fn to_map(&self) -> Result<FeatureMap> {
        FeatureMap::new(
            1,
            self.height,
            self.width,
            self.bits.iter().map(|&b| b as f32).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = u8::from(on);
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Tight box of the foreground in pixel-center convention.
    pub fn tight_box(&self) -> Option<BBox> {
        let mut range: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    range = Some(match range {
                        None => (c, r, c, r),
                        Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c), r1.max(r)),
                    });
                }
            }
        }
        range.map(|(c0, r0, c1, r1)| BBox::from_pixel_range(c0, r0, c1, r1))
    }

    fn check_extent(&self, other: &BinaryMask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::usage(format!(
                "mask extents differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// `(|a & b|, |a | b|)`
    pub fn overlap_counts(&self, other: &BinaryMask) -> Result<(usize, usize)> {
        self.check_extent(other)?;
        let mut inter = 0;
        let mut union = 0;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        Ok((inter, union))
    }

    /// Pixelwise OR.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_extent(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Run lengths over the row-major pixel order, alternating zeros and
    /// ones and always starting with the (possibly zero) count of leading
    /// zeros.
    pub fn to_rle(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = 0u8;
        let mut count = 0u64;
        for &b in &self.bits {
            if b != current {
                runs.push(count);
                count = 0;
                current = b;
            }
            count += 1;
        }
        runs.push(count);
        runs
    }

    pub fn from_rle(height: usize, width: usize, runs: &[u64]) -> Result<Self> {
        let total: u64 = runs.iter().sum();
        if total != (height * width) as u64 {
            return Err(Error::Data(format!(
                "run lengths sum to {total}, expected {}",
                height * width
            )));
        }
        let mut bits = Vec::with_capacity(height * width);
        for (i, &run) in runs.iter().enumerate() {
            let value = (i % 2) as u8;
            bits.extend(std::iter::repeat_n(value, run as usize));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Nearest-neighbor resize, e.g. back to an original image size.
    pub fn resized(&self, out_h: usize, out_w: usize) -> Result<BinaryMask> {
        if self.height == 0 || self.width == 0 {
            return Ok(BinaryMask::empty(out_h, out_w));
        }
        let map = nearest_resize(&self.to_map()?, out_h, out_w)?;
        BinaryMask::from_map(&map)
    }
}

/// A full-image binary mask owned by one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub mask: BinaryMask,
    pub detection: Detection,
}

impl InstanceMask {
    pub fn new(mask: BinaryMask, detection: Detection) -> Self {
        Self { mask, detection }
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    /// Resizes the mask with nearest-neighbor sampling and rescales the
    /// owning box to the new frame.
    pub fn resized(&self, out_h: usize, out_w: usize) -> Result<InstanceMask> {
        let mask = self.mask.resized(out_h, out_w)?;
        let sx = out_w as f64 / self.width().max(1) as f64;
        let sy = out_h as f64 / self.height().max(1) as f64;
        let b = self.detection.bbox;
        let bbox = BBox {
            cu: (b.cu + 0.5) * sx - 0.5,
            cv: (b.cv + 0.5) * sy - 0.5,
            w: b.w * sx,
            h: b.h * sy,
        };
        Ok(InstanceMask {
            mask,
            detection: Detection {
                bbox,
                score: self.detection.score,
            },
        })
    }
}
