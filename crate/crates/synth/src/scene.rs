//! Seeded scene generator.
//!
//! Each instance is a rotated ellipse, optionally with one to three thin
//! rectangular arms radiating from its center. Candidates are rejected when
//! their tight box leaves the size range, when their mask IOU with an
//! earlier instance exceeds `max_overlap`, or when their box center comes
//! closer than `min_center_distance` to an earlier one (which keeps the
//! quantized heatmap centers apart). After `max_attempts` rejections for one
//! slot the generator moves on and counts the slot as a shortfall.

use csk_core::rng::CounterRng;
use csk_core::roi::{PyramidLevel, PyramidLevels};
use csk_core::{BBox, BinaryMask, Error, FeatureMap, Result};

pub const DEFAULT_STRIDES: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub image_h: usize,
    pub image_w: usize,
    pub count: usize,
    /// Inclusive bounds on tight-box width and height, in pixels.
    pub min_size: usize,
    pub max_size: usize,
    /// Largest allowed mask IOU between two instances.
    pub max_overlap: f64,
    pub protrusions: bool,
    pub min_center_distance: f64,
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            image_h: 512,
            image_w: 512,
            count: 6,
            min_size: 8,
            max_size: 64,
            max_overlap: 0.3,
            protrusions: false,
            min_center_distance: 8.0,
            max_attempts: 200,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.min_size < 2 || self.min_size > self.max_size {
            return bad(format!(
                "size range [{}, {}] must satisfy 2 <= min <= max",
                self.min_size, self.max_size
            ));
        }
        if self.max_size + 4 > self.image_h.min(self.image_w) {
            return bad(format!(
                "max_size {} does not fit a {}x{} image with margin",
                self.max_size, self.image_h, self.image_w
            ));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return bad(format!("max_overlap {} outside [0, 1]", self.max_overlap));
        }
        if !(self.min_center_distance >= 0.0 && self.min_center_distance.is_finite()) {
            return bad("min_center_distance must be finite and non-negative".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    /// Tight box of `mask`.
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub intensity: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub image_h: usize,
    pub image_w: usize,
    pub seed: u64,
    pub stream: u64,
    pub params: SceneParams,
    pub instances: Vec<SynthInstance>,
    /// Brightest covering instance per pixel, 0 on background.
    pub image: FeatureMap,
    /// Slots that could not be placed.
    pub shortfall: usize,
}

struct Arm {
    angle: f64,
    length: f64,
    half_width: f64,
}

struct Shape {
    cu: f64,
    cv: f64,
    a: f64,
    b: f64,
    theta: f64,
    arms: Vec<Arm>,
}

impl Shape {
    fn reach(&self) -> f64 {
        self.arms.iter().map(|a| a.length).fold(self.a.max(self.b), f64::max)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cu, y - self.cv);
        let (s, c) = self.theta.sin_cos();
        let p = dx * c + dy * s;
        let q = -dx * s + dy * c;
        if (p / self.a).powi(2) + (q / self.b).powi(2) <= 1.0 {
            return true;
        }
        self.arms.iter().any(|arm| {
            let (s, c) = arm.angle.sin_cos();
            let along = dx * c + dy * s;
            let across = -dx * s + dy * c;
            (0.0..=arm.length).contains(&along) && across.abs() <= arm.half_width
        })
    }

    fn rasterize(&self, h: usize, w: usize) -> BinaryMask {
        let r = self.reach().ceil() + 1.0;
        let c0 = (self.cu - r).floor().max(0.0) as usize;
        let c1 = ((self.cu + r).ceil() as usize).min(w - 1);
        let r0 = (self.cv - r).floor().max(0.0) as usize;
        let r1 = ((self.cv + r).ceil() as usize).min(h - 1);
        let mut m = BinaryMask::empty(h, w);
        for row in r0..=r1 {
            for col in c0..=c1 {
                if self.contains(col as f64, row as f64) {
                    m.set(row, col, true);
                }
            }
        }
        m
    }
}

fn draw_shape(rng: &mut CounterRng, p: &SceneParams) -> Option<Shape> {
    let half_min = p.min_size as f64 / 2.0;
    let half_max = p.max_size as f64 / 2.0;
    let a = rng.uniform(half_min, half_max);
    let b = rng.uniform(half_min, half_max);
    let theta = rng.uniform(0.0, std::f64::consts::PI);
    let arms = if p.protrusions {
        let n = 1 + rng.below(3) as usize;
        (0..n)
            .map(|_| Arm {
                angle: rng.uniform(0.0, std::f64::consts::TAU),
                length: a.max(b) * rng.uniform(1.1, 1.6),
                half_width: rng.uniform(0.6, 1.6),
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut shape = Shape {
        cu: 0.0,
        cv: 0.0,
        a,
        b,
        theta,
        arms,
    };
    // keep one pixel of background around the shape on every side
    let margin = shape.reach().ceil() + 1.0;
    let (wf, hf) = (p.image_w as f64, p.image_h as f64);
    if 2.0 * margin >= wf - 1.0 || 2.0 * margin >= hf - 1.0 {
        return None;
    }
    shape.cu = rng.uniform(margin, wf - 1.0 - margin);
    shape.cv = rng.uniform(margin, hf - 1.0 - margin);
    Some(shape)
}

fn within_size(b: &BBox, p: &SceneParams) -> bool {
    let ok = |e: f64| e >= p.min_size as f64 && e <= p.max_size as f64;
    ok(b.w) && ok(b.h)
}

/// Mask IOU, counting the intersection only inside the overlap of the
/// two tight boxes.
fn mask_iou(a: &BinaryMask, a_box: &BBox, a_area: usize, b: &BinaryMask, b_box: &BBox, b_area: usize) -> f64 {
    let c0 = a_box.left().max(b_box.left()).ceil() as i64;
    let c1 = a_box.right().min(b_box.right()).floor() as i64;
    let r0 = a_box.top().max(b_box.top()).ceil() as i64;
    let r1 = a_box.bottom().min(b_box.bottom()).floor() as i64;
    let mut inter = 0usize;
    for r in r0.max(0)..=r1 {
        for c in c0.max(0)..=c1 {
            inter += usize::from(a.get(r as usize, c as usize) && b.get(r as usize, c as usize));
        }
    }
    let union = a_area + b_area - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Scene on stream 0 of `seed`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SynthScene> {
    generate_scene_on_stream(seed, 0, params)
}

/// Scene on an explicit stream, e.g. the scene index within a batch.
pub fn generate_scene_on_stream(seed: u64, stream: u64, params: &SceneParams) -> Result<SynthScene> {
    params.validate()?;
    let (h, w) = (params.image_h, params.image_w);
    let mut rng = CounterRng::with_stream(seed, stream);
    let mut instances: Vec<SynthInstance> = Vec::with_capacity(params.count);
    let mut areas: Vec<usize> = Vec::with_capacity(params.count);
    let mut shortfall = 0;

    for _ in 0..params.count {
        let mut placed = false;
        for _ in 0..params.max_attempts {
            let Some(shape) = draw_shape(&mut rng, params) else {
                continue;
            };
            let mask = shape.rasterize(h, w);
            let Some(bbox) = mask.tight_box() else {
                continue;
            };
            if !within_size(&bbox, params) {
                continue;
            }
            let area = mask.area();
            let crowded = instances.iter().zip(&areas).any(|(other, &other_area)| {
                let d = (bbox.cu - other.bbox.cu).hypot(bbox.cv - other.bbox.cv);
                d < params.min_center_distance
                    || mask_iou(&mask, &bbox, area, &other.mask, &other.bbox, other_area) > params.max_overlap
            });
            if crowded {
                continue;
            }
            let intensity = rng.uniform(0.5, 1.0) as f32;
            areas.push(area);
            instances.push(SynthInstance {
                bbox,
                mask,
                intensity,
            });
            placed = true;
            break;
        }
        if !placed {
            shortfall += 1;
        }
    }

    let mut pixels = vec![0.0f32; h * w];
    for inst in &instances {
        for (px, &bit) in pixels.iter_mut().zip(inst.mask.bits()) {
            if bit != 0 {
                *px = px.max(inst.intensity);
            }
        }
    }
    Ok(SynthScene {
        image_h: h,
        image_w: w,
        seed,
        stream,
        params: params.clone(),
        instances,
        image: FeatureMap::new(1, h, w, pixels)?,
        shortfall,
    })
}

impl SynthScene {
    pub fn is_complete(&self) -> bool {
        self.shortfall == 0
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.instances.iter().map(|i| i.bbox).collect()
    }

    pub fn masks(&self) -> Vec<BinaryMask> {
        self.instances.iter().map(|i| i.mask.clone()).collect()
    }

    /// Membership pyramid: channel 0 is the foreground union, channel
    /// `k >= 1` the mask of instance `k - 1`. Level `s` holds `s x s` block
    /// averages on a `ceil(H/s) x ceil(W/s)` grid.
    pub fn ideal_pyramid(&self, strides: &[usize]) -> Result<PyramidLevels> {
        let (h, w) = (self.image_h, self.image_w);
        let channels = 1 + self.instances.len();
        let mut full = vec![0.0f32; channels * h * w];
        for (k, inst) in self.instances.iter().enumerate() {
            let plane = &mut full[(k + 1) * h * w..(k + 2) * h * w];
            for (px, &bit) in plane.iter_mut().zip(inst.mask.bits()) {
                *px = bit as f32;
            }
            for (i, &bit) in inst.mask.bits().iter().enumerate() {
                if bit != 0 {
                    full[i] = 1.0;
                }
            }
        }
        let levels = strides
            .iter()
            .map(|&s| {
                if s == 0 {
                    return Err(Error::Usage("stride must be positive".into()));
                }
                let (lh, lw) = (h.div_ceil(s), w.div_ceil(s));
                let mut sums = vec![0.0f64; channels * lh * lw];
                let mut counts = vec![0u32; lh * lw];
                for r in 0..h {
                    for c in 0..w {
                        counts[(r / s) * lw + c / s] += 1;
                    }
                }
                for ch in 0..channels {
                    for r in 0..h {
                        let row = &full[(ch * h + r) * w..(ch * h + r + 1) * w];
                        let out = &mut sums[(ch * lh + r / s) * lw..(ch * lh + r / s + 1) * lw];
                        for (c, &v) in row.iter().enumerate() {
                            out[c / s] += v as f64;
                        }
                    }
                }
                let data = sums
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (v / counts[i % (lh * lw)] as f64) as f32)
                    .collect();
                Ok(PyramidLevel {
                    map: FeatureMap::new(channels, lh, lw, data)?,
                    stride: s as f64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PyramidLevels::new(h, w, levels)
    }
}
