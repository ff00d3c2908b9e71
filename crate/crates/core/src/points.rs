//! Uncertainty-biased point sampling for boundary refinement.
//!
//! Given a predicted mask `x`, the uncertainty map is `-|2x - 1|`, which
//! peaks at probability 0.5. With `N = floor(H * W / D)`, the sampler draws
//! `round(k * N)` uniform floating-point positions over the pixel-center
//! range `[0, W-1] x [0, H-1]`, reads the uncertainty at each by bilinear
//! interpolation, and keeps the `round(beta * N)` most uncertain ones
//! (ties kept in generation order). `beta == k` keeps everything, which is
//! plain uniform sampling.
//!
//! Draws come from [`CounterRng`] on the stream chosen by the caller, so
//! ROIs sampled in parallel on their own streams match a serial run.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{bilinear_sample, sample_unchecked, FeatureMap, SamplePoint};

pub const DEFAULT_K: f64 = 3.0;
pub const DEFAULT_BETA: f64 = 0.75;
pub const DEFAULT_DENSITY_DIVISOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Oversampling factor: `k * N` candidates are drawn.
    pub k: f64,
    /// Selection fraction: `beta * N` candidates are kept.
    pub beta: f64,
    /// Density divisor `D` in `N = H * W / D`.
    pub density_divisor: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            beta: DEFAULT_BETA,
            density_divisor: DEFAULT_DENSITY_DIVISOR,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn new(k: f64, beta: f64, density_divisor: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            k,
            beta,
            density_divisor,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 1.0 && self.k.is_finite()) {
            return Err(Error::usage(format!("k must be >= 1, got {}", self.k)));
        }
        if !(self.beta > 0.0 && self.beta <= self.k) {
            return Err(Error::usage(format!(
                "beta must lie in (0, k], got {} with k = {}",
                self.beta, self.k
            )));
        }
        if self.density_divisor == 0 {
            return Err(Error::usage("density divisor D must be at least 1"));
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.beta == self.k
    }

    /// `N = floor(H * W / D)`
    pub fn base_count(&self, height: usize, width: usize) -> usize {
        height * width / self.density_divisor
    }

    pub fn generated_count(&self, height: usize, width: usize) -> usize {
        (self.k * self.base_count(height, width) as f64).round_ties_even() as usize
    }

    pub fn selected_count(&self, height: usize, width: usize) -> usize {
        (self.beta * self.base_count(height, width) as f64).round_ties_even() as usize
    }
}

/// The named sampling strategies of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// No point sampling at all.
    WithoutSampling,
    UniformSmall,
    BiasedSmall,
    Uniform,
    MildlyBiased,
    SlightlyBiased,
    ModeratelyBiased,
    GreatlyBiased,
    HeavilyBiased,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::WithoutSampling,
        Strategy::UniformSmall,
        Strategy::BiasedSmall,
        Strategy::Uniform,
        Strategy::MildlyBiased,
        Strategy::SlightlyBiased,
        Strategy::ModeratelyBiased,
        Strategy::GreatlyBiased,
        Strategy::HeavilyBiased,
    ];

    /// `(k, beta)`, or `None` when nothing is sampled.
    pub fn parameters(self) -> Option<(f64, f64)> {
        match self {
            Strategy::WithoutSampling => None,
            Strategy::UniformSmall => Some((1.0, 1.0)),
            Strategy::BiasedSmall => Some((1.0, 0.5)),
            Strategy::Uniform => Some((3.0, 3.0)),
            Strategy::MildlyBiased => Some((3.0, 2.0)),
            Strategy::SlightlyBiased => Some((3.0, 1.0)),
            Strategy::ModeratelyBiased => Some((3.0, 0.75)),
            Strategy::GreatlyBiased => Some((5.0, 0.75)),
            Strategy::HeavilyBiased => Some((10.0, 0.75)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::WithoutSampling => "none",
            Strategy::UniformSmall => "uniform-small",
            Strategy::BiasedSmall => "biased-small",
            Strategy::Uniform => "uniform",
            Strategy::MildlyBiased => "mildly-biased",
            Strategy::SlightlyBiased => "slightly-biased",
            Strategy::ModeratelyBiased => "moderately-biased",
            Strategy::GreatlyBiased => "greatly-biased",
            Strategy::HeavilyBiased => "heavily-biased",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub point: SamplePoint,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPointSet {
    /// Selected points, most uncertain first.
    pub points: Vec<ScoredPoint>,
    /// Every candidate in generation order.
    pub generated: Vec<ScoredPoint>,
    pub config: SamplingConfig,
}

/// `-|2x - 1|` elementwise.
pub fn uncertainty_map(x: &FeatureMap) -> Result<FeatureMap> {
    x.require_single_channel("mask probabilities")?;
    Ok(x.map(|p| -(2.0 * p - 1.0).abs()))
}

/// Draws and selects points on stream 0 of `cfg.seed`.
pub fn generate_biased_points(x: &FeatureMap, cfg: &SamplingConfig) -> Result<SamplingPointSet> {
    generate_biased_points_on_stream(x, cfg, 0)
}

/// Same as [`generate_biased_points`] on an explicit RNG stream, e.g. the
/// ROI index within an image.
pub fn generate_biased_points_on_stream(
    x: &FeatureMap,
    cfg: &SamplingConfig,
    stream: u64,
) -> Result<SamplingPointSet> {
    cfg.validate()?;
    let (h, w) = (x.height(), x.width());
    let n = cfg.base_count(h, w);
    if n == 0 {
        return Err(Error::EmptySampling(format!(
            "{h}x{w} mask holds fewer than D = {} pixels",
            cfg.density_divisor
        )));
    }
    let uncertainty = uncertainty_map(x)?;
    let mut rng = CounterRng::with_stream(cfg.seed, stream);
    let (umax, vmax) = ((w - 1) as f64, (h - 1) as f64);
    let generated: Vec<ScoredPoint> = (0..cfg.generated_count(h, w))
        .map(|_| {
            let u = rng.next_f64() * umax;
            let v = rng.next_f64() * vmax;
            ScoredPoint {
                point: SamplePoint::new(u, v),
                uncertainty: sample_unchecked(&uncertainty, 0, u, v),
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..generated.len()).collect();
    // stable: equal uncertainty keeps generation order
    order.sort_by(|&a, &b| generated[b].uncertainty.total_cmp(&generated[a].uncertainty));
    order.truncate(cfg.selected_count(h, w));
    let points = order.into_iter().map(|i| generated[i]).collect();

    Ok(SamplingPointSet {
        points,
        generated,
        config: *cfg,
    })
}

/// Affine map from mask coordinates into a feature map's frame:
/// `u' = scale_u * u + shift_u`, `v' = scale_v * v + shift_v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisTransform {
    pub scale_u: f64,
    pub scale_v: f64,
    pub shift_u: f64,
    pub shift_v: f64,
}

impl AxisTransform {
    pub const IDENTITY: AxisTransform = AxisTransform {
        scale_u: 1.0,
        scale_v: 1.0,
        shift_u: 0.0,
        shift_v: 0.0,
    };

    /// Pixel-center aligned mapping between rasters of different sizes.
    pub fn between(from_h: usize, from_w: usize, to_h: usize, to_w: usize) -> Self {
        let su = to_w as f64 / from_w as f64;
        let sv = to_h as f64 / from_h as f64;
        AxisTransform {
            scale_u: su,
            scale_v: sv,
            shift_u: 0.5 * su - 0.5,
            shift_v: 0.5 * sv - 0.5,
        }
    }

    pub fn apply(&self, p: SamplePoint) -> SamplePoint {
        SamplePoint::new(self.scale_u * p.u + self.shift_u, self.scale_v * p.v + self.shift_v)
    }
}

/// Per point, the bilinear samples of every channel of every map,
/// concatenated in map order.
pub fn extract_point_features(
    maps: &[FeatureMap],
    points: &[ScoredPoint],
    transforms: &[AxisTransform],
) -> Result<Vec<Vec<f64>>> {
    if maps.len() != transforms.len() {
        return Err(Error::Shape(format!(
            "{} maps but {} transforms",
            maps.len(),
            transforms.len()
        )));
    }
    let width: usize = maps.iter().map(|m| m.channels()).sum();
    Ok(points
        .iter()
        .map(|sp| {
            let mut feature = Vec::with_capacity(width);
            for (map, t) in maps.iter().zip(transforms) {
                let p = t.apply(sp.point);
                feature.extend((0..map.channels()).map(|c| sample_unchecked(map, c, p.u, p.v)));
            }
            feature
        })
        .collect())
}

/// Ground-truth mask interpolated at each point.
pub fn soft_labels(gt_mask: &FeatureMap, points: &[ScoredPoint]) -> Result<Vec<f64>> {
    gt_mask.require_single_channel("ground-truth mask")?;
    if let Some(v) = gt_mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::usage(format!("ground-truth mask value {v} is not binary")));
    }
    points
        .iter()
        .map(|sp| bilinear_sample(gt_mask, sp.point, 0))
        .collect()
}
