//! Training losses and their analytic gradients.
//!
//! Inputs are flat `f64` slices so that gradients can be checked against
//! finite differences without `f32` storage noise; `*_map` helpers adapt
//! [`FeatureMap`] inputs. Gradients are taken with respect to probabilities
//! (not logits) and come back in the same order as the prediction.
//!
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any
//! logarithm; the gradient is evaluated at the clamped value.

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub mod gradcheck;

pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    /// Focusing exponent on `(1 - p)` / `p`.
    pub alpha: f64,
    /// Exponent on `(1 - y)` that down-weights background near centers.
    pub beta: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 4.0,
        }
    }
}

impl FocalParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::usage(format!(
                "focal parameters need alpha > 0 and beta >= 0, got {alpha}, {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// A loss value and its gradient with respect to each prediction entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_pair_lengths(pred: usize, gt: usize, what: &str) -> Result<()> {
    if pred != gt {
        return Err(Error::Shape(format!("{what}: {pred} predictions vs {gt} targets")));
    }
    if pred == 0 {
        return Err(Error::usage(format!("{what}: empty input")));
    }
    Ok(())
}

/// Penalty-reduced pixelwise focal loss over a center heatmap.
///
/// `value = -(1/N) * sum_i [ (1-p)^a ln p            if y_i == 1
///                           (1-y)^b p^a ln(1-p)     otherwise ]`
/// with `N` the number of positions where `y` is exactly 1.
pub fn focal_heatmap_loss(pred: &[f64], gt: &[f64], params: &FocalParams) -> Result<LossResult> {
    check_pair_lengths(pred.len(), gt.len(), "focal loss")?;
    let centers = gt.iter().filter(|&&y| y == 1.0).count();
    if centers == 0 {
        return Err(Error::NoCenters);
    }
    let inv_n = 1.0 / centers as f64;
    let a = params.alpha;
    let b = params.beta;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(gt) {
        let p = clamp_prob(p);
        let (term, dterm) = if y == 1.0 {
            let q = 1.0 - p;
            let lnp = p.ln();
            let term = q.powf(a) * lnp;
            let dterm = -a * q.powf(a - 1.0) * lnp + q.powf(a) / p;
            (term, dterm)
        } else {
            let w = (1.0 - y).powf(b);
            let ln1p = (1.0 - p).ln();
            let term = w * p.powf(a) * ln1p;
            let dterm = w * (a * p.powf(a - 1.0) * ln1p - p.powf(a) / (1.0 - p));
            (term, dterm)
        };
        value += term;
        gradient.push(-inv_n * dterm);
    }
    Ok(LossResult {
        value: -inv_n * value,
        gradient,
    })
}

pub fn focal_heatmap_loss_map(
    pred: &FeatureMap,
    gt: &FeatureMap,
    params: &FocalParams,
) -> Result<LossResult> {
    pred.require_same_shape(gt, "focal loss maps")?;
    focal_heatmap_loss(&widen(pred), &widen(gt), params)
}

/// Huber-style smooth L1 with unit transition: `(value, derivative)`.
#[inline]
pub fn smooth_l1(theta: f64) -> (f64, f64) {
    if theta.abs() < 1.0 {
        (0.5 * theta * theta, theta)
    } else {
        (theta.abs() - 0.5, theta.signum())
    }
}

fn smooth_l1_pairs(pred: &[[f64; 2]], gt: &[[f64; 2]], what: &str) -> Result<LossResult> {
    check_pair_lengths(pred.len(), gt.len(), what)?;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(2 * pred.len());
    for (p, g) in pred.iter().zip(gt) {
        for k in 0..2 {
            let (v, d) = smooth_l1(p[k] - g[k]);
            value += v;
            gradient.push(d);
        }
    }
    Ok(LossResult { value, gradient })
}

/// Smooth-L1 regression of `(w, h)` at center points, summed over centers.
///
/// The gradient is laid out `[w0, h0, w1, h1, ...]`.
pub fn wh_loss(pred_wh: &[[f64; 2]], gt_wh: &[[f64; 2]]) -> Result<LossResult> {
    smooth_l1_pairs(pred_wh, gt_wh, "width-height loss")
}

/// Smooth-L1 regression of sub-cell offsets at center points.
pub fn offset_loss(pred_o: &[[f64; 2]], gt_o: &[[f64; 2]]) -> Result<LossResult> {
    smooth_l1_pairs(pred_o, gt_o, "offset loss")
}

fn bce(pred: &[f64], gt: &[f64], what: &str) -> Result<LossResult> {
    check_pair_lengths(pred.len(), gt.len(), what)?;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(pred.len());
    for (&x, &t) in pred.iter().zip(gt) {
        let x = clamp_prob(x);
        value -= t * x.ln() + (1.0 - t) * (1.0 - x).ln();
        gradient.push((x - t) / (x * (1.0 - x)));
    }
    Ok(LossResult { value, gradient })
}

/// Summed binary cross-entropy between a predicted mask and its target.
pub fn bce_mask_loss(pred: &[f64], gt: &[f64]) -> Result<LossResult> {
    bce(pred, gt, "mask loss")
}

pub fn bce_mask_loss_map(pred: &FeatureMap, gt: &FeatureMap) -> Result<LossResult> {
    pred.require_same_shape(gt, "mask loss maps")?;
    bce_mask_loss(&widen(pred), &widen(gt))
}

/// Binary cross-entropy over sampled points; targets may be soft.
pub fn refine_point_loss(pred: &[f64], soft_labels: &[f64]) -> Result<LossResult> {
    bce(pred, soft_labels, "point refinement loss")
}

/// The three detection terms for one image.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionLossParts {
    pub heat: f64,
    pub wh: f64,
    pub offset: f64,
}

/// Unweighted sum of the detection terms.
///
/// Addends are summed in ascending order so the result does not depend on
/// which field holds which value.
pub fn total_detection_loss(parts: &DetectionLossParts) -> f64 {
    let mut terms = [parts.heat, parts.wh, parts.offset];
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn widen(map: &FeatureMap) -> Vec<f64> {
    map.data().iter().map(|&v| v as f64).collect()
}
