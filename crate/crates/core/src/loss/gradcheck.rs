//! Central finite-difference checks of the analytic loss gradients.
//!
//! Used by the `grad-check` subcommand. The checker only ever calls the
//! loss value, never its gradient, when building the numeric estimate.

use super::{
    bce_mask_loss, focal_heatmap_loss, offset_loss, refine_point_loss, wh_loss,
    FocalParams, LossResult,
};
use crate::error::Result;
use crate::rng::CounterRng;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Denominator floor for relative error, so exactly-zero gradients compare
/// on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Half-width of the excluded band around the smooth-L1 transition points.
pub const KINK_BAND: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Numeric gradient of `f` at `x` by central differences.
///
/// Uses the fourth-order stencil on steps `step` and `2 * step`; the
/// two-point rule leaves a truncation error near 1e-6 for log losses close
/// to 0 or 1, which swamps gradients that cross zero at soft targets.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |i: usize, d: f64| {
        let orig = probe[i];
        probe[i] = orig + d;
        let v = f(&probe);
        probe[i] = orig;
        v
    };
    (0..x.len())
        .map(|i| {
            let (p1, m1) = (at(i, step), at(i, -step));
            let (p2, m2) = (at(i, 2.0 * step), at(i, -2.0 * step));
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step)
        })
        .collect()
}

/// Largest relative error over entries not excluded by `skip`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], skip: impl Fn(usize) -> bool) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .filter(|(i, _)| !skip(*i))
        .map(|(_, (&a, &n))| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn near_kink(theta: f64) -> bool {
    (theta - 1.0).abs() < KINK_BAND || (theta + 1.0).abs() < KINK_BAND
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

pub const LOSS_NAMES: [&str; 5] = ["focal_heatmap", "wh", "offset", "bce_mask", "refine_point"];

fn probs(rng: &mut CounterRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(0.02, 0.98)).collect()
}

fn flatten(pairs: &[[f64; 2]]) -> Vec<f64> {
    pairs.iter().flat_map(|p| p.iter().copied()).collect()
}

fn unflatten(flat: &[f64]) -> Vec<[f64; 2]> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn check_one(
    analytic: LossResult,
    x: &[f64],
    value: impl Fn(&[f64]) -> f64,
    skip: impl Fn(usize) -> bool,
) -> f64 {
    let numeric = central_difference(value, x, FD_STEP);
    max_relative_error(&analytic.gradient, &numeric, skip)
}

/// Runs `instances` random cases per loss and reports the worst relative
/// gradient error for each.
pub fn run_suite(seed: u64, instances: usize, focal: &FocalParams) -> Result<Vec<GradCheckReport>> {
    let mut worst = [0.0f64; 5];
    for case in 0..instances {
        let mut rng = CounterRng::with_stream(seed, case as u64);

        // heatmap: soft background, a few exact centers
        let size = 36;
        let mut gt: Vec<f64> = (0..size).map(|_| rng.uniform(0.0, 0.999)).collect();
        let positives = 1 + rng.below(3) as usize;
        for _ in 0..positives {
            gt[rng.below(size as u64) as usize] = 1.0;
        }
        let pred = probs(&mut rng, size);
        let r = focal_heatmap_loss(&pred, &gt, focal)?;
        let e = check_one(
            r,
            &pred,
            |p| focal_heatmap_loss(p, &gt, focal).map(|r| r.value).unwrap_or(f64::NAN),
            |_| false,
        );
        worst[0] = worst[0].max(e);

        // width-height and offsets
        for (slot, spread, noise) in [(1usize, 30.0, 3.0), (2, 0.5, 1.5)] {
            let centers = 1 + rng.below(8) as usize;
            let gt: Vec<[f64; 2]> = (0..centers)
                .map(|_| {
                    let lo = if slot == 1 { 0.5 } else { -spread };
                    [rng.uniform(lo, spread), rng.uniform(lo, spread)]
                })
                .collect();
            let pred: Vec<[f64; 2]> = gt
                .iter()
                .map(|g| [g[0] + rng.uniform(-noise, noise), g[1] + rng.uniform(-noise, noise)])
                .collect();
            let loss = if slot == 1 { wh_loss } else { offset_loss };
            let flat_pred = flatten(&pred);
            let flat_gt = flatten(&gt);
            let r = loss(&pred, &gt)?;
            let e = check_one(
                r,
                &flat_pred,
                |p| loss(&unflatten(p), &gt).map(|r| r.value).unwrap_or(f64::NAN),
                |i| near_kink(flat_pred[i] - flat_gt[i]),
            );
            worst[slot] = worst[slot].max(e);
        }

        // mask BCE with binary targets
        let px = 16;
        let gt: Vec<f64> = (0..px).map(|_| (rng.below(2)) as f64).collect();
        let pred = probs(&mut rng, px);
        let r = bce_mask_loss(&pred, &gt)?;
        let e = check_one(
            r,
            &pred,
            |p| bce_mask_loss(p, &gt).map(|r| r.value).unwrap_or(f64::NAN),
            |_| false,
        );
        worst[3] = worst[3].max(e);

        // point refinement with soft labels
        let pts = 20;
        let soft: Vec<f64> = (0..pts).map(|_| rng.next_f64()).collect();
        let pred = probs(&mut rng, pts);
        let r = refine_point_loss(&pred, &soft)?;
        let e = check_one(
            r,
            &pred,
            |p| refine_point_loss(p, &soft).map(|r| r.value).unwrap_or(f64::NAN),
            |_| false,
        );
        worst[4] = worst[4].max(e);
    }
    Ok(LOSS_NAMES
        .iter()
        .zip(worst)
        .map(|(&loss, max_rel_err)| GradCheckReport {
            loss,
            instances,
            max_rel_err,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
        // exact for quartics
        let g = central_difference(|x| x[0].powi(4), &[1.5], 1e-2);
        assert!((g[0] - 13.5).abs() < 1e-9);
    }

    #[test]
    fn kink_band() {
        assert!(near_kink(1.0005));
        assert!(near_kink(-0.9995));
        assert!(!near_kink(0.5));
    }

    #[test]
    fn suite_passes_small_run() {
        let reports = run_suite(3, 10, &FocalParams::default()).unwrap();
        assert_eq!(reports.len(), 5);
        for r in reports {
            assert!(r.max_rel_err < 1e-4, "{} {}", r.loss, r.max_rel_err);
        }
    }
}
