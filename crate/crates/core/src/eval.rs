//! IOU, greedy detection matching, VOC-style average precision and the
//! leaf-segmentation metrics.
//!
//! Matching works on precomputed IOU tables ([`ImageIous`]) so that box and
//! mask evaluation share one code path. Detections are visited in
//! descending score order over the whole test set (ties by image id, then
//! detection index); each claims the unmatched ground truth of its image
//! with the highest IOU, provided that IOU is positive and at least the
//! threshold.

use std::cmp::Ordering;

use crate::codec::{BBox, Detection};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMask};

/// The ten IOU thresholds 0.50, 0.55, ..., 0.95.
pub fn sweep_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Axis-aligned intersection over union.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn binary_mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = a.overlap_counts(b)?;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Pixel IOU; 0 when both masks are empty.
pub fn mask_iou(a: &InstanceMask, b: &InstanceMask) -> Result<f64> {
    binary_mask_iou(&a.mask, &b.mask)
}

/// Detection scores and the detection-by-ground-truth IOU table of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageIous {
    pub image_id: String,
    pub scores: Vec<f64>,
    pub num_gt: usize,
    /// Row-major `scores.len() x num_gt`.
    pub iou: Vec<f64>,
}

impl ImageIous {
    pub fn new(image_id: impl Into<String>, scores: Vec<f64>, num_gt: usize, iou: Vec<f64>) -> Result<Self> {
        if iou.len() != scores.len() * num_gt {
            return Err(Error::Shape(format!(
                "IOU table has {} entries, expected {} x {}",
                iou.len(),
                scores.len(),
                num_gt
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::usage(format!("detection score {s} is not finite")));
        }
        Ok(Self {
            image_id: image_id.into(),
            scores,
            num_gt,
            iou,
        })
    }

    pub fn from_boxes(image_id: impl Into<String>, dets: &[Detection], gts: &[BBox]) -> Result<Self> {
        let iou = dets
            .iter()
            .flat_map(|d| gts.iter().map(move |g| box_iou(&d.bbox, g)))
            .collect();
        Self::new(image_id, dets.iter().map(|d| d.score).collect(), gts.len(), iou)
    }

    pub fn from_masks(image_id: impl Into<String>, dets: &[InstanceMask], gts: &[BinaryMask]) -> Result<Self> {
        let mut iou = Vec::with_capacity(dets.len() * gts.len());
        for d in dets {
            for g in gts {
                iou.push(binary_mask_iou(&d.mask, g)?);
            }
        }
        Self::new(
            image_id,
            dets.iter().map(|d| d.detection.score).collect(),
            gts.len(),
            iou,
        )
    }

    pub fn num_detections(&self) -> usize {
        self.scores.len()
    }

    #[inline]
    pub fn get(&self, det: usize, gt: usize) -> f64 {
        self.iou[det * self.num_gt + gt]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedDetection {
    pub image_id: String,
    pub det: usize,
    pub score: f64,
    /// Index of the claimed ground truth, if any.
    pub gt: Option<usize>,
}

impl MatchedDetection {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

/// Outcome of matching at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub alpha: f64,
    /// In evaluation order.
    pub detections: Vec<MatchedDetection>,
    /// Per image (in input order), which ground truths were claimed.
    pub gt_matched: Vec<(String, Vec<bool>)>,
}

fn evaluation_order(a: &MatchedDetection, b: &MatchedDetection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| a.det.cmp(&b.det))
}

impl MatchResult {
    pub fn num_gt(&self) -> usize {
        self.gt_matched.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.is_tp()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.num_gt() - self.true_positives()
    }

    /// Pools results from disjoint image shards matched at the same threshold.
    pub fn merge(mut self, other: MatchResult) -> Result<MatchResult> {
        if self.alpha != other.alpha {
            return Err(Error::usage(format!(
                "cannot merge matches at thresholds {} and {}",
                self.alpha, other.alpha
            )));
        }
        self.detections.extend(other.detections);
        self.detections.sort_by(evaluation_order);
        self.gt_matched.extend(other.gt_matched);
        Ok(self)
    }
}

pub fn match_detections(images: &[ImageIous], alpha: f64) -> MatchResult {
    let mut order: Vec<MatchedDetection> = images
        .iter()
        .flat_map(|img| {
            img.scores.iter().enumerate().map(|(det, &score)| MatchedDetection {
                image_id: img.image_id.clone(),
                det,
                score,
                gt: None,
            })
        })
        .collect();
    order.sort_by(evaluation_order);

    let by_id: std::collections::HashMap<&str, usize> = images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.image_id.as_str(), i))
        .collect();
    let mut claimed: Vec<Vec<bool>> = images.iter().map(|img| vec![false; img.num_gt]).collect();

    for d in &mut order {
        let i = by_id[d.image_id.as_str()];
        let img = &images[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, _) in claimed[i].iter().enumerate().filter(|(_, taken)| !**taken) {
            let iou = img.get(d.det, g);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou > 0.0 && iou >= alpha {
                claimed[i][g] = true;
                d.gt = Some(g);
            }
        }
    }

    MatchResult {
        alpha,
        detections: order,
        gt_matched: images.iter().map(|img| img.image_id.clone()).zip(claimed).collect(),
    }
}

/// Cumulative precision and recall after each detection in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn pr_curve(matches: &MatchResult) -> Result<PRCurve> {
    let num_gt = matches.num_gt();
    if num_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(matches.detections.len());
    let mut precision = Vec::with_capacity(matches.detections.len());
    for (i, d) in matches.detections.iter().enumerate() {
        tp += usize::from(d.is_tp());
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    Ok(PRCurve {
        recall,
        precision,
        tp,
        fp: matches.detections.len() - tp,
        fn_: num_gt - tp,
    })
}

/// All-point interpolated AP: area under the right-to-left running maximum
/// of precision over recall.
pub fn ap_at(matches: &MatchResult) -> Result<f64> {
    let curve = pr_curve(matches)?;
    let mut envelope = curve.precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&r, &p) in curve.recall.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct APResult {
    pub thresholds: [f64; 10],
    pub ap: [f64; 10],
    pub mean: f64,
}

impl APResult {
    pub fn at(&self, alpha: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - alpha).abs() < 1e-12)
            .map(|i| self.ap[i])
    }
}

pub fn ap_sweep(images: &[ImageIous]) -> Result<APResult> {
    let thresholds = sweep_thresholds();
    let mut ap = [0.0; 10];
    for (slot, &alpha) in ap.iter_mut().zip(&thresholds) {
        *slot = ap_at(&match_detections(images, alpha))?;
    }
    let mean = ap.iter().sum::<f64>() / ap.len() as f64;
    Ok(APResult {
        thresholds,
        ap,
        mean,
    })
}

/// Dice coefficient; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, _) = a.overlap_counts(b)?;
    let total = a.area() + b.area();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Mean over `from` of the best Dice against any mask in `to`.
/// 1 when both sets are empty, 0 when exactly one is.
pub fn directional_best_dice(from: &[BinaryMask], to: &[BinaryMask]) -> Result<f64> {
    match (from.is_empty(), to.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut sum = 0.0;
    for a in from {
        let mut best = 0.0f64;
        for b in to {
            best = best.max(dice(a, b)?);
        }
        sum += best;
    }
    Ok(sum / from.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafMetrics {
    /// Mean of the two directional values below.
    pub best_dice: f64,
    pub best_dice_gt_to_pred: f64,
    pub best_dice_pred_to_gt: f64,
    pub diff_fg: i64,
    pub abs_diff_fg: u64,
    pub fg_bg_dice: f64,
}

fn union_of(masks: &[BinaryMask]) -> Result<Option<BinaryMask>> {
    let Some(first) = masks.first() else {
        return Ok(None);
    };
    let mut acc = first.clone();
    for m in &masks[1..] {
        acc.union_with(m)?;
    }
    Ok(Some(acc))
}

pub fn leaf_metrics(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<LeafMetrics> {
    let gt_to_pred = directional_best_dice(gt, pred)?;
    let pred_to_gt = directional_best_dice(pred, gt)?;
    let fg_bg_dice = match (union_of(pred)?, union_of(gt)?) {
        (Some(p), Some(g)) => dice(&p, &g)?,
        (None, None) => 1.0,
        (Some(m), None) | (None, Some(m)) => {
            if m.is_empty() {
                1.0
            } else {
                0.0
            }
        }
    };
    let diff_fg = pred.len() as i64 - gt.len() as i64;
    Ok(LeafMetrics {
        best_dice: 0.5 * (gt_to_pred + pred_to_gt),
        best_dice_gt_to_pred: gt_to_pred,
        best_dice_pred_to_gt: pred_to_gt,
        diff_fg,
        abs_diff_fg: diff_fg.unsigned_abs(),
        fg_bg_dice,
    })
}
