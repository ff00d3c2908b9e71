//! Slow reference implementations.
//!
//! Everything here is written from the definitions, with plain loops and no
//! calls into the `csk-core` functions it is compared against. Only the
//! data types (`BBox`, `BinaryMask`, `FeatureMap`) are shared.

use std::cmp::Ordering;

use csk_core::rng::CounterRng;
use csk_core::{BBox, BinaryMask, FeatureMap};

fn corners(b: &BBox) -> (f64, f64, f64, f64) {
    (b.cu - 0.5 * b.w, b.cv - 0.5 * b.h, b.cu + 0.5 * b.w, b.cv + 0.5 * b.h)
}

pub fn oracle_box_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(b);
    let ix = f64::max(0.0, ax1.min(bx1) - ax0.max(bx0));
    let iy = f64::max(0.0, ay1.min(by1) - ay0.max(by0));
    let inter = ix * iy;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn shifted_iou(w: f64, h: f64, du: f64, dv: f64) -> f64 {
    let a = BBox { cu: 0.0, cv: 0.0, w, h };
    let b = BBox { cu: du, cv: dv, w, h };
    oracle_box_iou(&a, &b)
}

/// Smallest IOU between a `w x h` box and its copies shifted by integer
/// offsets with `max(|du|, |dv|) <= r`.
pub fn min_iou_within_radius(w: u32, h: u32, r: u32) -> f64 {
    let r = r as i64;
    let mut worst = 1.0f64;
    for du in -r..=r {
        for dv in -r..=r {
            worst = worst.min(shifted_iou(w as f64, h as f64, du as f64, dv as f64));
        }
    }
    worst
}

/// Largest integer `r` such that every integer shift within Chebyshev
/// distance `r` keeps the IOU at or above `min_iou`. Exhaustive: each new
/// ring of shifts is checked explicitly.
pub fn oracle_radius(w: u32, h: u32, min_iou: f64) -> u32 {
    let (wf, hf) = (w as f64, h as f64);
    let mut r: i64 = 0;
    loop {
        let next = r + 1;
        let mut ring_ok = true;
        'ring: for du in -next..=next {
            for dv in -next..=next {
                if du.abs().max(dv.abs()) != next {
                    continue;
                }
                if shifted_iou(wf, hf, du as f64, dv as f64) < min_iou {
                    ring_ok = false;
                    break 'ring;
                }
            }
        }
        if !ring_ok {
            return r as u32;
        }
        r = next;
    }
}

/// Four-weight bilinear interpolation with edge clamping.
pub fn oracle_bilinear(map: &FeatureMap, u: f64, v: f64, channel: usize) -> f64 {
    let (h, w) = (map.height() as i64, map.width() as i64);
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let at = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, w - 1) as usize;
        let yc = y.clamp(0, h - 1) as usize;
        map.get(channel, yc, xc) as f64
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// 3x3 max-pool suppression: a value survives when no in-bounds neighbor
/// is strictly larger.
pub fn oracle_nms(map: &FeatureMap) -> Vec<f32> {
    let (h, w) = (map.height() as i64, map.width() as i64);
    let mut out = Vec::with_capacity(map.data().len());
    for c in 0..map.channels() {
        for r in 0..h {
            for col in 0..w {
                let v = map.get(c, r as usize, col as usize);
                let mut peak = true;
                for dr in -1..=1i64 {
                    for dc in -1..=1i64 {
                        let (rr, cc) = (r + dr, col + dc);
                        if rr < 0 || cc < 0 || rr >= h || cc >= w {
                            continue;
                        }
                        if map.get(c, rr as usize, cc as usize) > v {
                            peak = false;
                        }
                    }
                }
                out.push(if peak { v } else { 0.0 });
            }
        }
    }
    out
}

/// Pixel scan over two equally sized masks.
pub fn oracle_mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (x, y) = (a.get(r, c), b.get(r, c));
            inter += (x && y) as u64;
            union += (x || y) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn oracle_dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0u64;
    let mut total = 0u64;
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (x, y) = (a.get(r, c), b.get(r, c));
            inter += (x && y) as u64;
            total += x as u64 + y as u64;
        }
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Symmetric best Dice from the full pairwise Dice table.
pub fn oracle_best_dice(pred: &[BinaryMask], gt: &[BinaryMask]) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let table: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| pred.iter().map(|p| oracle_dice(g, p)).collect())
        .collect();
    let gt_side: f64 = table
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .sum::<f64>()
        / gt.len() as f64;
    let pred_side: f64 = (0..pred.len())
        .map(|j| table.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / pred.len() as f64;
    0.5 * (gt_side + pred_side)
}

/// Bilinear splat of `(u, v, value)` samples; samples outside the raster
/// vote for the clamped neighbor. Returns `(accum, weight)` row-major.
pub fn oracle_vote_paste(samples: &[(f64, f64, f64)], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut accum = vec![0.0; h * w];
    let mut weight = vec![0.0; h * w];
    for &(u, v, value) in samples {
        let (x0, y0) = (u.floor(), v.floor());
        let (fx, fy) = (u - x0, v - y0);
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                let x = (x0 as i64 + dx).clamp(0, w as i64 - 1) as usize;
                let y = (y0 as i64 + dy).clamp(0, h as i64 - 1) as usize;
                accum[y * w + x] += value * wx * wy;
                weight[y * w + x] += wx * wy;
            }
        }
    }
    (accum, weight)
}

/// One image of an AP micro-case.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroImage {
    pub id: String,
    pub dets: Vec<(BBox, f64)>,
    pub gts: Vec<BBox>,
}

/// Reference AP at threshold `alpha`, or `None` without ground truth.
///
/// Detections are ranked by score (ties: image id, then detection index)
/// and each one in turn takes the unclaimed ground truth of its image with
/// the largest positive IOU if that IOU reaches `alpha`. With `G` ground
/// truths, each true positive at rank `k` adds `1/G` times the best
/// precision achieved at any rank `>= k`.
pub fn oracle_ap(images: &[MicroImage], alpha: f64) -> Option<f64> {
    let total_gt: usize = images.iter().map(|im| im.gts.len()).sum();
    if total_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, usize)> = Vec::new();
    for (i, im) in images.iter().enumerate() {
        for d in 0..im.dets.len() {
            ranked.push((i, d));
        }
    }
    ranked.sort_by(|&(ia, da), &(ib, db)| {
        let sa = images[ia].dets[da].1;
        let sb = images[ib].dets[db].1;
        match sb.partial_cmp(&sa).unwrap() {
            Ordering::Equal => images[ia].id.cmp(&images[ib].id).then(da.cmp(&db)),
            o => o,
        }
    });

    let mut taken: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gts.len()]).collect();
    let mut hits = Vec::with_capacity(ranked.len());
    for &(i, d) in &ranked {
        let det_box = images[i].dets[d].0;
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for (g, gt_box) in images[i].gts.iter().enumerate() {
            if taken[i][g] {
                continue;
            }
            let iou = oracle_box_iou(&det_box, gt_box);
            if iou > best_iou {
                best_iou = iou;
                best = Some(g);
            }
        }
        let hit = match best {
            Some(g) if best_iou > 0.0 && best_iou >= alpha => {
                taken[i][g] = true;
                true
            }
            _ => false,
        };
        hits.push(hit);
    }

    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0.0;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1.0;
        }
        precision.push(tp / (k + 1) as f64);
    }
    let mut ap = 0.0;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            let best_after = precision[k..].iter().cloned().fold(0.0, f64::max);
            ap += best_after / total_gt as f64;
        }
    }
    Some(ap)
}

/// Random case with at most `max_dets` detections over one to three images.
/// Scores come from a coarse grid so that ties occur; some detections are
/// jittered copies of ground truth so that high IOUs occur.
pub fn random_micro_case(rng: &mut CounterRng, max_dets: usize) -> Vec<MicroImage> {
    let n_images = 1 + rng.below(3) as usize;
    let mut images: Vec<MicroImage> = (0..n_images)
        .map(|i| {
            let n_gt = rng.below(4) as usize;
            let gts = (0..n_gt)
                .map(|_| BBox {
                    cu: rng.uniform(5.0, 25.0),
                    cv: rng.uniform(5.0, 25.0),
                    w: rng.uniform(3.0, 12.0),
                    h: rng.uniform(3.0, 12.0),
                })
                .collect();
            MicroImage {
                id: format!("img{i}"),
                dets: Vec::new(),
                gts,
            }
        })
        .collect();
    if images.iter().all(|im| im.gts.is_empty()) {
        images[0].gts.push(BBox {
            cu: 10.0,
            cv: 10.0,
            w: 6.0,
            h: 6.0,
        });
    }
    let n_dets = rng.below(max_dets as u64 + 1) as usize;
    for _ in 0..n_dets {
        let i = rng.below(n_images as u64) as usize;
        let im = &mut images[i];
        let bbox = if !im.gts.is_empty() && rng.next_f64() < 0.7 {
            let g = im.gts[rng.below(im.gts.len() as u64) as usize];
            let j = rng.uniform(0.0, 0.35);
            BBox {
                cu: g.cu + rng.uniform(-j, j) * g.w,
                cv: g.cv + rng.uniform(-j, j) * g.h,
                w: g.w * rng.uniform(1.0 - j, 1.0 + j),
                h: g.h * rng.uniform(1.0 - j, 1.0 + j),
            }
        } else {
            BBox {
                cu: rng.uniform(5.0, 25.0),
                cv: rng.uniform(5.0, 25.0),
                w: rng.uniform(3.0, 12.0),
                h: rng.uniform(3.0, 12.0),
            }
        };
        let score = (1 + rng.below(10)) as f64 / 10.0;
        im.dets.push((bbox, score));
    }
    images
}
