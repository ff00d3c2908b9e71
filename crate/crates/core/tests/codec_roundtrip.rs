use csk_core::codec::{decode_boxes, encode_targets, gaussian_radius, DecodeParams};
use csk_core::BBox;
use csk_synth::oracle::{min_iou_within_radius, oracle_radius};
use proptest::prelude::*;

fn separated_boxes(h: usize, w: usize, n: u32) -> impl Strategy<Value = Vec<BBox>> {
    let margin = n as f64 / 2.0;
    prop::collection::vec(
        (margin..w as f64 - margin, margin..h as f64 - margin, 2.0f64..64.0, 2.0f64..64.0),
        1..20,
    )
    .prop_map(move |raw| {
        let mut kept: Vec<BBox> = Vec::new();
        for (cu, cv, bw, bh) in raw {
            let b = BBox::new(cu, cv, bw, bh).unwrap();
            if kept.iter().all(|o| (o.cu - cu).abs() > n as f64 || (o.cv - cv).abs() > n as f64) {
                kept.push(b);
            }
        }
        kept
    })
}

proptest! {
    #[test]
    fn decode_inverts_encode(boxes in separated_boxes(96, 128, 4)) {
        let t = encode_targets(&boxes, 96, 128, 4, 0.7).unwrap();
        prop_assert_eq!(t.collisions, 0);
        let dets = decode_boxes(&t.heatmap, &t.wh_map, &t.offset_map, &DecodeParams::default()).unwrap();
        prop_assert_eq!(dets.len(), boxes.len());
        for b in &boxes {
            let hit = dets.iter().any(|d| {
                d.score == 1.0
                    && (d.bbox.cu - b.cu).abs() < 1e-4
                    && (d.bbox.cv - b.cv).abs() < 1e-4
                    && (d.bbox.w - b.w).abs() < 1e-4
                    && (d.bbox.h - b.h).abs() < 1e-4
            });
            prop_assert!(hit, "box {:?} not recovered", b);
        }
    }

    #[test]
    fn heatmap_values_are_probabilities(boxes in separated_boxes(64, 64, 2)) {
        let t = encode_targets(&boxes, 64, 64, 2, 0.7).unwrap();
        prop_assert!(t.heatmap.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for c in &t.centers {
            prop_assert_eq!(t.heatmap.get(0, c.row, c.col), 1.0);
        }
    }
}

#[test]
fn radius_stays_near_brute_force_and_keeps_overlap() {
    for w in 2..=64u32 {
        for h in 2..=64u32 {
            let r = gaussian_radius(w as f64, h as f64, 0.7);
            assert!(r.abs_diff(oracle_radius(w, h, 0.7)) <= 2, "{w}x{h}");
            assert!(min_iou_within_radius(w, h, r) >= 0.5, "{w}x{h}");
        }
    }
}

#[test]
fn square_box_radius() {
    assert_eq!(gaussian_radius(24.0, 24.0, 0.7), 1);
    assert_eq!(oracle_radius(24, 24, 0.7), 2);
}

#[test]
fn shared_cell_counts_a_collision() {
    let boxes = [BBox::new(9.0, 9.0, 8.0, 8.0).unwrap(), BBox::new(9.4, 9.2, 6.0, 6.0).unwrap()];
    let t = encode_targets(&boxes, 32, 32, 4, 0.7).unwrap();
    assert_eq!(t.collisions, 1);
    assert_eq!(t.centers.len(), 1);
}
